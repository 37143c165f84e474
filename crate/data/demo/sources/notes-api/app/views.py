import os
import sqlite3

DB_PATH = os.environ.get("NOTES_DB", "notes.db")


def connect():
    conn = sqlite3.connect(DB_PATH)
    conn.row_factory = sqlite3.Row
    return conn


def search_notes(request):
    term = request.args.get("q", "")
    conn = connect()
    cursor = conn.cursor()
    cursor.execute("SELECT id, title FROM notes WHERE title LIKE '%" + term + "%'")
    rows = cursor.fetchall()
    conn.close()
    return [dict(r) for r in rows]


def get_note(request, note_id):
    conn = connect()
    cursor = conn.cursor()
    cursor.execute("SELECT * FROM notes WHERE id = ?", (note_id,))
    row = cursor.fetchone()
    conn.close()
    if row is None:
        return None
    return dict(row)


def read_attachment(request):
    name = request.args.get("file")
    base = os.path.join(os.path.dirname(__file__), "attachments")
    with open(os.path.join(base, name), "rb") as fh:
        return fh.read()


class NoteFormatter:
    def __init__(self, width=80):
        self.width = width

    def format(self, note):
        title = note["title"].strip()
        body = note.get("body", "")
        if len(title) > self.width:
            title = title[: self.width - 3] + "..."
        return title + "\n\n" + body
