"""Writes prompt goldens straight from the template definitions.

Few-shot goldens use golden_bank.jsonl, which holds one vulnerable and one
clean entry per language, so with k = 2 the selection order is fixed
(vulnerable first) regardless of the shuffle seed.

    python3 data/prompts/generate.py
"""

import json
from pathlib import Path

HERE = Path(__file__).resolve().parent
OUT = HERE / "golden"

COMMENT = {"javascript": "//", "python": "#", "java": "//"}
DISPLAY = {"javascript": "JavaScript", "python": "Python", "java": "Java"}
STYLES = {
    "codex-zero": ("codex", "find security vulnerabilities"),
    "text-zero": ("text", "detect any security risks"),
    "codex-few": ("codex", "find security vulnerabilities"),
    "text-few": ("text", "detect any security risks"),
}
TARGET = {
    "javascript": "app.get('/q', (req, res) => {\n  db.query(\"SELECT * FROM t WHERE id = \" + req.query.id",
    "python": "def lookup(cursor, request):\n    key = request.args.get(\"key\")\n    cursor.execute(\"SELECT * FROM t WHERE k = '\" + key",
    "java": "String id = request.getParameter(\"id\");\nStatement st = conn.createStatement();\nst.executeQuery(\"SELECT * FROM t WHERE id = \" + id",
}
GOLDEN_BANK = [
    ("javascript", "CWE-79", "res.send('<p>' + req.query.msg + '</p>');"),
    ("javascript", None, "const total = items.reduce((a, i) => a + i.price, 0);"),
    ("python", "CWE-78", "os.system(\"ls \" + path)"),
    ("python", None, "names = sorted(u.name for u in users)"),
    ("java", "CWE-89", "stmt.executeQuery(\"SELECT * FROM u WHERE n = '\" + n + \"'\");"),
    ("java", None, "int size = list.size();"),
]
CWE_NAMES = {"CWE-89": "SQL Injection", "CWE-22": "Path Injection", "CWE-798": "Hardcoded Credentials"}


def block(kind, phrase, lang, snippet):
    if kind == "codex":
        c = COMMENT[lang]
        return f"{c} {phrase}\n{c} Code snippet\n{snippet}\n{c} Answer (Yes/No, explanation):"
    return f"{phrase}\n{snippet}\nAnswer (Yes/No):"


def main():
    OUT.mkdir(exist_ok=True)
    with open(HERE / "golden_bank.jsonl", "w") as f:
        for lang, cwe, snippet in GOLDEN_BANK:
            entry = {"language": lang, "label": "vulnerable" if cwe else "clean"}
            if cwe:
                entry["cwe"] = cwe
            entry.update({"snippet": snippet, "provenance": "golden"})
            f.write(json.dumps(entry) + "\n")
    for style, (kind, phrase) in STYLES.items():
        for lang in COMMENT:
            (OUT / f"{style}.zero.{lang}.txt").write_text(block(kind, phrase, lang, TARGET[lang]))
            examples = [e for e in GOLDEN_BANK if e[0] == lang]
            examples.sort(key=lambda e: e[1] is None)
            parts = [block(kind, phrase, lang, s) + (" Yes" if cwe else " No") for _, cwe, s in examples]
            parts.append(block(kind, phrase, lang, TARGET[lang]))
            (OUT / f"{style}.few.{lang}.txt").write_text("\n\n".join(parts))
    for lang in COMMENT:
        (OUT / f"mining.codex.{lang}.txt").write_text(f"{COMMENT[lang]} We run CodeQL security queries in order to ")
        reqs = [
            f"Provide an example in {DISPLAY[lang]} of a code snippet that contains {CWE_NAMES[c]} security "
            "vulnerability. Output the code only, do not include text:"
            for c in CWE_NAMES
        ]
        reqs.append(f"Provide an example in {DISPLAY[lang]} of a code snippet. Output the code only, do not include text:")
        (OUT / f"example-requests.{lang}.txt").write_text("\n".join(reqs) + "\n")
    (OUT / "mining.text.txt").write_text("What would you accomplish by running CodeQL security queries?")
    (OUT / "targets.json").write_text(json.dumps(TARGET, indent=2) + "\n")


if __name__ == "__main__":
    main()
