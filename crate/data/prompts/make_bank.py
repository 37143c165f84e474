"""Writes the hand-written few-shot example bank (bank.jsonl)."""

import json
from pathlib import Path

E = []


def add(language, cwe, snippet):
    E.append({"language": language, "label": "vulnerable" if cwe else "clean",
              **({"cwe": cwe} if cwe else {}), "snippet": snippet, "provenance": "hand-written"})


add("javascript", "CWE-89", "app.get('/user', (req, res) => {\n  db.query(\"SELECT * FROM users WHERE name = '\" + req.query.name + \"'\", (e, r) => res.json(r));\n});")
add("javascript", "CWE-79", "app.get('/hello', (req, res) => {\n  res.send('<h1>Hello ' + req.query.name + '</h1>');\n});")
add("javascript", "CWE-94", "app.post('/run', (req, res) => {\n  res.json({ value: eval(req.body.code) });\n});")
add("javascript", "CWE-601", "app.get('/out', (req, res) => {\n  res.redirect(req.query.url);\n});")
add("javascript", None, "function sum(values) {\n  return values.reduce((a, b) => a + b, 0);\n}")
add("javascript", None, "app.get('/user', (req, res) => {\n  db.query('SELECT * FROM users WHERE id = ?', [req.query.id], (e, r) => res.json(r));\n});")
add("javascript", None, "const hash = await bcrypt.hash(password, 12);\nawait users.update(id, { hash });")
add("javascript", None, "function debounce(fn, ms) {\n  let t;\n  return (...args) => {\n    clearTimeout(t);\n    t = setTimeout(() => fn(...args), ms);\n  };\n}")

add("python", "CWE-89", "def find(cursor, name):\n    cursor.execute(\"SELECT * FROM users WHERE name = '%s'\" % name)\n    return cursor.fetchall()")
add("python", "CWE-78", "import os\n\ndef ping(host):\n    os.system(\"ping -c 1 \" + host)")
add("python", "CWE-22", "def read(request):\n    with open(\"/srv/files/\" + request.args[\"name\"]) as f:\n        return f.read()")
add("python", "CWE-798", "import psycopg2\n\nconn = psycopg2.connect(host=\"db\", user=\"admin\", password=\"admin123\")")
add("python", None, "def mean(xs):\n    return sum(xs) / len(xs) if xs else 0.0")
add("python", None, "def find(cursor, name):\n    cursor.execute(\"SELECT * FROM users WHERE name = %s\", (name,))\n    return cursor.fetchall()")
add("python", None, "import subprocess\n\ndef ping(host):\n    subprocess.run([\"ping\", \"-c\", \"1\", host], check=True)")
add("python", None, "import os\n\nconn_url = os.environ[\"DATABASE_URL\"]")

add("java", "CWE-89", "String sql = \"SELECT * FROM users WHERE name = '\" + name + \"'\";\nResultSet rs = stmt.executeQuery(sql);")
add("java", "CWE-327", "Cipher cipher = Cipher.getInstance(\"DES/ECB/PKCS5Padding\");\ncipher.init(Cipher.ENCRYPT_MODE, key);")
add("java", "CWE-22", "File f = new File(\"/data/\" + request.getParameter(\"file\"));\nreturn Files.readAllBytes(f.toPath());")
add("java", "CWE-502", "ObjectInputStream in = new ObjectInputStream(socket.getInputStream());\nObject msg = in.readObject();")
add("java", None, "public int max(int[] xs) {\n    int m = Integer.MIN_VALUE;\n    for (int x : xs) m = Math.max(m, x);\n    return m;\n}")
add("java", None, "PreparedStatement ps = conn.prepareStatement(\"SELECT * FROM users WHERE name = ?\");\nps.setString(1, name);\nResultSet rs = ps.executeQuery();")
add("java", None, "Cipher cipher = Cipher.getInstance(\"AES/GCM/NoPadding\");\ncipher.init(Cipher.ENCRYPT_MODE, key, new GCMParameterSpec(128, iv));")
add("java", None, "List<String> names = users.stream().map(User::getName).sorted().collect(Collectors.toList());")

out = Path(__file__).resolve().parent / "bank.jsonl"
out.write_text("".join(json.dumps(e) + "\n" for e in E))
