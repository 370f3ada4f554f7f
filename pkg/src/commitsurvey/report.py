"""Single-file static HTML report over an analysis output directory."""

from __future__ import annotations

import csv
import json
from html import escape
from pathlib import Path

from .products import MANIFEST_NAME

REPORT_NAME = "report.html"
MAX_TABLE_ROWS = 40

_CSS = """
body { font-family: Helvetica, Arial, sans-serif; margin: 2em auto; max-width: 1100px; }
table { border-collapse: collapse; margin: 0.5em 0 1.5em; font-size: 12px; }
th, td { border: 1px solid #ccc; padding: 2px 6px; text-align: left; }
section { margin-bottom: 2.5em; }
.figure svg { max-width: 100%; height: auto; }
"""


def _table(path: Path) -> str:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return ""
    head, body = rows[0], rows[1:]
    out = ["<table>", "<tr>" + "".join(f"<th>{escape(c)}</th>" for c in head) + "</tr>"]
    for r in body[:MAX_TABLE_ROWS]:
        out.append("<tr>" + "".join(f"<td>{escape(c)}</td>" for c in r) + "</tr>")
    out.append("</table>")
    if len(body) > MAX_TABLE_ROWS:
        out.append(f"<p>{len(body) - MAX_TABLE_ROWS} more rows in "
                   f"<code>{escape(path.name)}</code>.</p>")
    return "\n".join(out)


def _svg(path: Path) -> str:
    text = path.read_text(encoding="utf-8")
    if text.startswith("<?xml"):
        text = text.split("\n", 1)[1]
    return f'<div class="figure" data-file="{escape(path.name)}">\n{text}</div>'


def _json_block(path: Path) -> str:
    data = json.loads(path.read_text(encoding="utf-8"))
    return f"<pre>{escape(json.dumps(data, indent=2, sort_keys=True))}</pre>"


def _validation_section(out: Path) -> list[str]:
    path = out / "validation_report.json"
    if not path.exists():
        return []
    rep = json.loads(path.read_text(encoding="utf-8"))
    lines = ["<section>", "<h2>Validation</h2>", "<table>",
             "<tr><th>check</th><th>count a</th><th>count b</th><th>total</th>"
             "<th>rate</th><th>threshold</th><th>passed</th></tr>"]
    for c in rep.get("checks", []):
        lines.append(f"<tr><td>{escape(c['check_name'])}</td><td>{c['count_a']}</td>"
                     f"<td>{c['count_b']}</td><td>{c['total']}</td>"
                     f"<td>{c['discrepancy_rate']:.6f}</td><td>{c['threshold']}</td>"
                     f"<td>{'yes' if c['passed'] else 'no'}</td></tr>")
    lines += ["</table>", f"<p>Flagged rows: {len(rep.get('row_flags', []))}; "
              f"failed rows: {len(rep.get('failed_rows', []))}.</p>", "</section>"]
    return lines


def build_report(out_dir) -> Path:
    """Write ``report.html`` into ``out_dir`` from its manifest; returns the path."""
    out = Path(out_dir)
    manifest_path = out / MANIFEST_NAME
    manifest = (json.loads(manifest_path.read_text(encoding="utf-8"))
                if manifest_path.exists() else {"products": []})
    parts = ["<!DOCTYPE html>", '<html lang="en">', "<head>", '<meta charset="utf-8">',
             "<title>Commit survey report</title>", f"<style>{_CSS}</style>", "</head>",
             "<body>", "<h1>Commit survey report</h1>"]
    if "schema_id" in manifest:
        parts.append(f"<p>Survey <code>{escape(manifest['schema_id'])}</code>, "
                     f"{manifest.get('ok_rows', 0)} answered of {manifest.get('rows', 0)} "
                     "commits.</p>")
    parts += _validation_section(out)
    if not manifest["products"]:
        parts.append("<p>No analysis products.</p>")
    for p in manifest["products"]:
        parts += ["<section>", f'<h2 id="{escape(p["id"])}">{escape(p["title"])}</h2>',
                  f"<p><code>{escape(p['id'])}</code></p>"]
        if p.get("data"):
            parts.append(f"<pre>{escape(json.dumps(p['data'], indent=2, sort_keys=True))}</pre>")
        for name in p["files"]:
            path = out / name
            if not path.exists():
                parts.append(f"<p>missing file {escape(name)}</p>")
            elif name.endswith(".svg"):
                parts.append(_svg(path))
            elif name.endswith(".csv"):
                parts.append(f"<h3>{escape(name)}</h3>")
                parts.append(_table(path))
            elif name.endswith(".json"):
                parts.append(f"<h3>{escape(name)}</h3>")
                parts.append(_json_block(path))
        parts.append("</section>")
    parts += ["</body>", "</html>"]
    target = out / REPORT_NAME
    target.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return target
