"""Generic page templates: the summary/detail shell every app renders into.

Scripts only produce fragments; these templates provide the surrounding
document, navigation, and the one bundled stylesheet whose class names
scripts may rely on.
"""

from __future__ import annotations

from html import escape

STYLESHEET = """\
:root { --ink: #1c2430; --paper: #f7f6f2; --accent: #27568c; --line: #d8d4ca; }
* { box-sizing: border-box; }
body { margin: 0; font: 16px/1.5 system-ui, sans-serif; color: var(--ink);
       background: var(--paper); }
header.site { background: var(--accent); color: #fff; padding: 0.6rem 1rem;
              display: flex; gap: 1.2rem; align-items: baseline; }
header.site a { color: #fff; text-decoration: none; font-weight: 600; }
header.site .node { margin-left: auto; font-size: 0.8rem; opacity: 0.8; }
main { max-width: 52rem; margin: 1rem auto; padding: 0 1rem; }
h1 { font-size: 1.4rem; }
ul.services, ul.summaries, ul.people { list-style: none; padding: 0; }
ul.services li { display: flex; gap: 0.8rem; align-items: center;
                 border-bottom: 1px solid var(--line); padding: 0.5rem 0; }
ul.services img.icon { width: 40px; height: 40px; border-radius: 8px; }
.tag { background: var(--accent); color: #fff; border-radius: 1rem;
       padding: 0.05rem 0.7rem; font-size: 0.85rem; }
.grid { display: flex; flex-wrap: wrap; gap: 0.8rem; }
.photo-card { margin: 0; }
.photo-card img.thumb, img.thumb { max-width: 160px; border-radius: 6px;
                                   border: 1px solid var(--line); }
.photo-full img { max-width: 100%; border-radius: 6px; }
article.post, article.person-record { background: #fff; border: 1px solid var(--line);
       border-radius: 8px; padding: 0.7rem 1rem; margin: 0.5rem 0; }
details.topic { margin: 0.6rem 0; }
ol.posts { margin: 0.3rem 0 0.3rem 1rem; padding: 0; list-style: none; }
.badge { padding: 0.1rem 0.6rem; border-radius: 1rem; font-size: 0.8rem; }
.badge.verified { background: #dcefdc; color: #1d5a1d; }
.badge.unverified { background: #f4ecd2; color: #6b5816; }
.badge.invalid { background: #f6d8d4; color: #7c1d10; }
form.generated label { display: block; margin: 0.7rem 0 0.2rem; font-weight: 600; }
form.generated input[type=text], form.generated textarea {
    width: 100%; padding: 0.4rem; border: 1px solid var(--line); border-radius: 4px; }
form.generated textarea { min-height: 6rem; }
.field-error { color: #8c2e1e; font-size: 0.85rem; }
.empty { color: #777; font-style: italic; }
button { background: var(--accent); color: #fff; border: 0; border-radius: 4px;
         padding: 0.45rem 1.1rem; margin-top: 0.8rem; cursor: pointer; }
footer.meta { color: #666; font-size: 0.8rem; margin-top: 2rem;
              border-top: 1px solid var(--line); padding-top: 0.5rem; }
.download { font-weight: 600; }
#live-banner { position: fixed; bottom: 1rem; right: 1rem; background: #fff;
               border: 1px solid var(--line); border-radius: 6px;
               padding: 0.4rem 0.9rem; box-shadow: 0 2px 8px rgba(0,0,0,0.12); }
"""


def page(title: str, body: str, node_name: str = "", with_ui: bool = False) -> str:
    script = '<script src="/static/app.js" defer></script>' if with_ui else ""
    return f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8"/>
<meta name="viewport" content="width=device-width, initial-scale=1"/>
<title>{escape(title)}</title>
<link rel="stylesheet" href="/static/style.css"/>
{script}
</head>
<body>
<header class="site">
  <a href="/services">Services</a>
  <a href="/apps">Apps</a>
  <span class="node">{escape(node_name)}</span>
</header>
<main id="main">
{body}
</main>
</body>
</html>"""


def form_page(
    action: str,
    specs,
    values: dict,
    errors: dict,
    title: str,
    multipart: bool,
) -> str:
    rows = []
    for spec in specs:
        error = errors.get(spec.name, "")
        error_html = f'<div class="field-error">{escape(error)}</div>' if error else ""
        current = values.get(spec.name, "")
        if isinstance(current, bytes):
            current = ""
        required = " required" if spec.required else ""
        label = f'<label for="f-{escape(spec.name)}">{escape(spec.label)}</label>'
        if spec.ftype == "textarea":
            widget = (
                f'<textarea id="f-{escape(spec.name)}" name="{escape(spec.name)}"'
                f"{required}>{escape(str(current))}</textarea>"
            )
        elif spec.ftype == "file":
            widget = f'<input id="f-{escape(spec.name)}" type="file" name="{escape(spec.name)}"{required}/>'
        elif spec.ftype == "hidden":
            widget = f'<input type="hidden" name="{escape(spec.name)}" value="{escape(str(current))}"/>'
            rows.append(widget)
            continue
        else:
            widget = (
                f'<input id="f-{escape(spec.name)}" type="text" name="{escape(spec.name)}"'
                f' value="{escape(str(current))}"{required}/>'
            )
        rows.append(f"<div>{label}{widget}{error_html}</div>")
    enctype = ' enctype="multipart/form-data"' if multipart else ""
    return (
        f"<h1>{escape(title)}</h1>"
        f'<form class="generated" method="post" action="{escape(action)}"{enctype}>'
        + "".join(rows)
        + '<button type="submit">Send</button></form>'
    )
