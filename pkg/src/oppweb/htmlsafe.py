"""Allow-list HTML sanitizer for script-emitted fragments.

Every fragment a transformation emits passes through here before storage
or delivery, so a hostile script cannot smuggle executable constructs to
browsers: unknown elements are dropped (their text content kept), every
attribute outside the allow-list is stripped, and URL attributes must be
relative or plain http(s).
"""

from __future__ import annotations

from html import escape
from html.parser import HTMLParser

ALLOWED_TAGS = {
    "a", "article", "aside", "audio", "b", "blockquote", "br", "caption",
    "code", "dd", "del", "details", "div", "dl", "dt", "em", "figcaption",
    "figure", "footer", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr",
    "i", "img", "ins", "li", "main", "mark", "nav", "ol", "p", "pre", "q",
    "section", "small", "source", "span", "strong", "sub", "summary", "sup",
    "table", "tbody", "td", "tfoot", "th", "thead", "time", "tr", "u", "ul",
    "video",
}

VOID_TAGS = {"br", "hr", "img", "source"}

ALLOWED_ATTRS = {
    "alt", "class", "colspan", "controls", "datetime", "download", "height",
    "href", "lang", "loop", "muted", "open", "poster", "preload", "rowspan",
    "span", "src", "title", "type", "width",
}

_URL_ATTRS = {"href", "src", "poster"}


def _safe_url(value: str) -> bool:
    value = value.strip().lower()
    if value.startswith("//"):
        return False  # protocol-relative: an off-node navigation in disguise
    if value.startswith(("http://", "https://", "/", "#", "./")):
        return True
    # Bare relative paths are fine; anything with a scheme is not.
    return ":" not in value.split("/", 1)[0].split("?", 1)[0]


class _Sanitizer(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.out: list[str] = []
        self._open: list[str] = []
        self._suppress = 0  # inside script/style: drop text too

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self._suppress += 1
            return
        if tag not in ALLOWED_TAGS:
            return
        rendered = self._render_attrs(attrs)
        if tag in VOID_TAGS:
            self.out.append(f"<{tag}{rendered}/>")
            return
        self.out.append(f"<{tag}{rendered}>")
        self._open.append(tag)

    def handle_startendtag(self, tag, attrs):
        if tag in ("script", "style"):
            return
        if tag not in ALLOWED_TAGS:
            return
        self.out.append(f"<{tag}{self._render_attrs(attrs)}/>")

    def handle_endtag(self, tag):
        if tag in ("script", "style"):
            self._suppress = max(0, self._suppress - 1)
            return
        if tag not in ALLOWED_TAGS or tag in VOID_TAGS:
            return
        if tag in self._open:
            # Close any unclosed children first to keep nesting valid.
            while self._open:
                top = self._open.pop()
                self.out.append(f"</{top}>")
                if top == tag:
                    break

    def handle_data(self, data):
        if not self._suppress and data:
            self.out.append(escape(data, quote=False))

    def _render_attrs(self, attrs) -> str:
        parts = []
        for name, value in attrs:
            name = name.lower()
            if name not in ALLOWED_ATTRS:
                continue
            if value is None:
                parts.append(f" {name}")
                continue
            if name in _URL_ATTRS and not _safe_url(value):
                continue
            parts.append(f' {name}="{escape(value, quote=True)}"')
        return "".join(parts)

    def result(self) -> str:
        while self._open:
            self.out.append(f"</{self._open.pop()}>")
        return "".join(self.out)


def sanitize_fragment(html: str) -> str:
    """Reduce arbitrary markup to the inert allow-listed subset."""
    parser = _Sanitizer()
    parser.feed(html)
    parser.close()
    return parser.result()
