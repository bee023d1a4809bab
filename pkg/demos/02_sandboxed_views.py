"""Transformation scripts: rendering, fallbacks, and containment.

Shows the three demo applications rendering through the sandbox, a
message with no scripts falling back to its contentType, and a hostile
script being stopped by the budgets without harming the process.

Run from the repository root:  python3 demos/02_sandboxed_views.py
"""

from oppweb.apps import build_board_fixture, build_photos_fixture
from oppweb.keys import Identity
from oppweb.message import Message
from oppweb.miniscript import ExecutionBudget
from oppweb.sandbox import (
    ScriptExecutionError,
    build_draft,
    execute_app_summary,
    execute_fallback,
    execute_summary,
)
from oppweb.store import CacheStore

ident = Identity.generate()

# -- 1. scripted views ----------------------------------------------------------

board = build_board_fixture(ident, now=1000)
print("board post summary:", execute_summary(board[0]).html)
landing = execute_app_summary("board", board, {})
print("board landing view is", len(landing.html), "bytes of sanitized HTML")

photos = build_photos_fixture(ident, now=2000)
grid = execute_app_summary("photos", photos, {})
print("photo grid holds", grid.html.count("img"), "thumbnails")

# -- 2. no script? the contentType decides --------------------------------------

bare = Message(
    "files", ident.fingerprint, 3000, 5400,
    metadata={"contentType": "audio", "description": "field recording"},
    payload=[("clip.ogg", b"OggS fake audio")],
)
print("fallback:", execute_fallback(bare).html)

# -- 3. drafts inherit the scripts that made them --------------------------------

draft = build_draft(
    board[0], "new", {"tag": "water", "body": "Pump fixed."}, ident, now=4000,
    siblings=board,
)
fresh_node = CacheStore()
fresh_node.insert(draft, now=4000)
alone = fresh_node.get(draft.id)
print("draft renders alone:", execute_summary(alone).html)

# -- 4. hostile scripts hit the budget wall ---------------------------------------

bomb = Message(
    "hostile", "attacker", 0, 5400,
    metadata={"summary": "x = 'a'\nwhile True:\n    x = x + x"},
)
try:
    execute_summary(bomb, ExecutionBudget(cpu_seconds=0.2))
except ScriptExecutionError as exc:
    print("contained:", exc.diagnostic)
print("still serving:", execute_summary(board[1]).html)
