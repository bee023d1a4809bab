"""Reference application bundles: photo wall, tag board, PeopleFinder.

A bundle is a directory holding a manifest, up to five transformation
scripts, and an icon. Bundles are baked into messages; every fixture
message carries the complete script set, so it renders on a node that has
never seen the application before.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Optional, Sequence

from oppweb.keys import Identity
from oppweb.message import TRANSFORM_KEYS, Message, MetaValue, sign_message

BUNDLE_ROOT = os.path.join(os.path.dirname(__file__), "bundles")
BUILTIN_BUNDLES = ("board", "photos", "peoplefinder")

DEFAULT_TTL = 5400


@dataclass(frozen=True)
class AppBundle:
    service: str
    description: str
    content_type: str
    scripts: dict[str, str]  # transformation kind -> source
    icon: Optional[bytes]
    icon_name: str = "icon.png"


class BundleError(ValueError):
    pass


def load_bundle(path: str) -> AppBundle:
    """Read a bundle directory: manifest.txt plus <kind>.ows script files."""
    manifest_path = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest_path):
        raise BundleError(f"no manifest.txt in {path}")
    fields = {}
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    service = fields.get("service")
    if not service:
        raise BundleError("manifest must name a service")
    scripts = {}
    for kind in TRANSFORM_KEYS:
        script_path = os.path.join(path, f"{kind}.ows")
        if os.path.isfile(script_path):
            with open(script_path, encoding="utf-8") as fh:
                scripts[kind] = fh.read()
    if "summary" not in scripts:
        raise BundleError(f"bundle {service!r} must ship at least a summary script")
    icon = None
    icon_name = fields.get("icon", "icon.png")
    icon_path = os.path.join(path, icon_name)
    if os.path.isfile(icon_path):
        with open(icon_path, "rb") as fh:
            icon = fh.read()
    return AppBundle(
        service=service,
        description=fields.get("description", service),
        content_type=fields.get("content_type", "other"),
        scripts=scripts,
        icon=icon,
        icon_name=icon_name,
    )


def builtin_bundle(name: str) -> AppBundle:
    if name not in BUILTIN_BUNDLES:
        raise BundleError(f"unknown bundle {name!r}; shipped: {BUILTIN_BUNDLES}")
    return load_bundle(os.path.join(BUNDLE_ROOT, name))


def make_app_message(
    bundle: AppBundle,
    identity: Identity,
    now: int,
    meta: dict,
    payload: Sequence[tuple[str, bytes]],
    ttl_seconds: int = DEFAULT_TTL,
) -> Message:
    """One self-contained message of this application: content plus logic."""
    metadata: dict[str, MetaValue] = {}
    for kind, source in bundle.scripts.items():
        metadata[kind] = MetaValue.text(source)
    if bundle.icon is not None:
        metadata["icon"] = MetaValue.ref(bundle.icon_name)
    for key, value in meta.items():
        metadata[key] = value if isinstance(value, MetaValue) else (
            MetaValue.text(value) if isinstance(value, str) else MetaValue.binary(value)
        )
    metadata.setdefault("contentType", MetaValue.text(bundle.content_type))
    entries = list(payload)
    if bundle.icon is not None and all(n != bundle.icon_name for n, _ in entries):
        entries.append((bundle.icon_name, bundle.icon))
    msg = Message(
        service=bundle.service,
        originator=identity.fingerprint,
        created_at=now,
        ttl_seconds=ttl_seconds,
        metadata=metadata,
        payload=entries,
    )
    return sign_message(msg, identity)


# -- fixtures -----------------------------------------------------------------


def fixture_image(color: tuple[int, int, int], size: int = 320) -> bytes:
    """Deterministic PNG for photo fixtures."""
    from PIL import Image

    img = Image.new("RGB", (size, size), color)
    for x in range(0, size, 16):
        for y in range(0, size, 16):
            if (x + y) % 32 == 0:
                img.putpixel((x, y), (255, 255, 255))
    out = io.BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()


def build_board_fixture(
    identity: Identity,
    now: int,
    posts: Sequence[tuple[str, str]] = (
        ("news", "Water distribution at the main square, 10:00."),
        ("news", "Road to the north village is open again."),
        ("lost", "Seen: brown dog near the river bank, green collar."),
    ),
    ttl_seconds: int = DEFAULT_TTL,
) -> list[Message]:
    bundle = builtin_bundle("board")
    out = []
    for i, (tag, body) in enumerate(posts):
        out.append(
            make_app_message(
                bundle,
                identity,
                now + i,
                meta={"tag": tag, "description": f"{tag}: {body[:64]}"},
                payload=[("body.txt", body.encode("utf-8"))],
                ttl_seconds=ttl_seconds,
            )
        )
    return out


def build_photos_fixture(
    identity: Identity,
    now: int,
    photos: Optional[Sequence[tuple[str, bytes]]] = None,
    ttl_seconds: int = DEFAULT_TTL,
) -> list[Message]:
    bundle = builtin_bundle("photos")
    if photos is None:
        photos = [
            ("harbour at dawn", fixture_image((40, 80, 140))),
            ("market day", fixture_image((150, 90, 30))),
            ("hill trail", fixture_image((50, 120, 60))),
        ]
    out = []
    for i, (title, data) in enumerate(photos):
        out.append(
            make_app_message(
                bundle,
                identity,
                now + i,
                meta={"description": title},
                payload=[("photo", data)],
                ttl_seconds=ttl_seconds,
            )
        )
    return out


def build_peoplefinder_fixture(
    identity: Identity,
    now: int,
    records: Sequence[tuple[str, str, Optional[str]]] = (
        ("Alex Virtanen", "looking for", "last seen near the harbour"),
        ("Sam Okafor", "safe", None),
    ),
    ttl_seconds: int = DEFAULT_TTL,
) -> list[Message]:
    bundle = builtin_bundle("peoplefinder")
    out = []
    for i, (name, status, first_note) in enumerate(records):
        rid = name.lower().replace(" ", "-") + "-" + str(now + i)
        lines = [f"record: {rid}", f"name: {name}", f"status: {status}"]
        if first_note:
            author = identity.fingerprint[:12]
            lines.append(f"note: {now + i}|{author}|{first_note}")
        out.append(
            make_app_message(
                bundle,
                identity,
                now + i,
                meta={"description": f"PeopleFinder record: {name}"},
                payload=[("record.txt", "\n".join(lines).encode("utf-8"))],
                ttl_seconds=ttl_seconds,
            )
        )
    return out


def build_fixture(bundle_name: str, identity: Identity, now: int, ttl_seconds: int = DEFAULT_TTL) -> list[Message]:
    builders = {
        "board": build_board_fixture,
        "photos": build_photos_fixture,
        "peoplefinder": build_peoplefinder_fixture,
    }
    if bundle_name not in builders:
        raise BundleError(f"no fixture builder for {bundle_name!r}")
    return builders[bundle_name](identity, now, ttl_seconds=ttl_seconds)


def golden_render(messages: list[Message], out_dir: str) -> dict[str, str]:
    """Render every fixture view and write one HTML file per view."""
    from oppweb.sandbox import execute_app_summary, execute_presentation, execute_summary

    os.makedirs(out_dir, exist_ok=True)
    rendered: dict[str, str] = {}
    by_service: dict[str, list[Message]] = {}
    for i, msg in enumerate(messages):
        by_service.setdefault(msg.service, []).append(msg)
        for kind, runner in (("summary", execute_summary), ("presentation", execute_presentation)):
            rendered[f"{msg.service}.{i}.{kind}.html"] = runner(msg).html
    for service, members in sorted(by_service.items()):
        rendered[f"{service}.appSummary.html"] = execute_app_summary(service, members, {}).html
    for name, html in rendered.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(html)
    return rendered
