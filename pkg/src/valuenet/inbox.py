"""LDN receiver: inboxes that accept, store and list notifications.

Storage layout under ``storage_dir``::

    index.ndjson            append-only; one JSON object per event
    <inbox-key>/<rid>.json  stored document (JSON-LD)
    <inbox-key>/<rid>.ttl   stored document (Turtle)

Index events are ``{"event": "inbox", "inbox": path}`` when an inbox is
created and ``{"event": "stored", "inbox", "rid", "notification_id",
"media_type", "received_at", "sender", "file"}`` per accepted document.
Documents are written to a temporary file and renamed into place before
the index line is appended.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import quote, urlsplit

from .as2 import validate_notification
from .discovery import LDP_INBOX_REL
from .errors import ParseError, ProfileError
from .serialization import JSONLD, SUPPORTED_MEDIA_TYPES, TURTLE, WireDocument, media_type_for, parse

logger = logging.getLogger(__name__)

DEFAULT_MAX_BODY = 1024 * 1024
_EXT = {JSONLD: ".json", TURTLE: ".ttl"}
_TENANT_RE = re.compile(r"^/[A-Za-z0-9.\-\[\]:]+/inbox$")


def normalize_path(path: str) -> str:
    path = "/" + path.strip().strip("/")
    return path if path != "/" else "/"


@dataclass
class InboxConfig:
    """Receiver settings.

    ``base_url`` may be left empty to use the bound address. ``artifacts``
    maps artifact path prefixes to the inbox path advertised for them.
    With ``tenant_inboxes`` a POST to ``/{host}/inbox`` creates that inbox
    on first use.
    """

    base_url: Optional[str] = None
    inbox_paths: tuple = ("/inbox",)
    storage_dir: Path = Path("inbox-store")
    max_body_bytes: int = DEFAULT_MAX_BODY
    artifacts: dict = field(default_factory=dict)
    enforce_profile: bool = True
    tenant_inboxes: bool = False
    allowed_senders: tuple = ()
    host: str = "127.0.0.1"
    port: int = 0

    def __post_init__(self):
        paths = [normalize_path(p) for p in self.inbox_paths]
        if len(set(paths)) != len(paths):
            raise ValueError("inbox paths must be distinct")
        self.inbox_paths = tuple(paths)
        self.storage_dir = Path(self.storage_dir)
        self.artifacts = {normalize_path(k): normalize_path(v) for k, v in self.artifacts.items()}


def _split_list(value: str) -> tuple:
    return tuple(v.strip() for v in re.split(r"[,\n]", value or "") if v.strip())


def load_config(path) -> InboxConfig:
    """Read an INI file::

        [server]
        base_url = http://localhost:8080
        host = 127.0.0.1
        port = 8080
        storage_dir = ./store
        max_body_bytes = 1048576
        inboxes = /inbox, /arxiv.org/inbox
        enforce_profile = true
        tenant_inboxes = false
        allowed_senders =

        [artifacts]
        /artifact = /inbox

    Relative ``storage_dir`` values are taken relative to the file.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    s = parser["server"] if parser.has_section("server") else {}
    storage = Path(s.get("storage_dir", "inbox-store"))
    if not storage.is_absolute():
        storage = Path(path).parent / storage
    return InboxConfig(
        base_url=s.get("base_url") or None,
        inbox_paths=_split_list(s.get("inboxes", "/inbox")),
        storage_dir=storage,
        max_body_bytes=int(s.get("max_body_bytes", DEFAULT_MAX_BODY)),
        artifacts=dict(parser["artifacts"]) if parser.has_section("artifacts") else {},
        enforce_profile=str(s.get("enforce_profile", "true")).lower() in ("1", "true", "yes", "on"),
        tenant_inboxes=str(s.get("tenant_inboxes", "false")).lower() in ("1", "true", "yes", "on"),
        allowed_senders=_split_list(s.get("allowed_senders", "")),
        host=s.get("host", "127.0.0.1"),
        port=int(s.get("port", 0)),
    )


@dataclass(frozen=True)
class StoredNotification:
    inbox: str
    rid: str
    resource_url: str
    received_at: str
    sender_hint: Optional[str]
    notification_id: Optional[str]
    media_type: str
    file: Path

    @property
    def document(self) -> WireDocument:
        return WireDocument(self.media_type, self.file.read_bytes())


def _inbox_key(path: str) -> str:
    return quote(path.strip("/"), safe="") or "_root"


class InboxStore:
    """File-backed notification storage shared by all inboxes of a server."""

    def __init__(self, storage_dir, base_url: str = ""):
        self.root = Path(storage_dir)
        self.base_url = base_url.rstrip("/")
        self.root.mkdir(parents=True, exist_ok=True)
        probe = self.root / ".write-probe"
        probe.write_text("ok")
        probe.unlink()
        self.index_path = self.root / "index.ndjson"
        self._lock = threading.Lock()
        self._inboxes: dict = {}  # path -> {notification_id: rid}
        self._order: dict = {}  # path -> [rid]
        self._records: dict = {}  # (path, rid) -> StoredNotification
        self._load()

    def _load(self) -> None:
        if not self.index_path.exists():
            return
        with self.index_path.open(encoding="utf-8") as fh:
            for line in fh:
                try:
                    ev = json.loads(line)
                except ValueError:
                    logger.warning("skipping corrupt index line in %s", self.index_path)
                    continue
                if ev.get("event") == "inbox":
                    self._register(ev["inbox"])
                elif ev.get("event") == "stored":
                    self._register(ev["inbox"])
                    self._remember(self._record(ev))

    def _record(self, ev: dict) -> StoredNotification:
        return StoredNotification(
            inbox=ev["inbox"],
            rid=ev["rid"],
            resource_url=self.resource_url(ev["inbox"], ev["rid"]),
            received_at=ev["received_at"],
            sender_hint=ev.get("sender"),
            notification_id=ev.get("notification_id"),
            media_type=ev["media_type"],
            file=self.root / ev["file"],
        )

    def _register(self, path: str) -> bool:
        if path in self._inboxes:
            return False
        self._inboxes[path] = {}
        self._order[path] = []
        return True

    def _remember(self, rec: StoredNotification) -> None:
        if rec.notification_id:
            self._inboxes[rec.inbox].setdefault(rec.notification_id, rec.rid)
        self._order[rec.inbox].append(rec.rid)
        self._records[(rec.inbox, rec.rid)] = rec

    def _append(self, event: dict) -> None:
        with self.index_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()

    def resource_url(self, inbox: str, rid: str) -> str:
        return f"{self.base_url}{inbox.rstrip('/')}/{rid}"

    def inbox_url(self, inbox: str) -> str:
        return f"{self.base_url}{inbox}"

    def create_inbox(self, path: str) -> str:
        path = normalize_path(path)
        with self._lock:
            if self._register(path):
                self._append({"event": "inbox", "inbox": path})
        return path

    def has_inbox(self, path: str) -> bool:
        return path in self._inboxes

    @property
    def inboxes(self) -> list:
        return list(self._inboxes)

    def store(self, inbox: str, doc: WireDocument, notification_id: Optional[str], sender: Optional[str] = None):
        """Persist ``doc``; returns ``(record, created)``.

        A notification id already stored in ``inbox`` is not stored again
        and the existing record comes back with ``created=False``.
        """
        with self._lock:
            known = self._inboxes[inbox]
            if notification_id and notification_id in known:
                return self._records[(inbox, known[notification_id])], False
            rid = str(uuid.uuid4())
            rel = Path(_inbox_key(inbox)) / (rid + _EXT.get(doc.media_type, ".bin"))
            target = self.root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(doc.body)
            os.replace(tmp, target)
            event = {
                "event": "stored",
                "inbox": inbox,
                "rid": rid,
                "notification_id": notification_id,
                "media_type": doc.media_type,
                "received_at": datetime.now(timezone.utc).isoformat(),
                "sender": sender,
                "file": rel.as_posix(),
            }
            self._append(event)
            rec = self._record(event)
            self._remember(rec)
            return rec, True

    def list(self, inbox: str) -> list:
        return [self._records[(inbox, rid)] for rid in list(self._order[inbox])]

    def get(self, inbox: str, rid: str) -> Optional[StoredNotification]:
        return self._records.get((inbox, rid))

    def notification_ids(self, inbox: str) -> set:
        return set(self._inboxes.get(inbox, {}))


def listing_document(inbox_url: str, resource_urls) -> WireDocument:
    body = {"@context": "http://www.w3.org/ns/ldp", "@id": inbox_url, "contains": list(resource_urls)}
    return WireDocument(JSONLD, json.dumps(body, indent=2).encode("utf-8"))


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "valuenet-inbox/0.1"

    @property
    def app(self) -> "InboxServer":
        return self.server.app  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        logger.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: bytes = b"", content_type: Optional[str] = None, headers=None, head=False):
        self.send_response(status)
        if content_type:
            self.send_header("Content-Type", content_type)
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body and not head:
            self.wfile.write(body)

    def _error(self, status: int, message: str):
        self._send(status, (message + "\n").encode("utf-8"), "text/plain; charset=utf-8")

    def _path(self) -> str:
        return normalize_path(urlsplit(self.path).path)

    def _drain(self):
        length = self.headers.get("Content-Length")
        if length and length.isdigit() and int(length) <= self.app.config.max_body_bytes:
            self.rfile.read(int(length))
        else:
            self.close_connection = True

    def do_POST(self):
        app, path = self.app, self._path()
        if not app.store.has_inbox(path):
            if app.config.tenant_inboxes and _TENANT_RE.match(path):
                app.store.create_inbox(path)
            else:
                self._drain()
                return self._error(404, "no such inbox")
        sender = self.client_address[0]
        if app.config.allowed_senders and sender not in app.config.allowed_senders:
            self._drain()
            return self._error(403, "sender not allowed")
        length = self.headers.get("Content-Length")
        if length is None or not length.isdigit():
            self.close_connection = True
            return self._error(411, "Content-Length required")
        if int(length) > app.config.max_body_bytes:
            self.close_connection = True
            return self._error(413, "notification too large")
        body = self.rfile.read(int(length))
        try:
            media_type = media_type_for(self.headers.get("Content-Type", ""))
        except ValueError:
            return self._send(
                415, b"unsupported media type\n", "text/plain", {"Accept-Post": ", ".join(SUPPORTED_MEDIA_TYPES)}
            )
        status, location, message = app.receive(path, WireDocument(media_type, body), sender)
        headers = {"Location": location} if location else {}
        self._send(status, (message + "\n").encode("utf-8"), "text/plain; charset=utf-8", headers)

    def _get(self, head: bool):
        app, path = self.app, self._path()
        if app.store.has_inbox(path):
            doc = listing_document(app.store.inbox_url(path), [r.resource_url for r in app.store.list(path)])
            return self._send(200, doc.body, doc.media_type, app.inbox_headers(), head)
        inbox, _, rid = path.rpartition("/")
        if inbox and app.store.has_inbox(inbox):
            rec = app.store.get(inbox, rid)
            if rec is None:
                return self._error(404, "no such notification")
            try:
                body = rec.file.read_bytes()
            except FileNotFoundError:
                return self._error(404, "notification file missing")
            return self._send(200, body, rec.media_type, None, head)
        inbox_path = app.inbox_for_artifact(path)
        if inbox_path is not None:
            inbox_url = app.store.inbox_url(inbox_path)
            html = (
                f'<!DOCTYPE html>\n<html><head><link rel="{LDP_INBOX_REL}" href="{inbox_url}"></head>'
                f"<body>{path}</body></html>\n"
            ).encode("utf-8")
            link = f'<{inbox_url}>; rel="{LDP_INBOX_REL}"'
            return self._send(200, html, "text/html; charset=utf-8", {"Link": link}, head)
        self._error(404, "not found")

    def do_GET(self):
        self._get(head=False)

    def do_HEAD(self):
        self._get(head=True)

    def do_OPTIONS(self):
        if self.app.store.has_inbox(self._path()):
            return self._send(204, headers={"Allow": "GET, HEAD, POST, OPTIONS", **self.app.inbox_headers()})
        self._error(404, "not found")


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256


class InboxServer:
    """HTTP front end over an :class:`InboxStore`.

    Use as a context manager or call :meth:`start` / :meth:`stop`; the
    server runs on a background thread.
    """

    def __init__(self, config: InboxConfig):
        self.config = config
        self._httpd = _Server((config.host, config.port), _Handler)
        self._httpd.app = self
        host, port = self._httpd.server_address[:2]
        self.base_url = (config.base_url or f"http://{host}:{port}").rstrip("/")
        self.store = InboxStore(config.storage_dir, self.base_url)
        for p in config.inbox_paths:
            self.store.create_inbox(p)
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def inbox_url(self, path: str) -> str:
        return self.store.inbox_url(normalize_path(path))

    def create_inbox(self, path: str) -> str:
        return self.inbox_url(self.store.create_inbox(path))

    def inbox_headers(self) -> dict:
        return {"Accept-Post": ", ".join(SUPPORTED_MEDIA_TYPES)}

    def inbox_for_artifact(self, path: str) -> Optional[str]:
        best = None
        for prefix, inbox in self.config.artifacts.items():
            if path == prefix or path.startswith(prefix.rstrip("/") + "/") or prefix == "/":
                if best is None or len(prefix) > len(best[0]):
                    best = (prefix, inbox)
        return best[1] if best else None

    def receive(self, inbox: str, doc: WireDocument, sender: Optional[str] = None) -> tuple:
        """Validate and store one document; returns ``(status, location, message)``."""
        notification_id = None
        try:
            n = parse(doc, base=self.store.inbox_url(inbox))
            notification_id = n.id
            report = validate_notification(n)
            if report.errors and self.config.enforce_profile:
                return 422, None, "; ".join(report.errors)
        except ParseError as exc:
            return 400, None, str(exc)
        except ProfileError as exc:
            if self.config.enforce_profile:
                return 422, None, str(exc)
            notification_id = "sha256:" + hashlib.sha256(doc.body).hexdigest()
        rec, created = self.store.store(inbox, doc, notification_id, sender)
        if created:
            return 201, rec.resource_url, "created"
        return 200, rec.resource_url, "already received"

    def start(self) -> "InboxServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="inbox-server", daemon=True)
        self._thread.start()
        logger.info("inbox server listening on %s", self.base_url)
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        # shutdown() waits for serve_forever, so only call it when running
        if self._thread is not None:
            self._httpd.shutdown()
            self._thread.join(timeout=5)
            self._thread = None
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
