"""Small IRI/URL predicates shared by the model, discovery and ingest code."""

import re
import uuid
from urllib.parse import urlsplit

_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*:")
_FORBIDDEN_RE = re.compile(r'[\s<>"{}|\\^`\x00-\x1f\x7f]')


def is_absolute_iri(value) -> bool:
    """True for a syntactically plausible absolute IRI (scheme plus body)."""
    if not isinstance(value, str) or not value:
        return False
    m = _SCHEME_RE.match(value)
    if not m or len(value) == m.end():
        return False
    if _FORBIDDEN_RE.search(value):
        return False
    scheme = value[: m.end() - 1].lower()
    if scheme in ("http", "https"):
        return is_http_url(value)
    return True


def is_http_url(value) -> bool:
    if not isinstance(value, str) or _FORBIDDEN_RE.search(value):
        return False
    try:
        parts = urlsplit(value)
        parts.port  # raises on a malformed port
    except ValueError:
        return False
    return parts.scheme.lower() in ("http", "https") and bool(parts.hostname)


_DEFAULT_PORTS = {"http": 80, "https": 443}


def url_host(url: str) -> str:
    """Host of ``url`` including a non-default port, lower-cased."""
    parts = urlsplit(url)
    host = (parts.hostname or "").lower()
    if not host:
        return ""
    if ":" in host:
        host = f"[{host}]"
    if parts.port is not None and parts.port != _DEFAULT_PORTS.get(parts.scheme.lower()):
        host = f"{host}:{parts.port}"
    return host


def new_urn_uuid() -> str:
    return f"urn:uuid:{uuid.uuid4()}"
