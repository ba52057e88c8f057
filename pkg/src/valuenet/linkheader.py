"""Parser for HTTP ``Link`` header values (RFC 8288)."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_TOKEN_RE = re.compile(r"[!#$%&'*+\-.^_`|~0-9A-Za-z]+")
_WS = " \t"
# unquoted values are meant to be tokens, but servers send bare URIs too
_BARE_VALUE_RE = re.compile(r"[^\s;,\"]+")


@dataclass(frozen=True)
class Link:
    target: str
    params: dict = field(default_factory=dict, hash=False, compare=True)

    @property
    def rels(self) -> tuple:
        """Relation types, lower-cased for case-insensitive comparison."""
        return tuple(r.lower() for r in self.params.get("rel", "").split())

    def has_rel(self, rel: str) -> bool:
        return rel.lower() in self.rels


def _skip_ws(s: str, i: int) -> int:
    while i < len(s) and s[i] in _WS:
        i += 1
    return i


def _quoted(s: str, i: int):
    # s[i] == '"'
    out = []
    i += 1
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            out.append(s[i + 1])
            i += 2
        elif c == '"':
            return "".join(out), i + 1
        else:
            out.append(c)
            i += 1
    return "".join(out), i


def _skip_to_next_link(s: str, i: int) -> int:
    while i < len(s):
        if s[i] == '"':
            _, i = _quoted(s, i)
        elif s[i] == ",":
            return i + 1
        else:
            i += 1
    return i


def parse_link_header(value: str) -> list:
    """Split a Link header value into :class:`Link` entries.

    Quoted parameter values may contain commas and semicolons. Parameter
    names are case-insensitive; the first occurrence of a name wins.
    Malformed entries are skipped rather than raising.
    """
    links = []
    s = value or ""
    i = 0
    while i < len(s):
        i = _skip_ws(s, i)
        if i >= len(s):
            break
        if s[i] == ",":
            i += 1
            continue
        if s[i] != "<":
            i = _skip_to_next_link(s, i)
            continue
        end = s.find(">", i)
        if end < 0:
            break
        target = s[i + 1 : end].strip()
        i = end + 1
        params: dict = {}
        while True:
            i = _skip_ws(s, i)
            if i >= len(s) or s[i] == ",":
                i += 1
                break
            if s[i] != ";":
                i = _skip_to_next_link(s, i)
                break
            i = _skip_ws(s, i + 1)
            m = _TOKEN_RE.match(s, i)
            if not m:
                continue
            name = m.group(0).lower()
            i = _skip_ws(s, m.end())
            val = ""
            if i < len(s) and s[i] == "=":
                i = _skip_ws(s, i + 1)
                if i < len(s) and s[i] == '"':
                    val, i = _quoted(s, i)
                else:
                    m = _BARE_VALUE_RE.match(s, i)
                    if m:
                        val, i = m.group(0), m.end()
            params.setdefault(name, val)
        links.append(Link(target, params))
    return links
