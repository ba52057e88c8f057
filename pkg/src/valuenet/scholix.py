"""Scholix link packages to profiled Announce notifications.

Each data-literature link is pushed to both ends: the inbox for the
source artifact's host receives the forward statement and the inbox for
the target artifact's host receives the inverse statement, so every
notification's relationship subject is an artifact on the addressee's
node.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional

import requests

from .as2 import AgentDescriptor, AgentKind, Notification, RelationshipObject, build_announce
from .discovery import InboxRef, PidScheme, PidUrl, ResolutionResult, generate_proxy_inbox
from .errors import InvalidUrl, MissingUrl, SchemaError
from .iri import is_http_url, url_host
from .serialization import to_jsonld

logger = logging.getLogger(__name__)

SCHOLEXPLORER_AGENT = AgentDescriptor(
    "https://scholexplorer.openaire.eu/#about", AgentKind.SERVICE, "ScholeXplorer"
)
NATSERV_AGENT = AgentDescriptor(
    "https://mellonscholarlycommunication.github.io/about#us", AgentKind.ORGANIZATION, "NatServ"
)
SCHOLEXPLORER_API = "https://api.scholexplorer.openaire.eu/v2/Links"

MISSING_URL = "missing artifact URL"


@lru_cache(maxsize=None)
def relation_table() -> tuple:
    """(namespace, {term: inverse term}) from the bundled data file."""
    data = json.loads(resources.files("valuenet").joinpath("data/scholix_relations.json").read_text("utf-8"))
    return data["namespace"], dict(data["inverse"])


def relationship_iri(term: str) -> str:
    ns, inverse = relation_table()
    if term.startswith(ns):
        term = term[len(ns):]
    for known in inverse:
        if known.lower() == term.strip().lower():
            return ns + known
    raise ValueError(f"not a Scholix relation term: {term!r}")


def inverse_relationship(iri: str) -> str:
    ns, inverse = relation_table()
    return ns + inverse[iri[len(ns):]]


@dataclass(frozen=True)
class ScholixEndpoint:
    pid: Optional[PidUrl]
    url: Optional[str]
    type: str = ""


@dataclass(frozen=True)
class ScholixLink:
    source: ScholixEndpoint
    target: ScholixEndpoint
    relationship: str
    provider: str = ""
    publication_date: Optional[date] = None
    record_index: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class SkipEntry:
    record_index: int
    endpoint: str
    reason: str


@dataclass
class LoadResult:
    links: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    records: int = 0

    def __len__(self):
        return len(self.links)

    def __iter__(self):
        return iter(self.links)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _get(obj, *names):
    """Case-insensitive key lookup over the Scholix spelling variants."""
    if not isinstance(obj, Mapping):
        return None
    lowered = {str(k).lower(): v for k, v in obj.items()}
    for name in names:
        if name.lower() in lowered:
            return lowered[name.lower()]
    return None


def _as_list(value) -> list:
    if value is None:
        return []
    return value if isinstance(value, list) else [value]


def _name(value) -> str:
    if isinstance(value, Mapping):
        value = _get(value, "Name", "name")
    return str(value or "").strip()


def _endpoint(obj) -> ScholixEndpoint:
    if not isinstance(obj, Mapping):
        raise ValueError("endpoint is not an object")
    ids = [i for i in _as_list(_get(obj, "Identifier", "identifiers")) if isinstance(i, Mapping)]
    if not ids:
        raise ValueError("endpoint has no Identifier")
    chosen = next((i for i in ids if _get(i, "IDURL", "idUrl", "url")), ids[0])
    raw = str(_get(chosen, "ID", "identifier", "id") or "").strip()
    scheme = str(_get(chosen, "IDScheme", "schema", "scheme") or "")
    url = str(_get(chosen, "IDURL", "idUrl", "url") or "").strip() or None
    if url is not None and not is_http_url(url):
        url = None
    pid = None
    try:
        pid = PidUrl.from_raw(scheme, raw)
    except InvalidUrl:
        if url:
            pid = PidUrl.from_url(url)
    return ScholixEndpoint(pid, url, _name(_get(obj, "Type", "objectType")))


def _pub_date(value) -> Optional[date]:
    if not value:
        return None
    try:
        return date.fromisoformat(str(value)[:10])
    except ValueError:
        return None


def parse_record(record, index: int) -> ScholixLink:
    """Turn one Scholix record into a link.

    Raises:
        SchemaError: the record does not follow the package schema.
    """
    if not isinstance(record, Mapping):
        raise SchemaError(index, "record is not a JSON object")
    try:
        source = _endpoint(_get(record, "source"))
        target = _endpoint(_get(record, "target"))
    except ValueError as exc:
        raise SchemaError(index, str(exc)) from None
    rel_name = _name(_get(record, "RelationshipType", "relationship"))
    try:
        relationship = relationship_iri(rel_name)
    except ValueError as exc:
        raise SchemaError(index, str(exc)) from None
    providers = [_name(p) for p in _as_list(_get(record, "LinkProvider", "linkProvider"))]
    return ScholixLink(
        source=source,
        target=target,
        relationship=relationship,
        provider="; ".join(p for p in providers if p),
        publication_date=_pub_date(_get(record, "LinkPublicationDate", "publicationDate")),
        record_index=index,
    )


def _read_records(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        # one record per line
        return [json.loads(line) if line.strip() else None for line in text.splitlines() if line.strip()]
    if isinstance(data, Mapping):
        for key in ("result", "results", "links"):
            if isinstance(data.get(key), list):
                return data[key]
        return [data]
    return list(data)


def links_from_records(records: Iterable) -> LoadResult:
    out = LoadResult()
    for index, record in enumerate(records):
        out.records += 1
        try:
            link = parse_record(record, index)
        except SchemaError as exc:
            out.errors.append(exc)
            continue
        missing = [name for name, ep in (("source", link.source), ("target", link.target)) if not ep.url]
        if missing:
            out.skipped.extend(SkipEntry(index, name, MISSING_URL) for name in missing)
            continue
        out.links.append(link)
    return out


def load_scholix(source) -> LoadResult:
    """Load Scholix records from a file (JSON array, API page or NDJSON).

    ``source`` may also be an already-decoded list of records. Records
    without artifact URLs go to ``skipped``; malformed ones to ``errors``.
    """
    if isinstance(source, (list, tuple)):
        return links_from_records(source)
    text = Path(source).read_text(encoding="utf-8")
    try:
        records = _read_records(text)
    except json.JSONDecodeError as exc:
        result = LoadResult()
        result.errors.append(SchemaError(-1, f"unreadable package: {exc}"))
        return result
    return links_from_records(records)


def fetch_scholix(params: Mapping, session: Optional[requests.Session] = None, base_url: str = SCHOLEXPLORER_API, max_pages: int = 100) -> LoadResult:
    """Page through the ScholeXplorer Links API and parse the records."""
    session = session or requests.Session()
    records: list = []
    for page in range(max_pages):
        resp = session.get(base_url, params={**params, "page": page}, timeout=60)
        resp.raise_for_status()
        data = resp.json()
        batch = data.get("result") or []
        records.extend(batch)
        total_pages = data.get("totalPages")
        if not batch or (total_pages is not None and page + 1 >= int(total_pages)):
            break
    return links_from_records(records)


def write_skips_csv(skips: Iterable[SkipEntry], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["record_index", "endpoint", "reason"])
        for s in skips:
            w.writerow([s.record_index, s.endpoint, s.reason])


# ---------------------------------------------------------------------------
# Link -> notifications
# ---------------------------------------------------------------------------


def link_to_relationship(link: ScholixLink, direction: str = "forward") -> RelationshipObject:
    """Relationship statement for one end of a link.

    ``forward`` reads source -> target; ``inverse`` reads target -> source
    using the inverse Scholix term.
    """
    if not link.source.url or not link.target.url:
        raise MissingUrl("link endpoint without artifact URL")
    if direction == "forward":
        return RelationshipObject(link.source.url, link.relationship, link.target.url)
    if direction == "inverse":
        return RelationshipObject(link.target.url, inverse_relationship(link.relationship), link.source.url)
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")


def inverse_link(link: ScholixLink) -> ScholixLink:
    return ScholixLink(
        link.target, link.source, inverse_relationship(link.relationship), link.provider, link.publication_date, link.record_index
    )


def addressee(ref: InboxRef) -> AgentDescriptor:
    """Agent standing for the data node that owns ``ref``."""
    return AgentDescriptor(f"https://{ref.landing_host}/", AgentKind.ORGANIZATION, None, ref.inbox_url)


@dataclass
class FanOut:
    items: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def fan_out(
    links: Iterable[ScholixLink],
    inbox_map: Mapping[str, InboxRef],
    actor: AgentDescriptor = SCHOLEXPLORER_AGENT,
    origin: Optional[AgentDescriptor] = NATSERV_AGENT,
) -> FanOut:
    """Two notifications per link, one for each endpoint's inbox.

    ``inbox_map`` maps artifact URLs to inboxes. A link is sent only when
    both of its endpoints have an inbox; otherwise both halves are skipped
    with a reason. Output keeps input order, source half first.
    """
    out = FanOut()
    for link in links:
        src_url, tgt_url = link.source.url, link.target.url
        if not src_url or not tgt_url:
            out.skipped.extend(
                SkipEntry(link.record_index, name, MISSING_URL) for name, u in (("source", src_url), ("target", tgt_url)) if not u
            )
            continue
        if src_url == tgt_url:
            out.skipped.extend(
                SkipEntry(link.record_index, name, "source and target are the same artifact") for name in ("source", "target")
            )
            continue
        src_ref, tgt_ref = inbox_map.get(src_url), inbox_map.get(tgt_url)
        if src_ref is None or tgt_ref is None:
            for name, ref in (("source", src_ref), ("target", tgt_ref)):
                reason = "no inbox for artifact" if ref is None else "counterpart endpoint has no inbox"
                out.skipped.append(SkipEntry(link.record_index, name, reason))
            continue
        for direction, artifact, ref in (("forward", src_url, src_ref), ("inverse", tgt_url, tgt_ref)):
            n = build_announce(actor, artifact, link_to_relationship(link, direction), addressee(ref), origin=origin)
            out.items.append((n, ref))
    return out


@dataclass
class LinkNetwork:
    """Links plus the resolution and inbox data needed to address them."""

    links: list
    resolutions: dict = field(default_factory=dict)
    inbox_map: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    @property
    def endpoint_urls(self) -> list:
        seen = {}
        for link in self.links:
            for ep in (link.source, link.target):
                if ep.url:
                    seen.setdefault(ep.url, None)
        return list(seen)

    @property
    def artifact_urls(self) -> set:
        return {r.landing_url for r in self.resolutions.values() if r.ok}

    @property
    def landing_hosts(self) -> set:
        return {url_host(u) for u in self.artifact_urls}

    def add_resolutions(self, results: Iterable[ResolutionResult]) -> None:
        for r in results:
            self.resolutions[r.pid.url_form] = r

    def generate_inboxes(self, proxy_base: str, discovered: Optional[Mapping[str, InboxRef]] = None) -> None:
        """Fill ``inbox_map`` per landing host, preferring discovered inboxes."""
        discovered = discovered or {}
        for r in self.resolutions.values():
            if not r.ok:
                continue
            host = url_host(r.landing_url)
            if host not in self.inbox_map:
                self.inbox_map[host] = discovered.get(host) or generate_proxy_inbox(r.landing_url, proxy_base)

    def inboxes_by_url(self) -> dict:
        out = {}
        for url, r in self.resolutions.items():
            if r.ok and url_host(r.landing_url) in self.inbox_map:
                out[url] = self.inbox_map[url_host(r.landing_url)]
        return out

    def unresolved(self) -> list:
        return [u for u in self.endpoint_urls if u not in self.resolutions or not self.resolutions[u].ok]


def endpoint_pids(links: Iterable[ScholixLink]) -> list:
    """HTTP forms of every distinct endpoint URL, in first-seen order."""
    seen = {}
    for link in links:
        for ep in (link.source, link.target):
            if ep.url and ep.url not in seen:
                seen[ep.url] = PidUrl(PidScheme.HTTPURL, ep.url, ep.url)
    return list(seen.values())


def notification_line(n: Notification, ref: InboxRef) -> str:
    return json.dumps({"inbox_url": ref.inbox_url, "landing_host": ref.landing_host, "notification": to_jsonld(n)})
