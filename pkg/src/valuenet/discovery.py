"""PID-URL resolution and LDN inbox discovery.

Resolution follows redirects by hand so hops can be counted and capped.
Inbox discovery reads the ``ldp#inbox`` relation from the landing page's
Link header, falling back to an HTML ``<link>`` element.
"""

from __future__ import annotations

import csv
import enum
import logging
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Iterable, Mapping, Optional, Union
from urllib.parse import urljoin, urlsplit

import requests

from .errors import InvalidUrl
from .iri import is_http_url, url_host
from .linkheader import parse_link_header

logger = logging.getLogger(__name__)

LDP_INBOX_REL = "http://www.w3.org/ns/ldp#inbox"
DEFAULT_MAX_HOPS = 10
DEFAULT_TIMEOUT = 30.0
USER_AGENT = "valuenet/0.1 (+https://www.w3.org/TR/ldn/)"

# transport failures are reported in ResolutionResult.status, never raised
TOO_MANY_REDIRECTS = "TooManyRedirects"
TIMEOUT = "Timeout"
NETWORK_ERROR = "NetworkError"

_BODY_LIMIT = 256 * 1024


class PidScheme(str, enum.Enum):
    DOI = "DOI"
    HANDLE = "HANDLE"
    PMID = "PMID"
    PMC = "PMC"
    ARXIV = "ARXIV"
    HTTPURL = "HTTPURL"

    @classmethod
    def parse(cls, value: str) -> "PidScheme":
        key = (value or "").strip().upper().replace("-", "")
        aliases = {"HDL": "HANDLE", "PUBMED": "PMID", "PMCID": "PMC", "URL": "HTTPURL", "HTTP": "HTTPURL", "HTTPS": "HTTPURL"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise InvalidUrl(f"unknown PID scheme {value!r}") from None


_PREFIXES = {
    PidScheme.DOI: "https://doi.org/",
    PidScheme.HANDLE: "https://hdl.handle.net/",
    PidScheme.PMID: "https://pubmed.ncbi.nlm.nih.gov/",
    PidScheme.PMC: "https://www.ncbi.nlm.nih.gov/pmc/articles/",
    PidScheme.ARXIV: "https://arxiv.org/abs/",
}

_STRIP = {
    PidScheme.DOI: ("doi:", "https://doi.org/", "http://doi.org/", "https://dx.doi.org/", "http://dx.doi.org/"),
    PidScheme.HANDLE: ("hdl:", "https://hdl.handle.net/", "http://hdl.handle.net/"),
    PidScheme.PMID: ("pmid:",),
    PidScheme.PMC: ("pmc:",),
    PidScheme.ARXIV: ("arxiv:",),
}


@dataclass(frozen=True)
class PidUrl:
    scheme: PidScheme
    raw: str
    url_form: str

    @classmethod
    def from_raw(cls, scheme, raw: str) -> "PidUrl":
        """Build the HTTP form of an identifier by its scheme's prefix rule."""
        scheme = scheme if isinstance(scheme, PidScheme) else PidScheme.parse(scheme)
        raw = (raw or "").strip()
        if scheme is PidScheme.HTTPURL:
            if not is_http_url(raw):
                raise InvalidUrl(f"not an http(s) URL: {raw!r}")
            return cls(scheme, raw, raw)
        for prefix in _STRIP.get(scheme, ()):
            if raw.lower().startswith(prefix):
                raw = raw[len(prefix):]
                break
        if scheme is PidScheme.PMC and raw.isdigit():
            raw = "PMC" + raw
        if not raw or any(c.isspace() for c in raw):
            raise InvalidUrl(f"malformed {scheme.value} identifier {raw!r}")
        url = _PREFIXES[scheme] + raw
        if not is_http_url(url):
            raise InvalidUrl(f"malformed {scheme.value} identifier {raw!r}")
        return cls(scheme, raw, url)

    @classmethod
    def from_url(cls, url: str) -> "PidUrl":
        return cls.from_raw(PidScheme.HTTPURL, url)


@dataclass(frozen=True)
class ResolutionResult:
    pid: PidUrl
    landing_url: Optional[str]
    hops: int
    elapsed: float
    status: Union[int, str]
    headers: dict = field(default_factory=dict, compare=False, repr=False)
    body: Optional[str] = field(default=None, compare=False, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == 200 and self.landing_url is not None


class InboxSource(str, enum.Enum):
    LINK_HEADER = "LinkHeader"
    HTML_LINK = "HtmlLink"
    GENERATED = "Generated"


@dataclass(frozen=True)
class InboxRef:
    landing_host: str
    inbox_url: str
    source: InboxSource

    def __post_init__(self):
        if not is_http_url(self.inbox_url):
            raise InvalidUrl(f"inbox URL must be http(s): {self.inbox_url!r}")


class Resolver:
    """Follows PID-URL redirects to a landing page.

    Args:
        max_hops: redirect cap; exceeding it yields ``TooManyRedirects``.
        timeout: per-request timeout in seconds.
        session: a ``requests.Session``; tests and the harness mount
            adapters on it to route virtual hosts to local servers.
        cache: remember results per URL for the lifetime of the resolver.
        delay: politeness pause (seconds) between requests to one host.
    """

    def __init__(
        self,
        max_hops: int = DEFAULT_MAX_HOPS,
        timeout: float = DEFAULT_TIMEOUT,
        session: Optional[requests.Session] = None,
        cache: bool = True,
        delay: float = 0.0,
    ):
        self.max_hops = max_hops
        self.timeout = timeout
        self.session = session or requests.Session()
        self.session.headers.setdefault("User-Agent", USER_AGENT)
        self.cache = cache
        self.delay = delay
        self._cache: dict = {}
        self._lock = threading.Lock()
        self._last_hit: dict = {}

    def _polite(self, url: str) -> None:
        if self.delay <= 0:
            return
        host = url_host(url)
        with self._lock:
            now = time.monotonic()
            ready = self._last_hit.get(host, 0.0) + self.delay
            self._last_hit[host] = max(now, ready)
        if ready > now:
            time.sleep(ready - now)

    def _fetch(self, url: str):
        self._polite(url)
        resp = self.session.get(url, allow_redirects=False, timeout=self.timeout, stream=True)
        try:
            body = None
            if resp.status_code == 200 and "html" in resp.headers.get("Content-Type", ""):
                chunks, size = [], 0
                for chunk in resp.iter_content(16384):
                    chunks.append(chunk)
                    size += len(chunk)
                    if size >= _BODY_LIMIT:
                        break
                body = b"".join(chunks).decode(resp.encoding or "utf-8", errors="replace")
            return resp.status_code, dict(resp.headers), body
        finally:
            resp.close()

    def resolve(self, pid: PidUrl) -> ResolutionResult:
        if self.cache:
            with self._lock:
                hit = self._cache.get(pid.url_form)
            if hit is not None:
                return hit
        result = self._resolve(pid)
        if self.cache:
            with self._lock:
                self._cache.setdefault(pid.url_form, result)
        return result

    def _resolve(self, pid: PidUrl) -> ResolutionResult:
        url = pid.url_form
        hops = 0
        start = time.perf_counter()

        def done(status, landing=None, headers=None, body=None):
            return ResolutionResult(pid, landing, hops, time.perf_counter() - start, status, headers or {}, body)

        while True:
            try:
                status, headers, body = self._fetch(url)
            except requests.Timeout:
                return done(TIMEOUT)
            except (requests.RequestException, ValueError) as exc:
                logger.debug("resolve %s failed: %s", url, exc)
                return done(NETWORK_ERROR)
            if status == 200:
                return done(200, url, headers, body)
            location = headers.get("Location") or headers.get("location")
            if 300 <= status < 400 and location:
                if hops >= self.max_hops:
                    return done(TOO_MANY_REDIRECTS)
                url = urljoin(url, location)
                hops += 1
                continue
            return done(status, None, headers)

    def resolve_many(self, pids: Iterable[PidUrl], concurrency: int = 8) -> list:
        """Resolve distinct PIDs with a bounded pool; results sorted by PID."""
        unique = {p.url_form: p for p in pids}
        if not unique:
            return []
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            results = list(pool.map(self.resolve, unique.values()))
        return sorted(results, key=lambda r: (r.pid.scheme.value, r.pid.raw, r.pid.url_form))


def resolve_pid(
    pid: PidUrl,
    max_hops: int = DEFAULT_MAX_HOPS,
    timeout: float = DEFAULT_TIMEOUT,
    session: Optional[requests.Session] = None,
) -> ResolutionResult:
    return Resolver(max_hops=max_hops, timeout=timeout, session=session, cache=False).resolve(pid)


def mean_time_per_request(results) -> tuple:
    """(mean, standard error) of elapsed seconds over ``results``."""
    times = [r.elapsed for r in results]
    if not times:
        return 0.0, 0.0
    mean = statistics.fmean(times)
    if len(times) < 2:
        return mean, 0.0
    return mean, statistics.stdev(times) / len(times) ** 0.5


class _LinkElements(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.base = None
        self.links = []

    def handle_starttag(self, tag, attrs):
        attrs = {k.lower(): (v or "") for k, v in attrs}
        if tag == "base" and self.base is None and attrs.get("href"):
            self.base = attrs["href"]
        elif tag == "link" and "href" in attrs:
            self.links.append((attrs.get("rel", ""), attrs["href"]))

    handle_startendtag = handle_starttag


def _header_values(headers, name: str) -> list:
    if headers is None:
        return []
    items = headers.items() if isinstance(headers, Mapping) else headers
    return [v for k, v in items if k.lower() == name]


def discover_inbox(
    landing_url: str,
    response_headers=None,
    response_body: Optional[str] = None,
    html_fallback: bool = True,
) -> Optional[InboxRef]:
    """Find the LDN inbox advertised by a landing page, if any.

    A Link header with rel ``http://www.w3.org/ns/ldp#inbox`` takes
    precedence over an HTML ``<link>`` element. Relative references are
    resolved against ``landing_url``.
    """
    host = url_host(landing_url)
    for value in _header_values(response_headers, "link"):
        for link in parse_link_header(value):
            if link.has_rel(LDP_INBOX_REL):
                inbox = urljoin(landing_url, link.target)
                if is_http_url(inbox):
                    return InboxRef(host, inbox, InboxSource.LINK_HEADER)
    if html_fallback and response_body:
        parser = _LinkElements()
        try:
            parser.feed(response_body)
            parser.close()
        except Exception:  # noqa: BLE001 - malformed HTML means no inbox
            return None
        base = urljoin(landing_url, parser.base) if parser.base else landing_url
        for rel, href in parser.links:
            if LDP_INBOX_REL in rel.lower().split():
                inbox = urljoin(base, href.strip())
                if is_http_url(inbox):
                    return InboxRef(host, inbox, InboxSource.HTML_LINK)
    return None


def generate_proxy_inbox(landing_url: str, proxy_base: str) -> InboxRef:
    """Inbox hosted on a proxy server on behalf of the landing page's host.

    ``https://arxiv.org/abs/1`` with proxy ``http://localhost:3000`` maps
    to ``http://localhost:3000/arxiv.org/inbox``. A non-default port stays
    part of the host segment.
    """
    if not is_http_url(landing_url):
        raise InvalidUrl(f"landing URL has no host: {landing_url!r}")
    if not is_http_url(proxy_base):
        raise InvalidUrl(f"proxy base is not an http(s) URL: {proxy_base!r}")
    host = url_host(landing_url)
    return InboxRef(host, f"{proxy_base.rstrip('/')}/{host}/inbox", InboxSource.GENERATED)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

RESOLVED_COLUMNS = ("scheme", "raw", "url_form", "landing_url", "hops", "status", "elapsed_ms")
INBOX_COLUMNS = ("landing_host", "inbox_url", "source")


def read_pids_csv(path) -> list:
    """Read ``scheme,raw`` rows (header required); bare URLs are HTTPURL."""
    pids = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            scheme = (row.get("scheme") or "HTTPURL").strip()
            pids.append(PidUrl.from_raw(scheme, row["raw"]))
    return pids


def write_resolved_csv(results, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESOLVED_COLUMNS)
        for r in results:
            w.writerow(
                [r.pid.scheme.value, r.pid.raw, r.pid.url_form, r.landing_url or "", r.hops, r.status, round(r.elapsed * 1000, 3)]
            )


def read_resolved_csv(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            status = row["status"]
            pid = PidUrl(PidScheme.parse(row["scheme"]), row["raw"], row["url_form"])
            out.append(
                ResolutionResult(
                    pid,
                    row["landing_url"] or None,
                    int(row["hops"]),
                    float(row["elapsed_ms"]) / 1000,
                    int(status) if status.isdigit() else status,
                )
            )
    return out


def write_inboxes_csv(refs: Iterable[InboxRef], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(INBOX_COLUMNS)
        for ref in refs:
            w.writerow([ref.landing_host, ref.inbox_url, ref.source.value])


def read_inboxes_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        return {
            row["landing_host"]: InboxRef(row["landing_host"], row["inbox_url"], InboxSource(row["source"]))
            for row in csv.DictReader(fh)
        }


def landing_host(url: str) -> str:
    if not urlsplit(url).hostname:
        raise InvalidUrl(f"URL has no host: {url!r}")
    return url_host(url)
