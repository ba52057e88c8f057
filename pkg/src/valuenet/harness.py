"""Desk-scale end-to-end run of the Scholix link distribution experiment.

``simulate`` stands up a multi-tenant inbox server acting as the inbox
proxy, resolves every artifact URL (by default against a local redirect
server that plays the role of the web), creates one inbox per landing
host, fans links out into notifications and pushes them. The report has
one row per link provider with the columns of the resolution and sending
tables.
"""

from __future__ import annotations

import json
import logging
import random
import tempfile
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Optional
from urllib.parse import quote, unquote, urlsplit

import requests
from requests.adapters import HTTPAdapter

from .delivery import RetryPolicy, SendPlan, send_all
from .discovery import Resolver, discover_inbox, mean_time_per_request
from .errors import HarnessSetupError
from .inbox import InboxConfig, InboxServer, InboxStore
from .iri import url_host
from .scholix import FanOut, LinkNetwork, endpoint_pids, fan_out, load_scholix

logger = logging.getLogger(__name__)

_VHOST_PREFIX = "/__vhost__/"


# ---------------------------------------------------------------------------
# A local stand-in for the web: scripted responses for arbitrary URLs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Route:
    status: int = 200
    headers: dict = field(default_factory=dict)
    body: str = ""


class _WebHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("mockweb " + fmt, *args)

    def _respond(self, head: bool):
        path = self.path
        url = unquote(path[len(_VHOST_PREFIX):]) if path.startswith(_VHOST_PREFIX) else path
        route = self.server.web.route_for(url)  # type: ignore[attr-defined]
        body = route.body.encode("utf-8")
        self.send_response(route.status)
        for k, v in route.headers.items():
            self.send_header(k, v)
        if body and "Content-Type" not in route.headers:
            self.send_header("Content-Type", "text/html; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if not head:
            self.wfile.write(body)

    def do_GET(self):
        self._respond(False)

    def do_HEAD(self):
        self._respond(True)


class _WebServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256


class MockWeb:
    """Serves scripted responses for any absolute URL on any virtual host.

    Clients reach it through :meth:`session`, whose adapter rewrites every
    request to the local server while redirect ``Location`` values keep
    their original absolute form. URLs without a route get
    ``default`` (a plain 200 landing page).
    """

    def __init__(self, routes: Optional[Mapping[str, Route]] = None, default: Optional[Route] = None):
        self.routes = dict(routes or {})
        self.default = default or Route(200, {}, "<!DOCTYPE html><html><body>landing page</body></html>")
        self.hits: Counter = Counter()
        self._lock = threading.Lock()
        self._httpd = _WebServer(("127.0.0.1", 0), _WebHandler)
        self._httpd.web = self
        self._thread: Optional[threading.Thread] = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def redirect(self, src: str, dst: str, status: int = 302) -> None:
        self.routes[src] = Route(status, {"Location": dst})

    def route_for(self, url: str) -> Route:
        with self._lock:
            self.hits[url] += 1
        return self.routes.get(url, self.default)

    def session(self) -> requests.Session:
        s = requests.Session()
        adapter = _VirtualHostAdapter(self.base_url)
        s.mount("http://", adapter)
        s.mount("https://", adapter)
        return s

    def start(self) -> "MockWeb":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="mockweb", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread is not None:
            self._httpd.shutdown()
            self._thread.join(timeout=5)
            self._thread = None
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class _VirtualHostAdapter(HTTPAdapter):
    def __init__(self, base_url: str):
        super().__init__(pool_maxsize=64)
        self.base_url = base_url

    def send(self, request, **kwargs):
        request = request.copy()
        request.url = self.base_url + _VHOST_PREFIX + quote(request.url, safe="")
        request.headers.pop("Host", None)
        return super().send(request, **kwargs)


# ---------------------------------------------------------------------------
# Synthetic Scholix networks
# ---------------------------------------------------------------------------


def _identifier(url: str) -> dict:
    if url.startswith("https://doi.org/"):
        return {"ID": url[len("https://doi.org/"):], "IDScheme": "doi", "IDURL": url}
    return {"ID": url, "IDScheme": "url", "IDURL": url}


def synthetic_network(n_links: int, n_hosts: int, seed: int = 0, doi_fraction: float = 0.5, provider: str = "Synthetic") -> tuple:
    """Random Scholix records over ``n_hosts`` repository hosts.

    Returns ``(records, redirects)``: records in the Scholix package shape
    and a mapping from DOI URLs to the landing pages they redirect to.
    Every host hosts at least one artifact involved in a link when
    ``2 * n_links >= n_hosts``.
    """
    rng = random.Random(seed)
    hosts = [f"repo{i:03d}.example.org" for i in range(n_hosts)]
    redirects: dict = {}
    counter = 0

    def artifact(host: str) -> str:
        nonlocal counter
        counter += 1
        landing = f"https://{host}/artifact/{counter}"
        if rng.random() < doi_fraction:
            doi_url = f"https://doi.org/10.5555/syn.{counter}"
            redirects[doi_url] = landing
            return doi_url
        return landing

    relations = ["References", "IsReferencedBy", "IsSupplementTo", "IsSupplementedBy", "IsRelatedTo"]
    order = hosts[:]
    rng.shuffle(order)
    records = []
    for i in range(n_links):
        if 2 * i + 1 < len(order):
            src_host, tgt_host = order[2 * i], order[2 * i + 1]
        elif 2 * i < len(order):
            src_host, tgt_host = order[2 * i], rng.choice(hosts)
        else:
            src_host, tgt_host = rng.choice(hosts), rng.choice(hosts)
        source, target = artifact(src_host), artifact(tgt_host)
        records.append(
            {
                "LinkProvider": [{"Name": provider}],
                "LinkPublicationDate": "2022-05-10",
                "RelationshipType": {"Name": rng.choice(relations)},
                "source": {"Identifier": [_identifier(source)], "Type": "literature"},
                "target": {"Identifier": [_identifier(target)], "Type": "dataset"},
            }
        )
    return records, redirects


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class SimulationConfig:
    """Inputs of :func:`simulate`.

    ``institutions`` maps a link-provider label to a Scholix fixture path or
    an in-memory record list. ``redirects`` scripts the local web (URL to
    landing URL); ``routes`` adds arbitrary scripted responses.
    """

    institutions: dict
    proxy_base: Optional[str] = None
    redirects: dict = field(default_factory=dict)
    routes: dict = field(default_factory=dict)
    storage_dir: Optional[Path] = None
    live_resolution: bool = False
    use_discovered: bool = True
    resolve_concurrency: int = 16
    send_concurrency: int = 8
    rate_limit: Optional[float] = None
    max_attempts: int = 3
    journal: Optional[Path] = None


@dataclass
class InstitutionRow:
    provider: str
    records: int
    links: int
    artifact_urls: int
    resolve_time: float
    time_per_req: float
    time_per_req_se: float
    inboxes: int
    planned: int
    sent: int
    delivered: int
    skipped: int
    failed: int
    post_time: float
    req_per_sec: float

    @property
    def conserved(self) -> bool:
        return self.planned == self.delivered + self.skipped + self.failed


@dataclass(frozen=True)
class PlannedDelivery:
    provider: str
    notification_id: str
    inbox_url: str
    inbox_path: str
    delivered: bool


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    deliveries: list = field(default_factory=list)
    storage_dir: Optional[Path] = None
    inbox_base: str = ""
    total_inboxes: int = 0

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "total_inboxes": self.total_inboxes,
            "inbox_base": self.inbox_base,
            "storage_dir": str(self.storage_dir) if self.storage_dir else None,
            "deliveries": [asdict(d) for d in self.deliveries],
        }

    def resolution_table(self) -> str:
        head = "| Scholix Link Provider | #Records | # Artifact URLs | #Resolve time (sec) | time/req |"
        lines = [head, "|---|---:|---:|---:|---:|"]
        for r in self.rows:
            lines.append(
                f"| {r.provider} | {r.records} | {r.artifact_urls} | {r.resolve_time:.3f} | "
                f"{r.time_per_req:.3f} ± {r.time_per_req_se:.3f} s |"
            )
        return "\n".join(lines)

    def sending_table(self) -> str:
        head = "| Scholix Link Provider | # Sent Notifications | #Post time (sec) & time/req |"
        lines = [head, "|---|---:|---|"]
        for r in self.rows:
            lines.append(f"| {r.provider} | {r.sent} | {r.post_time:.2f}s , {r.req_per_sec:.0f} req/sec |")
        return "\n".join(lines)

    def inbox_table(self) -> str:
        lines = ["| Scholix Link Provider | Inboxes | Planned | Delivered | Skipped | Failed |", "|---|---:|---:|---:|---:|---:|"]
        for r in self.rows:
            lines.append(f"| {r.provider} | {r.inboxes} | {r.planned} | {r.delivered} | {r.skipped} | {r.failed} |")
        return "\n".join(lines)

    def human(self) -> str:
        return "\n\n".join(
            [
                "Artifact URL resolution\n\n" + self.resolution_table(),
                "Sending notifications\n\n" + self.sending_table(),
                "Inboxes and delivery accounting\n\n" + self.inbox_table(),
            ]
        )

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        (out / "report.md").write_text(self.human() + "\n", encoding="utf-8")
        return out


def _load_fixture(source) -> object:
    try:
        return load_scholix(source)
    except (OSError, UnicodeDecodeError) as exc:
        raise HarnessSetupError(f"cannot read fixture {source}: {exc}") from exc


def simulate(config: SimulationConfig) -> ExperimentReport:
    """Run resolve -> inbox creation -> fan-out -> send for each provider.

    Raises:
        HarnessSetupError: a fixture is unreadable or a server cannot start.
    """
    loaded = {name: _load_fixture(src) for name, src in config.institutions.items()}
    storage = Path(config.storage_dir) if config.storage_dir else Path(tempfile.mkdtemp(prefix="valuenet-sim-"))
    web = None
    try:
        server = InboxServer(InboxConfig(inbox_paths=(), storage_dir=storage, base_url=None))
        if not config.live_resolution:
            web = MockWeb()
            for src, dst in config.redirects.items():
                web.redirect(src, dst)
            # explicit routes override scripted redirects
            web.routes.update(config.routes)
    except OSError as exc:
        raise HarnessSetupError(f"cannot start local servers: {exc}") from exc

    report = ExperimentReport(storage_dir=storage, inbox_base=server.base_url)
    server.start()
    if web is not None:
        web.start()
    try:
        session = web.session() if web is not None else requests.Session()
        resolver = Resolver(session=session)
        proxy_base = (config.proxy_base or server.base_url).rstrip("/")
        for name, result in loaded.items():
            if result.records == 0:
                logger.info("%s: empty fixture, no row", name)
                continue
            row, planned = _run_institution(name, result, resolver, server, proxy_base, config)
            report.rows.append(row)
            report.deliveries.extend(planned)
        report.total_inboxes = len(server.store.inboxes)
    finally:
        # sender has finished and its journal is closed; now the servers
        server.stop()
        if web is not None:
            web.stop()
    return report


def _run_institution(name, result, resolver, server, proxy_base, config) -> tuple:
    network = LinkNetwork(list(result.links), skipped=list(result.skipped))
    pids = endpoint_pids(network.links)

    t0 = time.perf_counter()
    resolutions = resolver.resolve_many(pids, concurrency=config.resolve_concurrency)
    resolve_time = time.perf_counter() - t0
    network.add_resolutions(resolutions)
    mean, se = mean_time_per_request(resolutions)

    discovered = {}
    if config.use_discovered:
        for r in resolutions:
            if r.ok:
                ref = discover_inbox(r.landing_url, r.headers, r.body)
                if ref is not None:
                    discovered.setdefault(ref.landing_host, ref)
    network.generate_inboxes(proxy_base, discovered)
    for ref in network.inbox_map.values():
        if ref.inbox_url.startswith(proxy_base + "/"):
            server.create_inbox(ref.inbox_url[len(proxy_base):])

    fo: FanOut = fan_out(network.links, network.inboxes_by_url())
    plan = SendPlan(
        fo.items,
        concurrency=config.send_concurrency,
        retry=RetryPolicy(max_attempts=config.max_attempts),
        rate_limit=config.rate_limit,
    )
    run = send_all(plan, journal=config.journal)
    delivered = sum(1 for r in run.receipts if r.ok)
    planned = []
    for (n, ref), receipt in zip(fo.items, run.receipts):
        path = urlsplit(ref.inbox_url).path
        planned.append(PlannedDelivery(name, n.id, ref.inbox_url, path, receipt.ok))

    row = InstitutionRow(
        provider=name,
        records=result.records,
        links=len(network.links),
        artifact_urls=sum(1 for r in resolutions if r.ok),
        resolve_time=resolve_time,
        time_per_req=mean,
        time_per_req_se=se,
        inboxes=len({url_host(r.landing_url) for r in resolutions if r.ok}),
        planned=2 * len(network.links),
        sent=run.stats.total,
        delivered=delivered,
        skipped=len(fo.skipped),
        failed=run.stats.total - delivered,
        post_time=run.stats.wall_time,
        req_per_sec=run.stats.req_per_sec,
    )
    logger.info("%s: %d links, %d inboxes, %d/%d delivered", name, row.links, row.inboxes, delivered, row.planned)
    return row, planned


@dataclass(frozen=True)
class Discrepancy:
    notification_id: str
    inbox: str
    problem: str


def verify_delivery(report: ExperimentReport, store: Optional[InboxStore] = None) -> list:
    """Compare planned deliveries with what the inbox storage holds.

    Empty iff every planned notification sits exactly once in its planned
    inbox (with its stored file present) and nowhere else.
    """
    if store is None:
        store = InboxStore(report.storage_dir, report.inbox_base)
    held: dict = {}
    for inbox in store.inboxes:
        for rec in store.list(inbox):
            held.setdefault((inbox, rec.notification_id), []).append(rec)

    problems = []
    expected = set()
    for d in report.deliveries:
        key = (d.inbox_path, d.notification_id)
        expected.add(key)
        recs = held.get(key, [])
        if not recs:
            problems.append(Discrepancy(d.notification_id, d.inbox_path, "missing"))
        elif len(recs) > 1:
            problems.append(Discrepancy(d.notification_id, d.inbox_path, f"stored {len(recs)} times"))
        elif not recs[0].file.exists():
            problems.append(Discrepancy(d.notification_id, d.inbox_path, "stored file missing"))
    for inbox, nid in sorted(set(held) - expected, key=lambda k: (k[0], str(k[1]))):
        problems.append(Discrepancy(nid, inbox, "unexpected notification"))
    return problems
