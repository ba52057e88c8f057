"""Push notifications to LDN inboxes with retries, receipts and run stats.

Every attempt is appended to a receipt journal (one JSON object per line,
keys in this order: ``notification_id, inbox_url, attempt, status,
location, sent_at, latency_ms``). The final attempt per plan item is the
item's receipt.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Union

import requests

from .serialization import WireDocument, serialize

logger = logging.getLogger(__name__)

MAX_CONCURRENCY = 64
SUCCESS = (200, 201)
# transport failure tags used in place of an HTTP status
TIMEOUT = "Timeout"
CONNECTION_ERROR = "ConnectionError"
TRANSPORT_ERROR = "TransportError"
NO_LOCATION = "NoLocation"

_RETRYABLE_STATUS = {408, 425, 429}


@dataclass(frozen=True)
class DeliveryReceipt:
    notification_id: str
    inbox_url: str
    attempt: int
    status: Union[int, str]
    location: Optional[str]
    sent_at: str
    latency: float

    @property
    def ok(self) -> bool:
        return self.status in SUCCESS

    def to_json(self) -> str:
        return json.dumps(
            {
                "notification_id": self.notification_id,
                "inbox_url": self.inbox_url,
                "attempt": self.attempt,
                "status": self.status,
                "location": self.location,
                "sent_at": self.sent_at,
                "latency_ms": round(self.latency * 1000, 3),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "DeliveryReceipt":
        d = json.loads(line)
        return cls(d["notification_id"], d["inbox_url"], d["attempt"], d["status"], d["location"], d["sent_at"], d["latency_ms"] / 1000)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.25
    factor: float = 2.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        """Pause before retry number ``attempt`` (1-based), with jitter."""
        return self.backoff_base * self.factor ** (attempt - 1) * random.uniform(0.5, 1.0)


@dataclass
class SendPlan:
    items: list
    concurrency: int = 8
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    rate_limit: Optional[float] = None
    format: str = "jsonld"

    def __post_init__(self):
        if not 1 <= self.concurrency <= MAX_CONCURRENCY:
            raise ValueError(f"concurrency must be within 1..{MAX_CONCURRENCY}")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")

    def __len__(self):
        return len(self.items)


@dataclass
class RunStats:
    total: int = 0
    succeeded: int = 0
    failed: int = 0
    attempts: int = 0
    wall_time: float = 0.0

    @property
    def req_per_sec(self) -> float:
        if self.total == 0 or self.wall_time <= 0:
            return 0.0
        return self.total / self.wall_time

    def row(self, label: str = "") -> str:
        """One line in the shape ``label | sent | 108s , 80 req/sec``."""
        return f"{label} | {self.total} | {self.wall_time:.0f}s , {self.req_per_sec:.0f} req/sec"


@dataclass
class DeliveryRun:
    receipts: list
    stats: RunStats

    def __iter__(self):
        return iter((self.receipts, self.stats))


class _RateLimiter:
    def __init__(self, rate: float):
        self.interval = 1.0 / rate
        self._next = time.monotonic()
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            time.sleep(slot - now)


class _Journal:
    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._fh = self.path.open("a", encoding="utf-8") if self.path else None

    def write(self, receipt: DeliveryReceipt) -> None:
        if self._fh is None:
            return
        with self._lock:
            self._fh.write(receipt.to_json() + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def read_journal(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [DeliveryReceipt.from_json(line) for line in fh if line.strip()]


def final_receipts(attempts) -> list:
    """Last attempt per (notification, inbox), in first-seen order."""
    last: dict = {}
    for r in attempts:
        last[(r.notification_id, r.inbox_url)] = r
    return list(last.values())


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _document(item, fmt: str) -> tuple:
    n, ref = item
    if isinstance(n, WireDocument):
        raise TypeError("plan items carry notifications, not raw documents")
    return n.id, ref.inbox_url, serialize(n, fmt)


def send_all(
    plan: SendPlan,
    journal=None,
    session_factory: Callable[[], requests.Session] = requests.Session,
    timeout: float = 30.0,
    sleep: Callable[[float], None] = time.sleep,
) -> DeliveryRun:
    """POST every plan item to its inbox.

    Transport errors, 5xx, 408 and 429 responses are retried with jittered
    exponential backoff up to ``plan.retry.max_attempts``; other statuses
    are final. Failures never raise; they show up in the receipts.
    """
    local = threading.local()
    limiter = _RateLimiter(plan.rate_limit) if plan.rate_limit else None
    log = _Journal(journal)
    counter_lock = threading.Lock()
    attempts_total = 0

    def session() -> requests.Session:
        s = getattr(local, "session", None)
        if s is None:
            s = local.session = session_factory()
        return s

    def post(nid: str, inbox: str, doc: WireDocument, attempt: int) -> DeliveryReceipt:
        if limiter:
            limiter.wait()
        sent_at = _now()
        start = time.perf_counter()
        location = None
        try:
            resp = session().post(inbox, data=doc.body, headers={"Content-Type": doc.media_type}, timeout=timeout)
            status: Union[int, str] = resp.status_code
            location = resp.headers.get("Location")
            resp.close()
            if status in SUCCESS and not location:
                status = NO_LOCATION
        except requests.Timeout:
            status = TIMEOUT
        except requests.ConnectionError:
            status = CONNECTION_ERROR
        except requests.RequestException as exc:
            logger.debug("POST %s failed: %s", inbox, exc)
            status = TRANSPORT_ERROR
        return DeliveryReceipt(nid, inbox, attempt, status, location, sent_at, time.perf_counter() - start)

    def deliver(item) -> DeliveryReceipt:
        nonlocal attempts_total
        nid, inbox, doc = _document(item, plan.format)
        attempt = 1
        while True:
            receipt = post(nid, inbox, doc, attempt)
            log.write(receipt)
            with counter_lock:
                attempts_total += 1
            retryable = isinstance(receipt.status, str) or receipt.status >= 500 or receipt.status in _RETRYABLE_STATUS
            if receipt.ok or not retryable or attempt >= plan.retry.max_attempts:
                return receipt
            sleep(plan.retry.delay(attempt))
            attempt += 1

    start = time.perf_counter()
    try:
        if plan.items:
            with ThreadPoolExecutor(max_workers=plan.concurrency) as pool:
                receipts = list(pool.map(deliver, plan.items))
        else:
            receipts = []
    finally:
        log.close()
    wall = time.perf_counter() - start
    ok = sum(1 for r in receipts if r.ok)
    stats = RunStats(len(receipts), ok, len(receipts) - ok, attempts_total, wall if receipts else 0.0)
    logger.info("sent %d notifications (%d ok) in %.2fs", stats.total, stats.succeeded, stats.wall_time)
    return DeliveryRun(receipts, stats)


def replay_failures(receipts, plan: SendPlan) -> SendPlan:
    """A plan holding only the items whose final receipt was not a success."""
    final = {(r.notification_id, r.inbox_url): r for r in receipts}
    failed = [item for item in plan.items if not (final.get((item[0].id, item[1].inbox_url)) or _MISSING).ok]
    return replace(plan, items=failed)


class _Missing:
    ok = False


_MISSING = _Missing()
