import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from valuenet.as2 import AgentDescriptor, AgentKind, RelationshipObject, build_announce
from valuenet.harness import MockWeb
from valuenet.inbox import InboxConfig, InboxServer

FIXTURES = Path(__file__).parent / "fixtures"

FAIRFIELD = AgentDescriptor("https://fairfield.org/about#us", AgentKind.ORGANIZATION, "Fairfield Archive", "https://fairfield.org/inbox")
FAIRFIELD_SYSTEM = AgentDescriptor("https://fairfield.org/system", AgentKind.SERVICE, "Fairfield Archive System")
SPRINGFIELD = AgentDescriptor(
    "https://springfield.library.net/about#us", AgentKind.ORGANIZATION, "Springfield Library", "https://springfield.library.net/inbox/"
)
ARTIFACT = "https://springfield.library.net/artifact/13-02.html"
MEMENTO = "https://fairfield.org/archive/version/317831-13210"


def memento_announce():
    result = RelationshipObject(ARTIFACT, "https://www.iana.org/memento", MEMENTO)
    return build_announce(FAIRFIELD, ARTIFACT, result, SPRINGFIELD, origin=FAIRFIELD_SYSTEM)


@pytest.fixture
def memento_turtle() -> bytes:
    return (FIXTURES / "memento_announce.ttl").read_bytes()


@pytest.fixture
def inbox_server(tmp_path):
    cfg = InboxConfig(
        inbox_paths=("/inbox",),
        storage_dir=tmp_path / "store",
        artifacts={"/artifact": "/inbox"},
        max_body_bytes=64 * 1024,
    )
    with InboxServer(cfg) as server:
        yield server


@pytest.fixture
def mock_web():
    with MockWeb() as web:
        yield web


class ScriptedInbox:
    """POST endpoint answering from a per-path script of statuses."""

    def __init__(self, script):
        self.script = {k: list(v) for k, v in script.items()}
        self.received = []
        self.lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def do_POST(self):
                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                with outer.lock:
                    queue = outer.script.get(self.path, [])
                    status = queue.pop(0) if len(queue) > 1 else (queue[0] if queue else 201)
                    outer.received.append((self.path, body))
                self.send_response(status)
                if status in (200, 201):
                    self.send_header("Location", f"http://example.org{self.path}/{len(outer.received)}")
                self.send_header("Content-Length", "0")
                self.end_headers()

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.base_url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def scripted_inbox():
    servers = []

    def make(script):
        s = ScriptedInbox(script)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


# -- acceptance summary -----------------------------------------------------

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")


def load_json(path):
    return json.loads(Path(path).read_text())
