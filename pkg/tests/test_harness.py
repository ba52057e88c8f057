import csv
import json
from collections import Counter
from urllib.parse import urlsplit

import pytest
import requests
from click.testing import CliRunner

from valuenet import cli
from valuenet.errors import HarnessSetupError
from valuenet.harness import Discrepancy, MockWeb, Route, SimulationConfig, simulate, synthetic_network, verify_delivery
from valuenet.inbox import InboxConfig, InboxServer, InboxStore
from valuenet.scholix import inverse_relationship, relationship_iri


def expected_membership(records, redirects):
    """Brute force: inbox path -> Counter of (subject, relation, object)."""
    def landing(ident):
        url = ident["IDURL"]
        return redirects.get(url, url), url

    out = {}
    for rec in records:
        (s_land, s_url), (t_land, t_url) = (landing(rec[end]["Identifier"][0]) for end in ("source", "target"))
        rel = relationship_iri(rec["RelationshipType"]["Name"])
        for land, stmt in ((s_land, (s_url, rel, t_url)), (t_land, (t_url, inverse_relationship(rel), s_url))):
            out.setdefault(f"/{urlsplit(land).netloc}/inbox", Counter())[stmt] += 1
    return out


def stored_membership(store):
    from valuenet.serialization import parse

    out = {}
    for inbox in store.inboxes:
        for rec in store.list(inbox):
            o = parse(rec.document).object
            out.setdefault(inbox, Counter())[(o.subject, o.relationship, o.object)] += 1
    return out


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    records, redirects = synthetic_network(10, 6, seed=3)
    storage = tmp_path_factory.mktemp("sim") / "store"
    report = simulate(SimulationConfig({"Small": records}, redirects=redirects, storage_dir=storage))
    return records, redirects, report


def test_synthetic_network_shape():
    records, redirects = synthetic_network(10, 6, seed=3)
    assert len(records) == 10
    hosts = set()
    for rec in records:
        for end in ("source", "target"):
            url = rec[end]["Identifier"][0]["IDURL"]
            hosts.add(urlsplit(redirects.get(url, url)).netloc)
    assert len(hosts) == 6
    assert synthetic_network(10, 6, seed=3) == (records, redirects)


def test_ten_links_six_hosts(small_run):
    records, redirects, report = small_run
    (row,) = report.rows
    assert row.records == 10 and row.links == 10
    assert row.inboxes == 6 and report.total_inboxes == 6
    assert row.planned == 20 and row.sent == 20 and row.delivered == 20
    assert row.skipped == 0 and row.failed == 0
    assert row.conserved
    store = InboxStore(report.storage_dir, report.inbox_base)
    assert stored_membership(store) == expected_membership(records, redirects)
    assert verify_delivery(report) == []


def test_report_tables(small_run, tmp_path):
    _, _, report = small_run
    assert report.resolution_table().splitlines()[0] == (
        "| Scholix Link Provider | #Records | # Artifact URLs | #Resolve time (sec) | time/req |"
    )
    assert report.sending_table().splitlines()[0] == "| Scholix Link Provider | # Sent Notifications | #Post time (sec) & time/req |"
    line = report.sending_table().splitlines()[2]
    assert line.startswith("| Small | 20 | ") and line.endswith(" req/sec |")
    assert "±" in report.resolution_table().splitlines()[2]
    out = report.write(tmp_path / "r")
    data = json.loads((out / "report.json").read_text())
    assert data["rows"][0]["delivered"] == 20 and len(data["deliveries"]) == 20
    assert (out / "report.md").read_text().startswith("Artifact URL resolution")


def test_empty_fixture(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    report = simulate(SimulationConfig({"Empty": empty}, storage_dir=tmp_path / "s"))
    assert report.rows == [] and report.deliveries == []
    assert verify_delivery(report) == []


def test_unreadable_fixture(tmp_path):
    with pytest.raises(HarnessSetupError):
        simulate(SimulationConfig({"Gone": tmp_path / "missing.json"}, storage_dir=tmp_path / "s"))


def test_deleted_file_is_one_discrepancy(tmp_path):
    records, redirects = synthetic_network(5, 4, seed=1)
    report = simulate(SimulationConfig({"P": records}, redirects=redirects, storage_dir=tmp_path / "s"))
    store = InboxStore(report.storage_dir, report.inbox_base)
    victim = store.list(store.inboxes[0])[0]
    victim.file.unlink()
    problems = verify_delivery(report)
    assert problems == [Discrepancy(victim.notification_id, victim.inbox, "stored file missing")]


def test_duplicate_send_still_clean(tmp_path):
    records, redirects = synthetic_network(5, 4, seed=2)
    report = simulate(SimulationConfig({"P": records}, redirects=redirects, storage_dir=tmp_path / "s"))
    store = InboxStore(report.storage_dir)
    rec = store.list(store.inboxes[0])[0]
    with InboxServer(InboxConfig(inbox_paths=(), storage_dir=report.storage_dir)) as server:
        resp = requests.post(server.inbox_url(rec.inbox), data=rec.file.read_bytes(),
                             headers={"Content-Type": rec.media_type}, timeout=10)
        assert resp.status_code == 200
    assert verify_delivery(report) == []


def test_unexpected_and_missing_are_reported(tmp_path):
    records, redirects = synthetic_network(3, 3, seed=5)
    report = simulate(SimulationConfig({"P": records}, redirects=redirects, storage_dir=tmp_path / "s"))
    planned = report.deliveries[0]
    report.deliveries.append(type(planned)("P", "urn:uuid:never-sent", planned.inbox_url, planned.inbox_path, True))
    dropped = report.deliveries.pop(0)
    problems = {(p.notification_id, p.problem) for p in verify_delivery(report)}
    assert problems == {("urn:uuid:never-sent", "missing"), (dropped.notification_id, "unexpected notification")}


def test_unresolvable_endpoints_are_skipped(tmp_path):
    records, redirects = synthetic_network(6, 4, seed=9, doi_fraction=1.0)
    # break one DOI: its resolution now ends in 404
    broken = records[0]["source"]["Identifier"][0]["IDURL"]
    report = simulate(SimulationConfig({"P": records}, redirects=redirects, routes={broken: Route(404)}, storage_dir=tmp_path / "s"))
    (row,) = report.rows
    assert row.planned == 12 and row.skipped == 2 and row.delivered == 10
    assert row.conserved
    assert verify_delivery(report) == []


def test_discovered_inbox_wins(tmp_path):
    records, redirects = synthetic_network(2, 2, seed=4, doi_fraction=0.0)
    landing = records[0]["source"]["Identifier"][0]["IDURL"]
    with InboxServer(InboxConfig(inbox_paths=("/ldn",), storage_dir=tmp_path / "ext")) as ext:
        link = f'<{ext.inbox_url("/ldn")}>; rel="http://www.w3.org/ns/ldp#inbox"'
        report = simulate(SimulationConfig({"P": records}, routes={landing: Route(200, {"Link": link}, "x")}, storage_dir=tmp_path / "s"))
        got = {d.inbox_url for d in report.deliveries}
        assert ext.inbox_url("/ldn") in got
        assert len(ext.store.list("/ldn")) >= 1


def test_multiple_providers(tmp_path):
    a, ra = synthetic_network(4, 3, seed=1, provider="A")
    b, rb = synthetic_network(3, 3, seed=2, provider="B")
    # distinct counters would collide across providers; shift B's hosts
    b = json.loads(json.dumps(b).replace("repo0", "other0"))
    rb = {k.replace("syn.", "synb."): v.replace("repo0", "other0") for k, v in rb.items()}
    b = json.loads(json.dumps(b).replace("syn.", "synb."))
    report = simulate(SimulationConfig({"A": a, "B": b}, redirects={**ra, **rb}, storage_dir=tmp_path / "s"))
    assert [r.provider for r in report.rows] == ["A", "B"]
    assert [r.delivered for r in report.rows] == [8, 6]
    assert verify_delivery(report) == []


def test_mockweb_session_rewrites_any_host():
    with MockWeb({"https://doi.org/10.1/x": Route(302, {"Location": "https://repo.org/x"})}) as web:
        resp = web.session().get("https://doi.org/10.1/x", allow_redirects=False, timeout=5)
        assert resp.status_code == 302 and resp.headers["Location"] == "https://repo.org/x"
        assert web.hits["https://doi.org/10.1/x"] == 1


# -- command line -------------------------------------------------------------


def test_cli_simulate(tmp_path):
    result = CliRunner().invoke(cli.main, ["simulate", "--synthetic", "20", "--hosts", "8", "--report", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    assert "all planned notifications verified" in result.output
    assert "| Synthetic | 40 |" in result.output
    assert (tmp_path / "out" / "report.json").exists()
    assert (tmp_path / "out" / "receipts.ndjson").exists()


def test_cli_simulate_named_fixture(tmp_path):
    records, redirects = synthetic_network(4, 3, seed=8)
    (tmp_path / "f.json").write_text(json.dumps(records))
    (tmp_path / "r.json").write_text(json.dumps(redirects))
    result = CliRunner().invoke(
        cli.main, ["simulate", "--fixture", f"Uni={tmp_path / 'f.json'}", "--redirects", str(tmp_path / "r.json"), "--report", str(tmp_path / "o")]
    )
    assert result.exit_code == 0, result.output
    assert "| Uni | 8 |" in result.output


def test_cli_simulate_exit_code_on_discrepancy(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "verify_delivery", lambda report: [Discrepancy("urn:uuid:1", "/x/inbox", "missing")])
    result = CliRunner().invoke(cli.main, ["simulate", "--synthetic", "2", "--hosts", "2", "--report", str(tmp_path / "o")])
    assert result.exit_code == 1
    assert "1 discrepancies" in result.output


def test_cli_simulate_needs_input(tmp_path):
    result = CliRunner().invoke(cli.main, ["simulate", "--report", str(tmp_path)])
    assert result.exit_code == 2


def test_cli_pipeline(tmp_path, inbox_server):
    """resolve -> ingest -> send against a live inbox server."""
    base = inbox_server.base_url
    urls = [f"{base}/artifact/{i}" for i in range(4)]
    with open(tmp_path / "pids.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "raw"])
        for u in urls:
            w.writerow(["HTTPURL", u])
    records = [
        {
            "RelationshipType": {"Name": "References"},
            "source": {"Identifier": [{"ID": urls[i], "IDScheme": "url", "IDURL": urls[i]}], "Type": "literature"},
            "target": {"Identifier": [{"ID": urls[i + 1], "IDScheme": "url", "IDURL": urls[i + 1]}], "Type": "dataset"},
        }
        for i in range(3)
    ]
    (tmp_path / "links.json").write_text(json.dumps(records))
    runner = CliRunner()

    r = runner.invoke(cli.main, ["resolve", "--in", str(tmp_path / "pids.csv"), "--out", str(tmp_path / "resolved.csv"),
                                 "--inboxes-out", str(tmp_path / "inboxes.csv")])
    assert r.exit_code == 0, r.output
    assert "resolved 4/4" in r.output and "discovered 1 inboxes" in r.output

    r = runner.invoke(cli.main, ["ingest", "--scholix", str(tmp_path / "links.json"), "--resolved", str(tmp_path / "resolved.csv"),
                                 "--inboxes", str(tmp_path / "inboxes.csv"), "--out", str(tmp_path / "plan.ndjson")])
    assert r.exit_code == 0, r.output
    lines = (tmp_path / "plan.ndjson").read_text().splitlines()
    assert len(lines) == 6
    assert {json.loads(l)["inbox_url"] for l in lines} == {inbox_server.inbox_url("/inbox")}

    r = runner.invoke(cli.main, ["send", "--plan", str(tmp_path / "plan.ndjson"), "--concurrency", "2",
                                 "--journal", str(tmp_path / "receipts.ndjson")])
    assert r.exit_code == 0, r.output
    assert r.output.startswith("plan | 6 | ")
    assert len(inbox_server.store.list("/inbox")) == 6


def test_cli_send_failure_exit_code(tmp_path):
    line = {"inbox_url": "http://127.0.0.1:9/inbox", "landing_host": "x",
            "notification": json.loads(__import__("valuenet").serialize(__import__("conftest").memento_announce()).body)}
    (tmp_path / "p.ndjson").write_text(json.dumps(line) + "\n")
    r = CliRunner().invoke(cli.main, ["send", "--plan", str(tmp_path / "p.ndjson"), "--max-attempts", "1",
                                      "--journal", str(tmp_path / "j.ndjson")])
    assert r.exit_code == 1


def test_cli_resolve_needs_one_input(tmp_path):
    r = CliRunner().invoke(cli.main, ["resolve", "--out", str(tmp_path / "x.csv")])
    assert r.exit_code == 2
