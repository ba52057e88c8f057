"""Command line entry point: ``valuenet serve|resolve|ingest|send|simulate``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import discovery
from .delivery import RetryPolicy, SendPlan, send_all
from .discovery import InboxRef, InboxSource, Resolver
from .harness import SimulationConfig, simulate, synthetic_network, verify_delivery
from .inbox import InboxServer, load_config
from .scholix import LinkNetwork, endpoint_pids, fan_out, load_scholix, notification_line, write_skips_csv
from .serialization import notification_from_jsonld


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int) -> None:
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def serve(config_path: str) -> None:
    """Run an LDN inbox server until interrupted."""
    cfg = load_config(config_path)
    server = InboxServer(cfg)
    click.echo(f"serving {', '.join(server.inbox_url(p) for p in cfg.inbox_paths)}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), help="CSV with scheme,raw columns.")
@click.option("--scholix", "scholix_path", type=click.Path(exists=True, dir_okay=False), help="Resolve every artifact URL of a Scholix file.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--inboxes-out", type=click.Path(dir_okay=False), help="Also write discovered inboxes as CSV.")
@click.option("--max-hops", default=discovery.DEFAULT_MAX_HOPS, show_default=True)
@click.option("--timeout", default=discovery.DEFAULT_TIMEOUT, show_default=True)
@click.option("--concurrency", default=8, show_default=True)
@click.option("--delay", default=0.0, show_default=True, help="Politeness delay per host (s).")
@click.option("--no-cache", is_flag=True)
def resolve(in_path, scholix_path, out_path, inboxes_out, max_hops, timeout, concurrency, delay, no_cache) -> None:
    """Resolve PID-URLs to landing pages."""
    if bool(in_path) == bool(scholix_path):
        raise click.UsageError("give exactly one of --in or --scholix")
    pids = discovery.read_pids_csv(in_path) if in_path else endpoint_pids(load_scholix(scholix_path).links)
    resolver = Resolver(max_hops=max_hops, timeout=timeout, cache=not no_cache, delay=delay)
    results = resolver.resolve_many(pids, concurrency=concurrency)
    discovery.write_resolved_csv(results, out_path)
    mean, se = discovery.mean_time_per_request(results)
    ok = sum(r.ok for r in results)
    click.echo(f"resolved {ok}/{len(results)} PIDs, time/req {mean:.3f} ± {se:.3f} s")
    if inboxes_out:
        refs = {}
        for r in results:
            if r.ok:
                ref = discovery.discover_inbox(r.landing_url, r.headers, r.body)
                if ref is not None:
                    refs.setdefault(ref.landing_host, ref)
        discovery.write_inboxes_csv(refs.values(), inboxes_out)
        click.echo(f"discovered {len(refs)} inboxes")


@main.command()
@click.option("--scholix", "scholix_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--resolved", "resolved_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--proxy-base", default="http://localhost:3000", show_default=True)
@click.option("--inboxes", "inboxes_path", type=click.Path(exists=True, dir_okay=False), help="Discovered inboxes CSV; wins over generated ones.")
@click.option("--skips", "skips_path", type=click.Path(dir_okay=False), help="Write the skip report CSV here.")
def ingest(scholix_path, resolved_path, out_path, proxy_base, inboxes_path, skips_path) -> None:
    """Turn Scholix links into addressed notifications (NDJSON)."""
    loaded = load_scholix(scholix_path)
    for err in loaded.errors:
        click.echo(f"schema error: {err}", err=True)
    network = LinkNetwork(loaded.links, skipped=list(loaded.skipped))
    network.add_resolutions(discovery.read_resolved_csv(resolved_path))
    discovered = discovery.read_inboxes_csv(inboxes_path) if inboxes_path else None
    network.generate_inboxes(proxy_base, discovered)
    fo = fan_out(network.links, network.inboxes_by_url())
    with open(out_path, "w", encoding="utf-8") as fh:
        for n, ref in fo.items:
            fh.write(notification_line(n, ref) + "\n")
    if skips_path:
        write_skips_csv(network.skipped + fo.skipped, skips_path)
    click.echo(
        f"{loaded.records} records, {len(network.links)} links, {len(fo)} notifications, "
        f"{len(network.skipped) + len(fo.skipped)} skipped"
    )


def _read_plan(path, overrides) -> list:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            entry = json.loads(line)
            ref = overrides.get(entry.get("landing_host")) or InboxRef(
                entry.get("landing_host", ""), entry["inbox_url"], InboxSource.GENERATED
            )
            items.append((notification_from_jsonld(entry["notification"]), ref))
    return items


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--inboxes", "inboxes_path", type=click.Path(exists=True, dir_okay=False), help="landing_host -> inbox_url overrides.")
@click.option("--concurrency", default=8, show_default=True)
@click.option("--rate", type=float, default=None, help="Requests per second ceiling.")
@click.option("--max-attempts", default=3, show_default=True)
@click.option("--journal", type=click.Path(dir_okay=False), default="receipts.ndjson", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["jsonld", "turtle"]), default="jsonld", show_default=True)
def send(plan_path, inboxes_path, concurrency, rate, max_attempts, journal, fmt) -> None:
    """POST planned notifications to their inboxes."""
    overrides = discovery.read_inboxes_csv(inboxes_path) if inboxes_path else {}
    plan = SendPlan(_read_plan(plan_path, overrides), concurrency, RetryPolicy(max_attempts=max_attempts), rate, fmt)
    run = send_all(plan, journal=journal)
    click.echo(run.stats.row(Path(plan_path).stem))
    if run.stats.failed:
        click.echo(f"{run.stats.failed} deliveries failed; see {journal}", err=True)
        sys.exit(1)


def _fixtures(values) -> dict:
    out = {}
    for v in values:
        name, sep, path = v.partition("=")
        if not sep:
            name, path = Path(v).stem, v
        out[name] = path
    return out


@main.command(name="simulate")
@click.option("--fixture", "fixtures", multiple=True, help="Scholix file, optionally as NAME=PATH. Repeatable.")
@click.option("--report", "report_dir", required=True, type=click.Path(file_okay=False))
@click.option("--redirects", type=click.Path(exists=True, dir_okay=False), help="JSON object: URL -> landing URL.")
@click.option("--synthetic", type=int, default=0, help="Add a synthetic provider with this many links.")
@click.option("--hosts", type=int, default=50, show_default=True, help="Hosts in the synthetic network.")
@click.option("--seed", type=int, default=0)
@click.option("--live", is_flag=True, help="Resolve against the real web instead of the local redirect server.")
@click.option("--concurrency", default=8, show_default=True)
def simulate_cmd(fixtures, report_dir, redirects, synthetic, hosts, seed, live, concurrency) -> None:
    """Run the link distribution experiment against local inboxes."""
    institutions = _fixtures(fixtures)
    redirect_map = json.loads(Path(redirects).read_text("utf-8")) if redirects else {}
    if synthetic:
        records, extra = synthetic_network(synthetic, hosts, seed=seed)
        institutions["Synthetic"] = records
        redirect_map.update(extra)
    if not institutions:
        raise click.UsageError("give at least one --fixture or --synthetic")
    storage = Path(report_dir) / "inboxes"
    cfg = SimulationConfig(
        institutions=institutions,
        redirects=redirect_map,
        storage_dir=storage,
        live_resolution=live,
        send_concurrency=concurrency,
        journal=Path(report_dir) / "receipts.ndjson",
    )
    Path(report_dir).mkdir(parents=True, exist_ok=True)
    report = simulate(cfg)
    problems = verify_delivery(report)
    report.write(report_dir)
    click.echo(report.human())
    if problems:
        for p in problems[:20]:
            click.echo(f"discrepancy: {p.notification_id} in {p.inbox}: {p.problem}", err=True)
        click.echo(f"{len(problems)} discrepancies", err=True)
        sys.exit(1)
    click.echo("all planned notifications verified")


if __name__ == "__main__":
    main()
