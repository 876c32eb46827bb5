"""``deon`` command line tool.

Thin adapters: every subcommand maps onto one operation of the HTTP client,
the network harness or the bench runner. Keys never leave the wallet file;
requests are signed locally and carry only signatures and presentations.
"""

from __future__ import annotations

import base64
import json
import sys
from pathlib import Path

import click

from .errors import DeonError

DEFAULT_WALLET = "~/.deon/wallet.json"
CONFIG_FILE = "deon.toml"


def _read_config() -> dict:
    path = Path(CONFIG_FILE)
    if not path.exists():
        return {}
    try:
        import tomllib
    except ImportError:  # 3.10
        import tomli as tomllib
    with path.open("rb") as fh:
        return tomllib.load(fh).get("deon", {})


class Session:
    """Lazily opens the wallet and the HTTP client for node-facing commands."""

    def __init__(self, node: str | None, wallet_path: str, passphrase: str | None,
                 as_json: bool):
        self.node = node
        self.wallet_path = Path(wallet_path).expanduser()
        self.passphrase = passphrase
        self.as_json = as_json
        self._client = None

    def client(self):
        from .httpapi import HttpClient
        from .walletfile import open_or_create

        if self._client is None:
            if not self.node:
                raise DeonError(
                    "no node endpoint; pass --node, set DEON_NODE, or add "
                    "node = \"http://...\" to deon.toml")
            self.wallet_path.parent.mkdir(parents=True, exist_ok=True)
            wallet = open_or_create(self.wallet_path, self.passphrase or "")
            self._client = HttpClient([self.node], wallet=wallet)
        return self._client

    def save_wallet(self) -> None:
        from .walletfile import save_wallet

        if self._client is not None:
            save_wallet(self._client.wallet, self.wallet_path, self.passphrase or "")

    def emit(self, data: dict, human: str) -> None:
        click.echo(json.dumps(data, sort_keys=True) if self.as_json else human)


def _fail(exc: Exception) -> "None":
    if isinstance(exc, DeonError):
        payload = exc.to_dict() if hasattr(exc, "to_dict") else {
            "code": getattr(exc, "code", "error"), "message": str(exc)}
    else:
        payload = {"code": "error", "message": f"{type(exc).__name__}: {exc}"}
    click.echo(json.dumps(payload, sort_keys=True), err=True)
    sys.exit(1)


def run_guarded(fn):
    try:
        fn()
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - single choke point for exit codes
        _fail(exc)


@click.group()
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
@click.option("--node", envvar="DEON_NODE", default=None,
              help="node base URL (env DEON_NODE)")
@click.option("--wallet", "wallet_path", default=None,
              help=f"wallet file [default {DEFAULT_WALLET}]")
@click.option("--passphrase", envvar="DEON_PASSPHRASE", default=None,
              help="wallet passphrase (env DEON_PASSPHRASE)")
@click.pass_context
def main(ctx, as_json, node, wallet_path, passphrase):
    """Permissioned data platform: identity, pushes, votes, networks, benches."""
    cfg = _read_config()
    ctx.obj = Session(
        node=node or cfg.get("node"),
        wallet_path=wallet_path or cfg.get("wallet", DEFAULT_WALLET),
        passphrase=passphrase if passphrase is not None else cfg.get("passphrase"),
        as_json=as_json)


@main.command()
@click.option("--name", default="cli-user")
@click.option("--kind", default="user")
@click.pass_obj
def onboard(sess: Session, name, kind):
    """Register this wallet's DID and collect a membership credential."""
    def go():
        client = sess.client()
        resp = client.onboard(kind=kind, name=name)
        sess.save_wallet()
        sess.emit({"did": client.did, "credential": resp["credential"]},
                  f"onboarded {client.did}")
    run_guarded(go)


def _parse_meta(pairs) -> dict | None:
    if not pairs:
        return None
    out = {}
    for p in pairs:
        if "=" not in p:
            raise DeonError(f"--meta wants key=value, got {p!r}")
        k, _, v = p.partition("=")
        out[k] = v
    return out


@main.command()
@click.argument("key")
@click.option("--file", "file_", type=click.Path(exists=True, dir_okay=False),
              help="payload from file")
@click.option("--data", help="payload as a literal string")
@click.option("--private/--public", default=True)
@click.option("--cas/--no-cas", "use_cas", default=True,
              help="route payload through the content store")
@click.option("--meta", multiple=True, help="metadata key=value (repeatable)")
@click.pass_obj
def push(sess: Session, key, file_, data, private, use_cas, meta):
    """Write a payload under KEY; prints the commit receipt."""
    def go():
        if (file_ is None) == (data is None):
            raise DeonError("pass exactly one of --file or --data")
        payload = Path(file_).read_bytes() if file_ else data.encode()
        receipt = sess.client().push(key, payload, private=private,
                                     use_cas=use_cas, metadata=_parse_meta(meta))
        human = [f"tx_id      {receipt['tx_id']}",
                 f"block      {receipt['block']}",
                 f"flag       {receipt['flag']}"]
        if receipt.get("cid"):
            human.append(f"cid        {receipt['cid']}")
        if receipt.get("commitment"):
            human.append(f"commitment {receipt['commitment']}")
        sess.emit(receipt, "\n".join(human))
    run_guarded(go)


@main.command()
@click.argument("key")
@click.option("--private/--public", default=True)
@click.option("--raw", is_flag=True, help="write payload bytes to stdout")
@click.pass_obj
def get(sess: Session, key, private, raw):
    """Fetch and verify the payload stored under KEY."""
    def go():
        resp = sess.client().query(key, private=private)
        if raw:
            sys.stdout.buffer.write(base64.b64decode(resp["payload_b64"]))
            return
        text = base64.b64decode(resp["payload_b64"]).decode("utf-8", "replace")
        sess.emit(resp, text)
    run_guarded(go)


@main.group()
def vote():
    """Cast and read audited votes."""


@vote.command("cast")
@click.option("--poll", required=True)
@click.option("--voter", required=True)
@click.option("--choice", required=True)
@click.pass_obj
def vote_cast(sess: Session, poll, voter, choice):
    def go():
        receipt = sess.client().cast_vote(poll, voter, choice)
        sess.emit(receipt, f"vote committed in block {receipt['block']} "
                           f"(tx {receipt['tx_id'][:16]}…)")
    run_guarded(go)


@vote.command("get")
@click.option("--poll", required=True)
@click.option("--voter", required=True)
@click.pass_obj
def vote_get(sess: Session, poll, voter):
    def go():
        resp = sess.client().get_vote(poll, voter)
        sess.emit(resp, resp["choice"])
    run_guarded(go)


# -- network lifecycle ---------------------------------------------------------------


@main.group()
def net():
    """Bring up, script and audit local networks."""


def _build_net(nodes, seed, mode, block, trace=True):
    from .harness import NetConfig, Network

    return Network(NetConfig(n_nodes=nodes, seed=seed, mode=mode,
                             max_block_txs=block, trace=trace))


@net.command("up")
@click.option("--nodes", default=3, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--mode", type=click.Choice(["sim", "wall"]), default="wall",
              show_default=True)
@click.option("--block", default=50, show_default=True, help="max txs per block")
@click.option("--duration", default=None, type=float,
              help="stop after this many seconds (default: run until SIGINT)")
@click.pass_obj
def net_up(sess: Session, nodes, seed, mode, block, duration):
    """Start a network. Wall mode serves one HTTP endpoint per node."""
    def go():
        net = _build_net(nodes, seed, mode, block, trace=False)
        if mode == "sim":
            span = duration if duration is not None else 10.0
            net.run_for(span)
            sess.emit({"mode": "sim", "seconds": span, "leader": net.leader_id(),
                       "heights": net.heights()},
                      f"sim ran {span}s; leader={net.leader_id()} "
                      f"heights={net.heights()}")
            return
        from .httpapi import serve_network

        net.start()
        http = serve_network(net)
        try:
            urls = {n: http.urls[n] for n in net.node_ids()}
            sess.emit({"mode": "wall", "endpoints": urls},
                      "\n".join(f"{n}  {u}" for n, u in urls.items()))
            import time as _time

            deadline = None if duration is None else _time.monotonic() + duration
            while deadline is None or _time.monotonic() < deadline:
                _time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            http.stop()
            net.stop()
    run_guarded(go)


def _scripted_network(sess, script_path, nodes, seed, load, duration):
    """Runs a fault script against a sim network with background traffic."""
    from .harness import ScenarioScript

    net = _build_net(nodes, seed, "sim", 50)
    net.run_for(1.5)
    client = net.make_client("driver")
    net.call(client.onboard())

    script = ScenarioScript(actions=[])
    if script_path:
        script = ScenarioScript.from_json(Path(script_path).read_text())
    net.apply_scenario(script)

    horizon = max([a["t"] for a in script.actions] + [1.0]) + 3.0
    if duration is not None:
        horizon = duration
    outcomes: list[str] = []
    futs = []
    for i in range(load):
        def start(i=i):
            futs.append(net.sched.spawn(
                client.push(f"load::{i}", f"payload {i}".encode())))
        net.sched.call_at(net.sched.now() + 0.2 + i * (horizon - 1.0) / max(load, 1),
                          start)
    net.run_for(horizon)
    net.settle()
    for f in futs:
        if not f.done():
            outcomes.append("in_flight")
        elif f.exception() is not None:
            outcomes.append(type(f.exception()).__name__)
        else:
            outcomes.append(f.result()["flag"])
    return net, outcomes


@net.command("run")
@click.option("--script", "script_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON fault schedule")
@click.option("--nodes", default=3, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--load", default=20, show_default=True,
              help="background transactions to push")
@click.option("--duration", default=None, type=float)
@click.pass_obj
def net_run(sess: Session, script_path, nodes, seed, load, duration):
    """Replay a scripted scenario under load, then audit every replica."""
    def go():
        net, outcomes = _scripted_network(sess, script_path, nodes, seed, load,
                                          duration)
        report = net.audit()
        sess.emit({"outcomes": outcomes, "audit": report.to_dict(),
                   "heights": net.heights()},
                  "\n".join([f"load: {len(outcomes)} submitted, "
                             f"{outcomes.count('valid')} valid",
                             report.summary()]))
        if not report.ok:
            sys.exit(1)
    run_guarded(go)


@net.command("audit")
@click.option("--script", "script_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--nodes", default=3, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--load", default=20, show_default=True)
@click.pass_obj
def net_audit(sess: Session, script_path, nodes, seed, load):
    """Run a scenario and print only the audit verdict. Exit 1 on findings."""
    def go():
        net, _ = _scripted_network(sess, script_path, nodes, seed, load, None)
        report = net.audit()
        sess.emit(report.to_dict(), report.summary())
        if not report.ok:
            sys.exit(1)
    run_guarded(go)


# -- benchmarks ------------------------------------------------------------------------


@main.group()
def bench():
    """Throughput/latency measurements."""


@bench.command("run")
@click.option("--rate", default=100.0, show_default=True)
@click.option("--total", default=1000, show_default=True)
@click.option("--arm", default="baseline", show_default=True)
@click.option("--block", default=50, show_default=True)
@click.option("--mode", type=click.Choice(["sim", "wall"]), default="sim",
              show_default=True)
@click.option("--profile", default="desk", show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--arrival", type=click.Choice(["uniform", "poisson"]),
              default="uniform", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="write metrics CSV")
@click.option("--samples", "samples_path", type=click.Path(dir_okay=False),
              help="write per-transaction sample log")
@click.pass_obj
def bench_run(sess: Session, rate, total, arm, block, mode, profile, seed,
              arrival, out, samples_path):
    """One measurement point."""
    def go():
        from .bench import BenchConfig, run_bench, write_csv

        cfg = BenchConfig(rate=rate, total=total, arm=arm, max_block_txs=block,
                          mode=mode, profile=profile, seed=seed, arrival=arrival)
        m = run_bench(cfg, sample_log=samples_path)
        if out:
            write_csv([m], out)
        row = m.row()
        sess.emit({**row, "valid_run": m.valid_run},
                  "  ".join(f"{k}={v}" for k, v in row.items()))
        if not m.valid_run:
            sys.exit(1)
    run_guarded(go)


@bench.command("sweep")
@click.option("--rates", default="50,100,150,200", show_default=True)
@click.option("--arms", default=",".join(("baseline", "cas", "private",
                                          "private+cas")), show_default=True)
@click.option("--blocks", default="10,50,100", show_default=True)
@click.option("--total", default=1000, show_default=True)
@click.option("--mode", type=click.Choice(["sim", "wall"]), default="sim",
              show_default=True)
@click.option("--profile", default="rpi", show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", "out_dir", default="bench_out", show_default=True,
              help="directory for results.csv and plots")
@click.pass_obj
def bench_sweep(sess: Session, rates, arms, blocks, total, mode, profile, seed,
                out_dir):
    """The full measurement grid; writes results.csv plus four SVG panels."""
    def go():
        from .bench import SweepConfig, sweep

        sc = SweepConfig(
            rates=[float(r) for r in rates.split(",") if r],
            arms=[a for a in arms.split(",") if a],
            block_sizes=[int(b) for b in blocks.split(",") if b],
            total=total, mode=mode, profile=profile, seed=seed)
        progress = None
        if not sess.as_json:
            progress = lambda m: click.echo(  # noqa: E731
                "  ".join(f"{k}={v}" for k, v in m.row().items()))
        runs = sweep(sc, out_dir, progress=progress)
        sess.emit({"runs": len(runs), "out": str(out_dir),
                   "rows": [m.row() for m in runs]},
                  f"{len(runs)} runs -> {out_dir}/results.csv")
    run_guarded(go)


if __name__ == "__main__":
    main()
