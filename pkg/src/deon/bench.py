"""Open-loop load generator and metrics pipeline.

Four configuration arms cross the two storage choices: public vs private
chaincode, payload routed through the content store or not. Arrivals are
paced open-loop (uniform by default, Poisson optional) and round-robined
across every node; each sample records submit time, commit time and flag.
Throughput counts only valid committed transactions over the span from first
submit to last commit; latency percentiles are over valid commits.
"""

from __future__ import annotations

import csv
import io
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadRequestError
from .harness import NetConfig, Network

ARMS = ("baseline", "cas", "private", "private+cas")


def arm_flags(arm: str) -> tuple[bool, bool]:
    """-> (private, use_cas)."""
    if arm not in ARMS:
        raise BadRequestError(f"unknown arm {arm!r}; pick one of {', '.join(ARMS)}")
    return "private" in arm, "cas" in arm


@dataclass
class BenchConfig:
    rate: float = 100.0          # offered tx/s
    total: int = 1000
    arm: str = "baseline"
    max_block_txs: int = 50
    n_nodes: int = 3
    seed: int = 42
    mode: str = "sim"            # "sim" | "wall"
    profile: str = "desk"
    arrival: str = "uniform"     # "uniform" | "poisson"
    payload_bytes: int = 256
    drain_timeout: float = 90.0  # grace after the last arrival
    # Past saturation an open-loop generator drives the queues arbitrarily
    # deep; with interactive timeouts that reads as a wall of forced failures
    # rather than the queueing delay it actually is, so runs use patient ones.
    endorse_timeout: float = 60.0
    receipt_timeout: float = 60.0
    cas_timeout: float = 30.0

    def __post_init__(self):
        if self.rate <= 0:
            raise BadRequestError("rate must be positive")
        if self.total <= 0:
            raise BadRequestError("total must be positive")
        arm_flags(self.arm)
        if self.arrival not in ("uniform", "poisson"):
            raise BadRequestError("arrival must be uniform or poisson")


@dataclass
class Sample:
    idx: int
    key: str
    node: str
    submit_t: float
    commit_t: float | None = None
    flag: str | None = None
    error: str | None = None

    @property
    def latency_ms(self) -> float | None:
        if self.commit_t is None:
            return None
        return (self.commit_t - self.submit_t) * 1000.0


@dataclass
class RunMetrics:
    config: BenchConfig
    samples: list[Sample]
    committed_valid: int = 0
    committed_invalid: int = 0
    failed: int = 0
    in_flight: int = 0
    achieved_tps: float = 0.0
    p50_ms: float = 0.0
    p95_ms: float = 0.0
    p99_ms: float = 0.0
    span_s: float = 0.0

    @property
    def valid_run(self) -> bool:
        return self.failed <= self.config.total // 2

    def conservation_holds(self) -> bool:
        return (self.committed_valid + self.committed_invalid
                + self.failed + self.in_flight) == self.config.total

    def row(self) -> dict:
        return {
            "rate": fmt(self.config.rate),
            "arm": self.config.arm,
            "block_size": str(self.config.max_block_txs),
            "achieved_tps": fmt(self.achieved_tps),
            "p50_ms": fmt(self.p50_ms),
            "p95_ms": fmt(self.p95_ms),
            "p99_ms": fmt(self.p99_ms),
            "invalid": str(self.committed_invalid),
            "failed": str(self.failed),
        }


CSV_COLUMNS = ["rate", "arm", "block_size", "achieved_tps",
               "p50_ms", "p95_ms", "p99_ms", "invalid", "failed"]


def fmt(x: float) -> str:
    return f"{x:.3f}"


def _arrivals(cfg: BenchConfig) -> list[float]:
    rng = random.Random(cfg.seed ^ 0x5EED)
    if cfg.arrival == "uniform":
        return [i / cfg.rate for i in range(cfg.total)]
    t, out = 0.0, []
    for _ in range(cfg.total):
        t += rng.expovariate(cfg.rate)
        out.append(t)
    return out


def _payloads(cfg: BenchConfig) -> list[bytes]:
    rng = random.Random(cfg.seed ^ 0xB10B)
    return [rng.randbytes(cfg.payload_bytes) for _ in range(cfg.total)]


def _finalize(cfg: BenchConfig, samples: list[Sample]) -> RunMetrics:
    m = RunMetrics(config=cfg, samples=samples)
    lat = []
    first_submit, last_commit = None, None
    for s in samples:
        if s.flag == "valid":
            m.committed_valid += 1
            lat.append(s.latency_ms)
            first_submit = s.submit_t if first_submit is None else min(
                first_submit, s.submit_t)
            last_commit = s.commit_t if last_commit is None else max(
                last_commit, s.commit_t)
        elif s.flag is not None:
            m.committed_invalid += 1
        elif s.error is not None:
            m.failed += 1
        else:
            m.in_flight += 1
    if lat:
        m.p50_ms, m.p95_ms, m.p99_ms = (
            float(np.percentile(lat, q)) for q in (50, 95, 99))
    if first_submit is not None and last_commit is not None \
            and last_commit > first_submit:
        m.span_s = last_commit - first_submit
        m.achieved_tps = m.committed_valid / m.span_s
    return m


def write_sample_log(metrics: RunMetrics, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", "key", "node", "submit_s", "commit_s",
                    "latency_ms", "flag", "error"])
        for s in metrics.samples:
            w.writerow([
                s.idx, s.key, s.node, fmt(s.submit_t),
                fmt(s.commit_t) if s.commit_t is not None else "",
                fmt(s.latency_ms) if s.latency_ms is not None else "",
                s.flag or "", s.error or "",
            ])


# -- simulated-time runs -------------------------------------------------------------


def _run_sim(cfg: BenchConfig) -> RunMetrics:
    net = Network(NetConfig(
        seed=cfg.seed, mode="sim", n_nodes=cfg.n_nodes,
        max_block_txs=cfg.max_block_txs, profile=cfg.profile, trace=False,
        endorse_timeout=cfg.endorse_timeout,
        receipt_timeout=cfg.receipt_timeout, cas_timeout=cfg.cas_timeout))
    net.run_for(1.5)
    clients = [net.make_client(f"bench{i}") for i in range(cfg.n_nodes)]
    for c in clients:
        net.call(c.onboard())
    net.run_for(0.5)

    private, use_cas = arm_flags(cfg.arm)
    payloads = _payloads(cfg)
    samples: list[Sample] = []
    t0 = net.sched.now() + 0.5

    def launch(i: int, at: float) -> None:
        client = clients[i % len(clients)]
        key = f"bench{cfg.seed}::{i}"
        s = Sample(idx=i, key=key, node=client.home, submit_t=at)
        samples.append(s)
        fut = net.sched.spawn(client.push(
            key, payloads[i], private=private, use_cas=use_cas))

        def done(f):
            if f.exception() is not None:
                s.error = type(f.exception()).__name__
            else:
                s.commit_t = net.sched.now()
                s.flag = f.result()["flag"]

        fut.add_done_callback(done)

    arrivals = _arrivals(cfg)
    for i, dt in enumerate(arrivals):
        net.sched.call_at(t0 + dt, lambda i=i, at=t0 + dt: launch(i, at))

    cutoff = t0 + arrivals[-1] + cfg.drain_timeout
    while net.sched.now() < cutoff:
        net.run_for(1.0)
        if len(samples) == cfg.total and all(
                s.flag is not None or s.error is not None for s in samples):
            break
    return _finalize(cfg, samples)


# -- wall-clock runs ------------------------------------------------------------------


def _run_wall(cfg: BenchConfig) -> RunMetrics:
    import threading

    from .httpapi import HttpClient, serve_network

    net = Network(NetConfig(
        seed=cfg.seed, mode="wall", n_nodes=cfg.n_nodes,
        max_block_txs=cfg.max_block_txs, profile=cfg.profile, trace=False,
        endorse_timeout=cfg.endorse_timeout,
        receipt_timeout=cfg.receipt_timeout, cas_timeout=cfg.cas_timeout))
    net.start()
    http = serve_network(net)
    try:
        deadline = time.monotonic() + 15
        while net.leader_id() is None:
            if time.monotonic() > deadline:
                raise BadRequestError("network failed to elect a leader")
            time.sleep(0.05)
        urls = [http.urls[n] for n in net.node_ids()]
        clients = [HttpClient([u]) for u in urls]
        for c in clients:
            c.onboard(name="bench")

        private, use_cas = arm_flags(cfg.arm)
        payloads = _payloads(cfg)
        arrivals = _arrivals(cfg)
        samples = [Sample(idx=i, key=f"bench{cfg.seed}::{i}",
                          node=net.node_ids()[i % cfg.n_nodes], submit_t=0.0)
                   for i in range(cfg.total)]
        threads: list[threading.Thread] = []
        t0 = time.monotonic() + 0.25

        def work(i: int) -> None:
            client = clients[i % len(clients)]
            s = samples[i]
            s.submit_t = time.monotonic()
            try:
                receipt = client.push(s.key, payloads[i], private=private,
                                      use_cas=use_cas)
                s.commit_t = time.monotonic()
                s.flag = receipt["flag"]
            except Exception as exc:  # noqa: BLE001 - bench records, never raises
                s.error = type(exc).__name__

        for i, dt in enumerate(arrivals):
            delay = (t0 + dt) - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            t = threading.Thread(target=work, args=(i,), daemon=True)
            t.start()
            threads.append(t)
        cutoff = time.monotonic() + cfg.drain_timeout
        for t in threads:
            t.join(timeout=max(0.0, cutoff - time.monotonic()))
        return _finalize(cfg, samples)
    finally:
        http.stop()
        net.stop()


def run_bench(cfg: BenchConfig, sample_log: str | Path | None = None) -> RunMetrics:
    metrics = _run_sim(cfg) if cfg.mode == "sim" else _run_wall(cfg)
    assert metrics.conservation_holds(), "sample accounting does not add up"
    if sample_log is not None:
        write_sample_log(metrics, sample_log)
    return metrics


# -- sweeps ---------------------------------------------------------------------------


@dataclass
class SweepConfig:
    rates: list[float] = field(default_factory=lambda: [50.0, 100.0, 150.0, 200.0])
    arms: list[str] = field(default_factory=lambda: list(ARMS))
    block_sizes: list[int] = field(default_factory=lambda: [10, 50, 100])
    total: int = 1000
    n_nodes: int = 3
    seed: int = 42
    mode: str = "sim"
    profile: str = "rpi"
    arrival: str = "uniform"
    payload_bytes: int = 256

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def sweep(sc: SweepConfig, out_dir: str | Path,
          progress=None) -> list[RunMetrics]:
    """Runs the full grid, writes ``results.csv`` plus the four plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs: list[RunMetrics] = []
    for arm in sc.arms:
        for block_size in sc.block_sizes:
            for rate in sc.rates:
                cfg = BenchConfig(
                    rate=rate, total=sc.total, arm=arm,
                    max_block_txs=block_size, n_nodes=sc.n_nodes,
                    seed=sc.seed, mode=sc.mode, profile=sc.profile,
                    arrival=sc.arrival, payload_bytes=sc.payload_bytes)
                m = run_bench(cfg)
                runs.append(m)
                if progress is not None:
                    progress(m)
    write_csv(runs, out / "results.csv")
    plot_sweep(runs, out)
    return runs


def csv_bytes(runs: list[RunMetrics]) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for m in runs:
        w.writerow(m.row())
    return buf.getvalue().encode()


def write_csv(runs: list[RunMetrics], path: str | Path) -> None:
    Path(path).write_bytes(csv_bytes(runs))


def plot_sweep(runs: list[RunMetrics], out_dir: str | Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    panels = [
        ("fig_a_throughput_public.svg", False, "achieved_tps",
         "throughput (tx/s)", "Throughput, public data"),
        ("fig_b_throughput_private.svg", True, "achieved_tps",
         "throughput (tx/s)", "Throughput, private data"),
        ("fig_c_latency_public.svg", False, "p50_ms",
         "p50 latency (ms)", "Latency, public data"),
        ("fig_d_latency_private.svg", True, "p50_ms",
         "p50 latency (ms)", "Latency, private data"),
    ]
    written = []
    for fname, want_private, attr, ylabel, title in panels:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        series: dict[tuple[str, int], list[tuple[float, float]]] = {}
        for m in runs:
            private, _ = arm_flags(m.config.arm)
            if private != want_private:
                continue
            series.setdefault((m.config.arm, m.config.max_block_txs), []).append(
                (m.config.rate, getattr(m, attr)))
        for (arm, bs), pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=f"{arm}, block={bs}")
        ax.set_xlabel("offered rate (tx/s)")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if series:
            ax.legend(fontsize=7)
        ax.grid(True, alpha=0.3)
        path = out / fname
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written
