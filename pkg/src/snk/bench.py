"""Single-threaded wall-clock benchmarking of whole-network forward passes."""
from __future__ import annotations

import json
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from snk.analysis import count_flops
from snk.arch import NetworkSpec, forward
from snk.errors import ShapeError
from snk.kernels.threads import backend_threads, single_thread
from snk.tensor import Tensor
from snk.units import ShuffleUnitSpec

DEFAULT_RESOLUTIONS = ((224, 224), (480, 640), (720, 1280))
DEFAULT_WARMUP = 10
DEFAULT_ITERS = 50

# Snapdragon 820, one thread, milliseconds; shown for context only
PUBLISHED_MS = {
    0.5: {(224, 224): 15.2, (480, 640): 87.4, (720, 1280): 260.1},
    1.0: {(224, 224): 37.8, (480, 640): 222.2, (720, 1280): 684.5},
    2.0: {(224, 224): 108.8, (480, 640): 617.0, (720, 1280): 1857.6},
}
PUBLISHED_MFLOPS = {0.5: 38, 1.0: 140, 2.0: 524}
PUBLISHED_GROUPS = 3


def machine_descriptor() -> str:
    u = platform.uname()
    return f"{u.system} {u.release} {u.machine} {platform.processor() or 'cpu'}; python {platform.python_version()}; numpy {np.__version__}"


@dataclass
class BenchEntry:
    model: str
    resolution: tuple[int, int]
    median_ms: float
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float
    iterations: int
    warmup: int
    threads: int
    mult_adds: int
    published_ms: float | None = None

    @property
    def gflops(self) -> float:
        return self.mult_adds / (self.median_ms * 1e-3) / 1e9


@dataclass
class BenchReport:
    machine: str
    entries: list[BenchEntry] = field(default_factory=list)

    def extend(self, other: "BenchReport") -> None:
        self.entries.extend(other.entries)

    def models(self) -> list[str]:
        return list(dict.fromkeys(e.model for e in self.entries))

    def entry(self, model: str, resolution) -> BenchEntry:
        for e in self.entries:
            if e.model == model and tuple(e.resolution) == tuple(resolution):
                return e
        raise KeyError((model, resolution))

    def to_dict(self) -> dict:
        rows = []
        for e in self.entries:
            d = asdict(e)
            d["resolution"] = f"{e.resolution[0]}x{e.resolution[1]}"
            d["effective_gflops"] = round(e.gflops, 4)
            d["published_ms_snapdragon820"] = d.pop("published_ms")
            rows.append(d)
        return {"machine": self.machine, "results": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        head = f"{'model':<24}{'resolution':>11}{'MFLOPs':>9}{'median ms':>11}{'mean ms':>10}{'std ms':>9}{'GFLOP/s':>9}{'published*':>11}"
        lines = [f"machine: {self.machine}", head]
        for e in self.entries:
            published = f"{e.published_ms:.1f}" if e.published_ms is not None else "-"
            lines.append(
                f"{e.model:<24}{e.resolution[0]:>5}x{e.resolution[1]:<5}{e.mult_adds / 1e6:>9.1f}{e.median_ms:>11.2f}"
                f"{e.mean_ms:>10.2f}{e.std_ms:>9.2f}{e.gflops:>9.2f}{published:>11}"
            )
        lines.append("* published: published Snapdragon 820 single-thread timings, not measured here")
        return "\n".join(lines)


def parse_resolution(text: str) -> tuple[int, int]:
    """``"480x640"`` -> ``(480, 640)`` (height first)."""
    try:
        h, w = text.lower().split("x")
        res = int(h), int(w)
    except ValueError:
        raise ValueError(f"resolution must look like HxW, got {text!r}") from None
    if min(res) < 1:
        raise ValueError(f"resolution must be positive, got {text!r}")
    return res


def _published_ms(net: NetworkSpec, res) -> float | None:
    if net.groups != PUBLISHED_GROUPS or net.shallow or not net.units():
        return None
    if not all(isinstance(u, ShuffleUnitSpec) for u in net.units()):
        return None
    return PUBLISHED_MS.get(net.scale, {}).get(tuple(res))


def run_benchmark(
    net: NetworkSpec,
    resolutions: Sequence[tuple[int, int]] = DEFAULT_RESOLUTIONS,
    warmup: int = DEFAULT_WARMUP,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
    model: str | None = None,
) -> BenchReport:
    """Median/mean/std latency of ``forward`` at each resolution, on one thread."""
    if iters < 10:
        raise ValueError(f"need at least 10 timed iterations, got {iters}")
    if warmup < 3:
        raise ValueError(f"need at least 3 warmup iterations, got {warmup}")
    if not net.materialized:
        raise ValueError("network has no weights")
    model = model or net.name or "model"
    report = BenchReport(machine_descriptor())
    rng = np.random.default_rng(seed)
    for res in resolutions:
        h, w = res
        try:
            macs = count_flops(net, (h, w)).total_mult_adds
        except ShapeError as exc:
            raise ShapeError(f"resolution {h}x{w} incompatible with the network: {exc}") from exc
        x = Tensor(rng.standard_normal((1, 3, h, w), dtype=np.float32))
        samples = []
        with single_thread():
            threads = backend_threads()
            for _ in range(warmup):
                forward(net, x)
            for _ in range(iters):
                t0 = time.perf_counter()
                forward(net, x)
                samples.append((time.perf_counter() - t0) * 1e3)
        report.entries.append(
            BenchEntry(
                model=model,
                resolution=(h, w),
                median_ms=statistics.median(samples),
                mean_ms=statistics.fmean(samples),
                std_ms=statistics.pstdev(samples),
                min_ms=min(samples),
                max_ms=max(samples),
                iterations=iters,
                warmup=warmup,
                threads=threads,
                mult_adds=macs,
                published_ms=_published_ms(net, res),
            )
        )
    return report


@dataclass
class Speedup:
    resolution: tuple[int, int]
    measured: float
    theoretical: float
    published_theoretical: float = PUBLISHED_MFLOPS[2.0] / PUBLISHED_MFLOPS[0.5]


def speedup(report: BenchReport, small: str, large: str, resolution) -> Speedup:
    """How much faster ``small`` runs than ``large``, measured and by FLOPs."""
    a, b = report.entry(small, resolution), report.entry(large, resolution)
    return Speedup(tuple(resolution), b.median_ms / a.median_ms, b.mult_adds / a.mult_adds)


def check_invariants(report: BenchReport, flops_order: Sequence[str] | None = None) -> list[str]:
    """Violations of the monotonicity contracts; an empty list means all hold.

    Times must not decrease with pixel count for a model, nor with FLOPs
    across ``flops_order`` (models listed smallest first) at a resolution.
    """
    problems = []
    for e in report.entries:
        if e.threads != 1:
            problems.append(f"{e.model} {e.resolution}: ran with {e.threads} threads")
        if not (e.min_ms <= e.median_ms <= e.max_ms and e.min_ms <= e.mean_ms <= e.max_ms):
            problems.append(f"{e.model} {e.resolution}: summary statistics outside sample range")
    for model in report.models():
        rows = sorted((e for e in report.entries if e.model == model), key=lambda e: e.resolution[0] * e.resolution[1])
        for a, b in zip(rows, rows[1:]):
            if b.median_ms < a.median_ms:
                problems.append(f"{model}: {b.resolution} ({b.median_ms:.2f} ms) faster than {a.resolution} ({a.median_ms:.2f} ms)")
    if flops_order:
        resolutions = dict.fromkeys(tuple(e.resolution) for e in report.entries)
        for res in resolutions:
            rows = [report.entry(m, res) for m in flops_order]
            for a, b in zip(rows, rows[1:]):
                if b.median_ms < a.median_ms:
                    problems.append(f"{res}: {b.model} ({b.median_ms:.2f} ms) faster than {a.model} ({a.median_ms:.2f} ms)")
    return problems
