"""Synthetic token sources, entropy oracles and the savings report."""

from __future__ import annotations

import csv
import io
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .tokens import TokenGrid

log = logging.getLogger(__name__)

CANVAS = 512


@dataclass(frozen=True)
class MarkovSource:
    """Raster-order copy source.

    Each cell copies a uniformly chosen already-generated 4-neighbor (up or
    left) with probability ``p``, otherwise draws uniformly from ``V``.
    """

    V: int
    p: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("persistence p must lie in [0, 1)")
        if self.V < 2:
            raise ValueError("V must be >= 2")


def gen_markov_grid(src: MarkovSource, h, w, rng=None) -> TokenGrid:
    """One grid; pass ``rng`` to draw a corpus from a single stream."""
    rng = np.random.default_rng(src.seed) if rng is None else rng
    copy = rng.random((h, w)) < src.p
    pick = rng.random((h, w))
    fresh = rng.integers(0, src.V, (h, w))
    g = np.empty((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            nbrs = []
            if i > 0:
                nbrs.append(g[i - 1, j])
            if j > 0:
                nbrs.append(g[i, j - 1])
            if nbrs and copy[i, j]:
                g[i, j] = nbrs[int(pick[i, j] * len(nbrs))]
            else:
                g[i, j] = fresh[i, j]
    return TokenGrid(g, src.V)


def gen_corpus(src: MarkovSource, h, w, n, offset=0):
    """``n`` grids from the source's seed stream, skipping the first ``offset``."""
    rng = np.random.default_rng(src.seed)
    out = [gen_markov_grid(src, h, w, rng) for _ in range(offset + n)]
    return out[offset:]


def _context_key(g, i, j, context):
    if context == "order0":
        return ()
    h, w = g.shape
    if context == "order1":
        return (g[i, j - 1] if j > 0 else -1,)
    if context == "order2":
        return (g[i - 1, j] if i > 0 else -1, g[i, j - 1] if j > 0 else -1)
    raise ValueError(f"unknown context {context!r}")


def empirical_entropy(corpus, context="order0"):
    """Plug-in conditional entropy in bits/token.

    ``order0`` ignores context; ``order1`` conditions on the left neighbor;
    ``order2`` on the (up, left) pair. Cells without a neighbor use -1.
    """
    if not corpus:
        raise ValueError("corpus must be nonempty")
    joint = Counter()
    for grid in corpus:
        g = np.asarray(grid.indices if hasattr(grid, "indices") else grid)
        for i in range(g.shape[0]):
            for j in range(g.shape[1]):
                joint[(_context_key(g, i, j, context), int(g[i, j]))] += 1
    ctx = Counter()
    for (c, _), n in joint.items():
        ctx[c] += n
    total = sum(joint.values())
    h = 0.0
    for (c, _), n in joint.items():
        h -= n / total * np.log2(n / ctx[c])
    return max(h, 0.0)


# -- report -----------------------------------------------------------------------

CSV_FIELDS = ["model", "schedule", "tokens", "bpp", "savings_pct", "header_bits"]


@dataclass
class ReportRow:
    model: str
    schedule: str
    tokens: int
    bpp: float
    savings_pct: float
    header_bits: float


@dataclass
class Report:
    rows: list
    canvas: int = CANVAS

    def row(self, model, schedule=None):
        for r in self.rows:
            if r.model == model and (schedule is None or r.schedule == schedule):
                return r
        raise KeyError((model, schedule))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_FIELDS)
        for r in self.rows:
            wr.writerow([r.model, r.schedule, r.tokens, f"{r.bpp:.8f}", f"{r.savings_pct:.2f}", f"{r.header_bits:.2f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'Method':<34}{'bpp':>12}{'Savings (%)':>14}{'hdr bits':>10}", "-" * 70]
        for r in self.rows:
            name = "Baseline" if r.model == "uniform" else f"{r.model} / {r.schedule}"
            sav = "--" if r.model == "uniform" else f"{r.savings_pct:.2f}"
            lines.append(f"{name:<34}{r.bpp:>12.6f}{sav:>14}{r.header_bits:>10.1f}")
        return "\n".join(lines)


def run_savings_report(entries, corpus, canvas=CANVAS, verify=True, jobs=1):
    """Encode every grid of ``corpus`` under each ``(label, model, schedule)`` entry.

    The first entry must be the uniform baseline. ``bpp`` is the mean coded
    cross-entropy of the spatial tokens over a ``canvas`` x ``canvas`` image;
    ``header_bits`` is the mean container plus coder-termination overhead per
    grid, kept out of the savings column. Every stream is decoded again when
    ``verify`` is set and any mismatch aborts.
    """
    from .coder import decode_batch, encode_batch, savings_percent

    entries = list(entries)
    if not entries or getattr(entries[0][1], "kind", None) != "uniform":
        raise ValueError("the first report entry must be the uniform baseline")

    def measure(entry):
        label, model, sched = entry
        streams, rates = encode_batch(corpus, sched, model)
        if verify:
            for g, d in zip(corpus, decode_batch(streams, model)):
                if not g == d:
                    raise RuntimeError(f"round trip failed for {label} / {sched.spec_string()}")
        bpp = float(np.mean(rates)) / (canvas * canvas)
        overhead = float(np.mean([8 * len(s.to_bytes()) - r for s, r in zip(streams, rates)]))
        return bpp, overhead

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(measure, entries))
    else:
        results = [measure(e) for e in entries]
    base_bpp = results[0][0]
    rows = []
    for (label, _, sched), (bpp, overhead) in zip(entries, results):
        rows.append(ReportRow(label, sched.spec_string(), sched.N, bpp, savings_percent(bpp, base_bpp), overhead))
        log.info("%s / %s: bpp %.6f savings %.2f%%", label, sched.spec_string(), bpp, rows[-1].savings_pct)
    return Report(rows, canvas)


# -- desk-scale benchmark ------------------------------------------------------------

BENCH_SCHEDULES = ("checkerboard", "quincunx", "qlds:2.2:5", "qlds:2.2:12")
ORDER_NAMES = {
    "uniform": ("uniform", None),
    "checkerboard": ("mim", "checkerboard"),
    "quincunx": ("mim", "quincunx"),
    "qlds5": ("mim", "qlds:2.2:5"),
    "qlds12": ("mim", "qlds:2.2:12"),
    "counting": ("counting", None),
}


@dataclass(frozen=True)
class CorpusSpec:
    V: int = 64
    p: float = 0.9
    h: int = 16
    w: int = 16
    train: int = 512
    test: int = 128
    seed: int = 0

    def source(self):
        return MarkovSource(self.V, self.p, self.seed)

    def make(self):
        """``(train, test)`` grids drawn from one seeded stream, test after train."""
        grids = gen_corpus(self.source(), self.h, self.w, self.train + self.test)
        return grids[:self.train], grids[self.train:]


def parse_corpus_spec(text) -> CorpusSpec:
    """``markov`` or ``markov:V=64,p=0.9,h=16,w=16,train=512,test=128,seed=0`` (any subset)."""
    name, _, rest = text.partition(":")
    if name.strip() != "markov":
        raise ValueError(f"unknown corpus kind {name!r}; only 'markov' is available")
    kw = {}
    types = {"V": int, "p": float, "h": int, "w": int, "train": int, "test": int, "seed": int}
    for item in filter(None, (t.strip() for t in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq or key not in types:
            raise ValueError(f"bad corpus field {item!r}; known fields: {', '.join(types)}")
        kw[key] = types[key](val)
    return CorpusSpec(**kw)


def order1_bound(spec: CorpusSpec, train, test):
    """100 * (1 - H1 / log2 V) with H1 estimated on the whole corpus."""
    h1 = empirical_entropy(list(train) + list(test), "order1")
    return 100.0 * (1.0 - h1 / np.log2(spec.V)), h1


def desk_bench(spec: CorpusSpec, mim=None, train_cfg=None, counting_schedule="qlds:2.2:12",
               counting_context="nearest", jobs=1, log_every=0):
    """Train (or take) the entropy models on the train split and report on the test split.

    Returns ``(report, mim_model)``.
    """
    from .coder import UniformModel
    from .probmodel.counting import CountingModel
    from .probmodel.mim import MimModel
    from .schedules import parse_schedule

    train, test = spec.make()
    if mim is None:
        cfg = train_cfg or default_mim_config(spec.seed)
        mim = MimModel(spec.V, spec.h, spec.w, seed=spec.seed, dtype="float32")
        mim.fit(train, cfg, log_every=log_every)
    scheds = {s: parse_schedule(s, spec.h, spec.w) for s in BENCH_SCHEDULES}
    csched = parse_schedule(counting_schedule, spec.h, spec.w)
    counting = CountingModel(spec.V, counting_context).fit(train, csched)
    entries = [("uniform", UniformModel(spec.V), scheds["checkerboard"])]
    entries += [("mim", mim, scheds[s]) for s in BENCH_SCHEDULES]
    entries.append(("counting", counting, csched))
    return run_savings_report(entries, test, jobs=jobs), mim


def default_mim_config(seed=0):
    from .probmodel.optim import TrainConfig

    return TrainConfig(seed=seed, lr=2e-3, steps=1500, batch_size=16, warmup=100)


def check_ordering(report: Report, expr, tol=0.5):
    """Check a chain like ``qlds12>=qlds5>=quincunx>=checkerboard>uniform``.

    ``>=`` allows ``tol`` points of slack, ``>`` is strict. Returns the list
    of violated links (empty when the chain holds).
    """
    tokens = re.split(r"(>=|>)", expr.replace(" ", ""))
    names, ops = tokens[0::2], tokens[1::2]
    for n in names:
        if n not in ORDER_NAMES:
            raise ValueError(f"unknown row {n!r} in ordering; known: {', '.join(ORDER_NAMES)}")

    def sav(name):
        return report.row(*ORDER_NAMES[name]).savings_pct

    bad = []
    for a, op, b in zip(names, ops, names[1:]):
        sa, sb = sav(a), sav(b)
        ok = sa > sb if op == ">" else sa >= sb - tol
        if not ok:
            bad.append(f"{a} ({sa:.2f}%) {op} {b} ({sb:.2f}%) fails")
    return bad
