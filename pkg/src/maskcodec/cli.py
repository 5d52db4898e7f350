"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 bad usage (flags, missing files,
out-of-range values). ``PCV2_LOG`` sets the log level (e.g. ``INFO``).
Summaries are printed as single ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import coder
from .harness import CANVAS, check_ordering, default_mim_config, desk_bench, order1_bound, parse_corpus_spec
from .schedules import ScheduleError, parse_schedule, validate_schedule
from .tokens import TokenGrid

log = logging.getLogger("maskcodec")


class UsageError(Exception):
    pass


def _read(path, mode="r"):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_bytes() if mode == "rb" else p.read_text()


def _load_model(spec, V):
    """``uniform``, ``counting[:CONTEXT]`` or a checkpoint path."""
    from .probmodel import CountingModel, load_model

    if spec == "uniform":
        return coder.UniformModel(V)
    if spec.startswith("counting") and not Path(spec).exists():
        _, _, ctx = spec.partition(":")
        return CountingModel(V, ctx or "order0")
    try:
        return load_model(_read(spec, "rb"))
    except UsageError:
        raise
    except ValueError as exc:
        raise UsageError(f"cannot load model {spec}: {exc}") from None


def _read_grid(path):
    try:
        return TokenGrid.from_text(_read(path))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _read_stream(path):
    return coder.Bitstream.from_bytes(_read(path, "rb"))


def _schedule(spec, h, w):
    try:
        return parse_schedule(spec, h, w)
    except (ScheduleError, ValueError) as exc:
        raise UsageError(f"--schedule {spec}: {exc}") from None


def _summary(**kw):
    parts = []
    for k, v in kw.items():
        parts.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
    print(" ".join(parts))


# -- subcommands ---------------------------------------------------------------------------


def cmd_encode(a):
    grid = _read_grid(a.input)
    sched = _schedule(a.schedule, grid.h, grid.w)
    model = _load_model(a.model, grid.V)
    streams, bits = coder.encode_batch([grid], sched, model, seed=a.seed)
    bs = streams[0]
    Path(a.output).write_bytes(bs.to_bytes())
    area = a.canvas * a.canvas
    bpp = bits[0] / area
    base = coder.rate_uniform(grid.h, grid.w, grid.V, a.canvas, a.canvas)
    _summary(bpp=bpp, savings_pct=coder.savings_percent(bpp, base), payload_bits=bs.payload_bits,
             payload_bpp=bs.payload_bits / area)
    _summary(header_bytes=len(bs.header_bytes()), header_bpp=bs.header_bits / area)
    return 0


def cmd_decode(a):
    bs = _read_stream(a.input)
    model = _load_model(a.model, bs.V)
    grid = coder.decode_grid(bs, model)
    Path(a.output).write_text(grid.to_text())
    _summary(h=grid.h, w=grid.w, V=grid.V, groups=bs.groups_transmitted)
    return 0


def cmd_hybrid(a):
    if a.input.endswith(".pcv2"):
        bs = _read_stream(a.input)
        model = _load_model(a.model, bs.V)
        grid = coder.decode_grid(bs, model)
        spec = a.schedule or bs.schedule().spec_string()
    else:
        grid = _read_grid(a.input)
        model = _load_model(a.model, grid.V)
        spec = a.schedule or "qlds"
    sched = _schedule(spec, grid.h, grid.w)
    k = sched.K if a.groups is None else a.groups
    if not 0 <= k <= sched.K:
        raise UsageError(f"--groups must lie in [0, {sched.K}] for this schedule, got {k}")
    bs = coder.encode_grid(grid, sched, model, groups=k, seed=a.seed)
    if a.stream:
        Path(a.stream).write_bytes(bs.to_bytes())
    out = coder.hybrid_decode(bs, model)
    Path(a.output).write_text(out.to_text())
    area = a.canvas * a.canvas
    _summary(groups=k, K=sched.K, bpp=bs.payload_bits / area, total_bpp=8 * len(bs.to_bytes()) / area)
    return 0


def _corpus_spec(a):
    try:
        return parse_corpus_spec(a.corpus)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"--corpus: {exc}") from None


def _train_cfg(a):
    cfg = default_mim_config(a.seed)
    cfg.steps = a.steps if a.steps is not None else cfg.steps
    cfg.batch_size = a.batch_size
    cfg.lr = a.lr
    return cfg


def _write_curve(path, curve):
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(curve):
            fh.write(f"{i + 1},{v:.6f}\n")


def cmd_train_mim(a):
    from .probmodel import MimModel

    spec = _corpus_spec(a)
    train, _ = spec.make()
    model = MimModel(spec.V, spec.h, spec.w, seed=a.seed, dtype=a.dtype)
    losses = model.fit(train, _train_cfg(a), log_every=100)
    Path(a.output).write_bytes(model.to_bytes())
    if a.curve:
        _write_curve(a.curve, losses)
    _summary(final_loss=float(sum(losses[-50:]) / len(losses[-50:])), hash=f"{model.checkpoint_hash:016x}")
    return 0


def cmd_train_var(a):
    from .probmodel import VarModel

    spec = _corpus_spec(a)
    sched = _schedule(a.schedule, spec.h, spec.w)
    train, _ = spec.make()
    model = VarModel(spec.V, spec.h, spec.w, max_groups=max(sched.K, 16), seed=a.seed,
                     schedule_spec=a.schedule, dtype=a.dtype)
    losses = model.fit(train, _train_cfg(a), log_every=100)
    Path(a.output).write_bytes(model.to_bytes())
    if a.curve:
        _write_curve(a.curve, losses)
    _summary(final_loss=float(sum(losses[-50:]) / len(losses[-50:])), hash=f"{model.checkpoint_hash:016x}")
    return 0


def cmd_train_flow(a):
    import numpy as np

    from .flowlab import FlowConfig, mixture_dataset, ode_sample, train_toy_decoder

    cfg = FlowConfig(seed=a.seed, train_steps=a.steps or 1500, sigma_min=a.sigma_min)
    centers = np.array([[-2.0, 0.0], [2.0, 0.0]])
    data = mixture_dataset(4000, centers, seed=a.seed)
    model = train_toy_decoder(data, cfg, curve_path=a.curve)
    Path(a.output).write_bytes(model.to_bytes())
    hits = 0
    for label in (0, 1):
        x = ode_sample(model, (None, np.full(500, label)), cfg.steps, a.cfg_scale, seed=a.seed + 1 + label, n=500)
        hits += int(np.sum(np.argmin(((x[:, None] - centers[None]) ** 2).sum(-1), 1) == label))
    _summary(final_loss=float(np.mean(model.curve[-100:])), mode_accuracy=hits / 1000.0)
    return 0


def cmd_bench(a):
    from .probmodel import MimModel

    spec = _corpus_spec(a)
    mim = None
    if a.mim:
        mim = MimModel.from_bytes(_read(a.mim, "rb"))
        if (mim.V, mim.h, mim.w) != (spec.V, spec.h, spec.w):
            raise UsageError(f"--mim {a.mim} was trained for V={mim.V} {mim.h}x{mim.w}, corpus differs")
    report, mim = desk_bench(spec, mim, _train_cfg(a), jobs=a.jobs, log_every=100)
    if a.save_mim:
        Path(a.save_mim).write_bytes(mim.to_bytes())
    csv_text = report.to_csv()
    if a.out:
        Path(a.out).write_text(csv_text)
    print(report.to_text())
    bound, h1 = order1_bound(spec, *spec.make())
    _summary(H1=h1, order1_bound_pct=bound, counting_pct=report.row("counting").savings_pct)
    if a.assert_ordering:
        bad = check_ordering(report, a.assert_ordering, a.tolerance)
        for b in bad:
            print(f"ordering violated: {b}", file=sys.stderr)
        if bad:
            return 1
    return 0


def cmd_schedule(a):
    sched = _schedule(a.spec, a.h, a.w)
    problems = validate_schedule(sched)
    _summary(kind=sched.kind, K=sched.K, cumulative=",".join(map(str, sched.cumulative())),
             valid=int(not problems))
    if a.show:
        g = sched.group_of().reshape(a.h, a.w)
        width = len(str(sched.K - 1))
        for row in g:
            print(" ".join(f"{v:>{width}d}" for v in row))
    for p in problems:
        print(p, file=sys.stderr)
    return 0 if not problems else 1


# -- parser ------------------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="maskcodec", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0, help="single source of randomness")
    sub = ap.add_subparsers(dest="command", required=True)

    def model_flag(p):
        p.add_argument("--model", default="uniform", help="uniform, counting[:CONTEXT] or a checkpoint path")

    p = sub.add_parser("encode", help="token file -> .pcv2")
    p.add_argument("input")
    p.add_argument("--schedule", default="qlds")
    model_flag(p)
    p.add_argument("--canvas", type=int, default=CANVAS)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help=".pcv2 -> token file")
    p.add_argument("input")
    model_flag(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("hybrid", help="transmit k groups, sample the rest")
    p.add_argument("input", help="token file or fully transmitted .pcv2")
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--schedule", default=None)
    model_flag(p)
    p.add_argument("--canvas", type=int, default=CANVAS)
    p.add_argument("--stream", help="also write the truncated .pcv2 here")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_hybrid)

    for name, func, what in (("train-mim", cmd_train_mim, "train a masked-token model on a synthetic corpus"),
                             ("train-var", cmd_train_var, "train a next-group model for one schedule")):
        p = sub.add_parser(name, help=what)
        p.add_argument("--corpus", default="markov")
        if name == "train-var":
            p.add_argument("--schedule", default="qlds:2.2:12")
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=16)
        p.add_argument("--lr", type=float, default=2e-3)
        p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
        p.add_argument("--curve", help="write the loss curve as CSV")
        p.add_argument("-o", "--output", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("train-flow", help="train the toy conditional flow decoder")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--sigma-min", type=float, default=1e-5)
    p.add_argument("--cfg-scale", type=float, default=1.0)
    p.add_argument("--curve")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("bench", help="savings report on a synthetic corpus")
    p.add_argument("--corpus", default="markov")
    p.add_argument("--mim", help="use this MIM checkpoint instead of training one")
    p.add_argument("--save-mim")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--out", help="CSV path")
    p.add_argument("--assert-ordering", metavar="CHAIN")
    p.add_argument("--tolerance", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("schedule", help="inspect a masking schedule")
    p.add_argument("spec")
    p.add_argument("--h", type=int, default=8)
    p.add_argument("--w", type=int, default=8)
    p.add_argument("--show", action="store_true")
    p.set_defaults(func=cmd_schedule)
    return ap


def main(argv=None):
    level = os.environ.get("PCV2_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every module error becomes a message and exit 1
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
