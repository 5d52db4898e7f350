"""Regenerate the golden streams. Only run this on a deliberate format change."""

from pathlib import Path

import numpy as np

from maskcodec.coder import UniformModel, encode_grid, hybrid_decode
from maskcodec.harness import MarkovSource, gen_corpus
from maskcodec.probmodel import CountingModel
from maskcodec.schedules import parse_schedule
from maskcodec.tokens import TokenGrid

HERE = Path(__file__).parent

CASES = [
    # name, V, h, w, schedule, model
    ("uniform_checkerboard_8x8_v128", 128, 8, 8, "checkerboard", "uniform"),
    ("uniform_ivar_8x8_v100", 100, 8, 8, "ivar:2,4,6,8", "uniform"),
    ("counting_nearest_qlds12_16x16_v64", 64, 16, 16, "qlds:2.2:12", "counting"),
    ("counting_nearest_quincunx_16x16_v64_k3", 64, 16, 16, "quincunx", "counting"),
]


def counting_model():
    train = gen_corpus(MarkovSource(64, 0.9, seed=11), 16, 16, 32)
    return CountingModel(64, "nearest").fit(train, parse_schedule("qlds:2.2:12", 16, 16))


def build(name, V, h, w, spec, kind):
    if kind == "uniform":
        grid = TokenGrid(np.random.default_rng(sum(map(ord, name))).integers(0, V, (h, w)), V)
        model = UniformModel(V)
    else:
        grid = gen_corpus(MarkovSource(64, 0.9, seed=12), h, w, 1)[0]
        model = counting_model()
    groups = 3 if name.endswith("_k3") else None
    return grid, model, encode_grid(grid, parse_schedule(spec, h, w), model, groups=groups, seed=2024)


if __name__ == "__main__":
    (HERE / "counting_nearest.pcvm").write_bytes(counting_model().to_bytes())
    for case in CASES:
        grid, model, bs = build(*case)
        (HERE / f"{case[0]}.pcv2").write_bytes(bs.to_bytes())
        (HERE / f"{case[0]}.txt").write_text(grid.to_text())
        if bs.groups_transmitted < bs.schedule().K:
            (HERE / f"{case[0]}.hybrid.txt").write_text(hybrid_decode(bs, model).to_text())
