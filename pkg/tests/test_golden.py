"""Committed streams must keep decoding to the same grids, byte for byte."""

import os

import pytest

from conftest import FIXTURES
from fixtures.make_fixtures import CASES, build
from maskcodec.coder import Bitstream, UniformModel, decode_grid, hybrid_decode
from maskcodec.probmodel import load_model
from maskcodec.tokens import TokenGrid


def _read(name, mode="rb"):
    with open(os.path.join(FIXTURES, name), mode) as fh:
        return fh.read()


def _model(kind, V):
    if kind == "uniform":
        return UniformModel(V)
    return load_model(_read("counting_nearest.pcvm"))


@pytest.mark.parametrize("case", CASES, ids=[c[0] for c in CASES])
def test_fixture_decodes_and_reencodes_identically(case):
    name, V, h, w, spec, kind = case
    buf = _read(f"{name}.pcv2")
    bs = Bitstream.from_bytes(buf)
    assert bs.to_bytes() == buf
    model = _model(kind, V)
    grid = TokenGrid.from_text(_read(f"{name}.txt", "r"))
    if bs.groups_transmitted == bs.schedule().K:
        assert decode_grid(bs, model) == grid
    else:
        assert hybrid_decode(bs, model) == TokenGrid.from_text(_read(f"{name}.hybrid.txt", "r"))
    _, _, again = build(*case)
    assert again.to_bytes() == buf


def test_counting_checkpoint_is_stable():
    buf = _read("counting_nearest.pcvm")
    assert load_model(buf).to_bytes() == buf
