"""The compiled kernels against their pure Python / numpy counterparts."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maskcodec import kernels
from maskcodec.coder import RangeDecoder, RangeEncoder
from maskcodec.kernels import MASK32, rc_encode_block, rc_finish
from maskcodec.probmodel.fields import cdf_bits, quantize_probs


def _encode_with(enc_block, finish, cum, syms):
    state = np.array([0, MASK32, -1, 0], dtype=np.int64)
    out = np.empty(2 * len(syms) + 8, dtype=np.uint8)
    n = enc_block(state, cum, syms, out)
    m = finish(state, out[n:])
    return out[:n + m].tobytes()


@given(st.integers(2, 300), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_encoder_jit_and_python_agree(V, n, seed):
    rng = np.random.default_rng(seed)
    cum = quantize_probs(rng.dirichlet(np.full(V, 0.3), n))
    syms = rng.integers(0, V, n)
    a = _encode_with(rc_encode_block, rc_finish, cum, syms)
    b = _encode_with(rc_encode_block.py_func, rc_finish.py_func, cum, syms)
    assert a == b


@given(st.integers(2, 64), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_range_coder_round_trip_and_length(V, n, seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.full(V, 0.2), n)
    cum = quantize_probs(probs)
    # draw from the coding distribution so skewed rows are exercised
    syms = np.array([min(np.searchsorted(c, u, side="right") - 1, V - 1)
                     for c, u in zip(cum, rng.integers(0, 65536, n))])
    enc = RangeEncoder()
    enc.encode(cum, syms)
    payload = enc.finish()
    assert np.array_equal(RangeDecoder(payload).decode(cum), syms)
    bits = cdf_bits(cum, syms)
    assert bits <= 8 * len(payload) <= bits + 32


@pytest.mark.parametrize("block", [1, 7, 500])
def test_long_ff_runs_split_across_calls(block):
    # the top symbol of a uniform table keeps low at 0xFF.. so bytes stay
    # deferred until the stream ends, far beyond one call's own output
    V = 16
    cum = np.tile(np.arange(V + 1, dtype=np.int64) * (65536 // V), (1, 1))
    syms = np.full(500, V - 1)
    enc = RangeEncoder()
    for i in range(0, len(syms), block):
        part = syms[i:i + block]
        enc.encode(np.repeat(cum, len(part), 0), part)
    assert enc.state[3] > 100
    payload = enc.finish()
    assert RangeDecoder(payload).decode(np.repeat(cum, len(syms), 0)).tolist() == syms.tolist()
    assert len(payload) <= 500 * 4 // 8 + 3


def test_extreme_probabilities_carry_propagation():
    # long runs of the near-certain symbol push low towards 0xFF.. and force carries
    V = 4
    p = np.array([1 - 3e-5, 1e-5, 1e-5, 1e-5])
    cum = quantize_probs(np.tile(p, (5000, 1)))
    rng = np.random.default_rng(7)
    syms = np.where(rng.random(5000) < 0.002, 3, 0)
    enc = RangeEncoder()
    enc.encode(cum, syms)
    payload = enc.finish()
    assert np.array_equal(RangeDecoder(payload).decode(cum), syms)


@given(st.integers(1, 300), st.integers(1, 40), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_nearest_codeword_paths_agree(n, V, c, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c))
    cb = rng.normal(size=(V, c))
    cb[V // 2] = cb[0]  # a duplicate row: ties must go to the lower index
    i1, d1 = kernels._nearest_codeword_loops(x, cb)
    i2, d2 = kernels._nearest_codeword_numpy(x, cb)
    i3, d3 = kernels._nearest_codeword_loops.py_func(x, cb)
    assert np.array_equal(i1, i2) and np.array_equal(i1, i3)
    assert np.array_equal(d1, d2) and np.array_equal(d1, d3)


@pytest.mark.parametrize("h,w", [(1, 1), (3, 5), (8, 8), (16, 16), (7, 12)])
def test_lds_order_paths_agree(h, w):
    a = kernels._lds_order_loops(h, w)
    assert np.array_equal(a, kernels._lds_order_numpy(h, w))
    assert np.array_equal(a, kernels._lds_order_loops.py_func(h, w))
    assert sorted(a.tolist()) == list(range(h * w))


def test_fallback_flag_produces_identical_streams(tmp_path):
    """Encode in a subprocess with numba disabled and compare bytes."""
    code = (
        "import numpy as np, sys\n"
        "from maskcodec import kernels\n"
        "from maskcodec.coder import encode_grid, UniformModel\n"
        "from maskcodec.probmodel import CountingModel\n"
        "from maskcodec.schedules import qlds_schedule\n"
        "from maskcodec.tokens import TokenGrid\n"
        "g = TokenGrid(np.random.default_rng(3).integers(0, 16, (8, 8)), 16)\n"
        "s = qlds_schedule(8, 8, 2.2, 5)\n"
        "sys.stdout.write(encode_grid(g, s, CountingModel(16, 'nearest')).to_bytes().hex())\n"
        "sys.stdout.write(' ' + str(kernels.USE_NUMBA))\n"
    )
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, MASKCODEC_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs[flag] = r.stdout.split()
    assert outs["0"][1] == "False" and outs["1"][1] == "True"
    assert outs["0"][0] == outs["1"][0]
