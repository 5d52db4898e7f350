from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maskcodec.probmodel.counting import CausalityError, CountingModel
from maskcodec.probmodel.fields import (
    CategoricalField,
    apply_floor,
    cdf_bits,
    kt_cdf,
    p_floor,
    quantize_probs,
    uniform_cdf,
    uniform_field,
)
from maskcodec.schedules import checkerboard_schedule, qlds_schedule, quincunx_schedule


def kt_sequence_prob(seq, V):
    """Exact KT probability of a sequence under a single context."""
    counts = [0] * V
    p = Fraction(1)
    for n, s in enumerate(seq):
        p *= Fraction(2 * counts[s] + 1, 2 * n + V)
        counts[s] += 1
    return p


def test_floor_keeps_rows_normalized(rng):
    p = rng.dirichlet(np.ones(50), 20)
    p[0] = 0.0
    p[0, 3] = 1.0
    q = apply_floor(p)
    assert np.allclose(q.sum(-1), 1.0, atol=1e-12)
    assert q.min() >= p_floor(50) * (1 - 1e-12)
    CategoricalField(np.arange(20), q).check()


def test_field_check_rejects_bad_rows():
    with pytest.raises(ValueError):
        CategoricalField(np.arange(1), np.array([[0.5, 0.6]])).check()
    with pytest.raises(ValueError):
        CategoricalField(np.arange(1), np.array([[1.0, 0.0]])).check()
    uniform_field([0, 1], 4).check()


@given(st.integers(2, 2000), st.integers(0, 2**31))
def test_quantized_tables_are_valid(V, seed):
    p = apply_floor(np.random.default_rng(seed).dirichlet(np.full(V, 0.1), 3))
    cum = quantize_probs(p)
    f = np.diff(cum, axis=-1)
    assert np.all(cum[:, 0] == 0) and np.all(cum[:, -1] == 65536)
    assert f.min() >= 1


def test_uniform_table_for_power_of_two_is_exact():
    cum = uniform_cdf(1, 128)
    assert set(np.diff(cum[0]).tolist()) == {512}
    assert cdf_bits(cum, [5]) == 7.0


def test_kt_table_matches_float_quantization():
    counts = np.array([5, 0, 2, 9])
    p = (counts + 0.5) / (counts.sum() + 2.0)
    assert np.array_equal(kt_cdf(counts), quantize_probs(p))


def test_adaptive_kt_code_length_tracks_exact_oracle():
    # single-context KT on one stream: quantized code length stays within a
    # per-symbol quantization loss of -log2 of the exact sequence probability
    V = 8
    rng = np.random.default_rng(5)
    seq = rng.choice(V, 400, p=[0.6, 0.2, 0.1, 0.05, 0.02, 0.01, 0.01, 0.01]).tolist()
    m = CountingModel(V)
    s = checkerboard_schedule(20, 20)
    sess = m.session(s)
    bits = 0.0
    for pos, sym in zip(range(400), seq):
        bits += cdf_bits(sess.cdf(pos)[None], [sym])
        sess.update(pos, sym)
    exact = -float(np.log2(float(kt_sequence_prob(seq, V))))
    assert abs(bits - exact) <= 400 * 2e-3


def test_left_context_refuses_uncoded_neighbor():
    m = CountingModel(4, "left")
    sess = m.session(checkerboard_schedule(4, 4))
    with pytest.raises(CausalityError):
        sess.cdf(1)  # (0,1) reads (0,0), not coded yet
    sess.update(0, 2)
    sess.cdf(1)


def test_nearest_context_only_reads_coded_positions():
    m = CountingModel(4, "nearest")
    s = quincunx_schedule(4, 4)
    tokens = np.arange(16) % 4
    coded = np.zeros(16, bool)
    assert m.context_of(tokens, coded, 5, 4, 4) == m.n_contexts - 1
    coded[0] = True
    assert m.context_of(tokens, coded, 5, 4, 4) == tokens[0]


def test_fit_and_checkpoint_round_trip(rng):
    s = qlds_schedule(6, 6, 2.2, 4)
    grids = [rng.integers(0, 5, (6, 6)) for _ in range(3)]
    m = CountingModel(5, "nearest_dist").fit(grids, s)
    assert m.counts.sum() == 3 * 36
    back = CountingModel.from_bytes(m.to_bytes())
    assert np.array_equal(back.counts, m.counts)
    assert back.checkpoint_hash == m.checkpoint_hash != 0
    assert CountingModel(5).checkpoint_hash == 0
