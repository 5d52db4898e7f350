import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maskcodec.schedules import (
    MaskSchedule,
    ScheduleError,
    axis_index_set,
    build_schedule,
    checkerboard_schedule,
    implicit_var_schedule,
    parse_schedule,
    qlds_schedule,
    qlds_sizes,
    quincunx_schedule,
    schedule_params_from_bytes,
    schedule_params_to_bytes,
    validate_schedule,
)


def test_reference_cumulative_counts():
    assert checkerboard_schedule(8, 8).cumulative() == [32, 64]
    assert quincunx_schedule(8, 8).cumulative() == [4, 8, 16, 32, 64]
    assert qlds_schedule(8, 8, 2.2, 5).cumulative() == [2, 9, 21, 40, 64]
    assert implicit_var_schedule(8, 8, (2, 4, 6, 8)).cumulative() == [4, 16, 36, 64]


def test_qlds_16x16_twelve_groups():
    # ceil(256 * (i/12)**2.2) with alpha rounded to float32, checked by hand
    expect = [math.ceil(256 * (i / 12) ** float(np.float32(2.2))) for i in range(1, 13)]
    assert qlds_schedule(16, 16, 2.2, 12).cumulative() == expect
    assert expect == [2, 5, 13, 23, 38, 56, 79, 105, 136, 172, 212, 256]


def test_checkerboard_groups_are_colour_classes():
    s = checkerboard_schedule(4, 4)
    i, j = np.divmod(s.groups[0], 4)
    assert np.all((i + j) % 2 == 0)


def test_quincunx_rejects_odd_sizes():
    with pytest.raises(ScheduleError):
        quincunx_schedule(6, 8)


def test_qlds_sizes_stay_strictly_increasing_when_ceil_collides():
    c = qlds_sizes(4, 2.2, 4)
    assert c == [1, 2, 3, 4]


def test_qlds_rejects_bad_params():
    with pytest.raises(ScheduleError):
        qlds_schedule(4, 4, 2.2, 17)
    with pytest.raises(ScheduleError):
        qlds_schedule(4, 4, 0.0, 3)


def test_axis_index_sets_nest():
    assert axis_index_set(2, 8) == [0, 4]
    assert axis_index_set(4, 8) == [0, 2, 4, 6]
    assert set(axis_index_set(4, 8)) >= set(axis_index_set(2, 8))


def test_implicit_var_rejects_non_nested():
    # 3 on 8 gives {0,2,5}, not a superset of {0,4}
    with pytest.raises(ScheduleError, match="nest"):
        implicit_var_schedule(8, 8, (2, 3, 8))


def test_implicit_var_last_scale_must_be_full():
    with pytest.raises(ScheduleError):
        implicit_var_schedule(8, 8, (2, 4))


def test_parse_forms():
    assert parse_schedule("qlds:2.2:5", 8, 8).cumulative() == [2, 9, 21, 40, 64]
    assert parse_schedule("ivar:2,4,6,8", 8, 8).K == 4
    s = parse_schedule("ivar:2x1,4x2,8x4,8x8", 8, 8)
    assert s.cumulative()[0] == 2
    with pytest.raises(ScheduleError):
        parse_schedule("spiral", 8, 8)


def test_validate_reports_overlap_and_gap():
    good = checkerboard_schedule(4, 4)
    assert validate_schedule(good) == []
    g0 = good.groups[0]
    bad = MaskSchedule(4, 4, good.kind, (), (g0, np.concatenate([good.groups[1][1:], g0[:1]])))
    problems = validate_schedule(bad)
    assert any(p.startswith("overlap at") for p in problems)
    assert any("not covered" in p for p in problems)


def test_validate_never_raises_on_garbage():
    junk = MaskSchedule(2, 2, "nope", (), (np.array([0, 7]),))
    assert validate_schedule(junk)


@st.composite
def schedules(draw):
    kind = draw(st.sampled_from(["checkerboard", "quincunx", "qlds", "implicit_var"]))
    if kind == "quincunx":
        h, w = 4 * draw(st.integers(1, 4)), 4 * draw(st.integers(1, 4))
        return quincunx_schedule(h, w)
    h, w = draw(st.integers(1, 12)), draw(st.integers(1, 12))
    if kind == "checkerboard":
        return checkerboard_schedule(h, w)
    if kind == "qlds":
        S = draw(st.integers(1, min(12, h * w)))
        return qlds_schedule(h, w, draw(st.floats(0.5, 4.0)), S)
    n = min(h, w)
    scales = sorted(set(draw(st.lists(st.integers(1, n), max_size=3))))
    scales = [(s, s) for s in scales if s < n] + [(h, w)]
    try:
        return implicit_var_schedule(h, w, scales)
    except ScheduleError:
        return implicit_var_schedule(h, w, [(h, w)])


@given(schedules())
def test_every_schedule_partitions_the_grid(s):
    allpos = np.concatenate(s.groups)
    assert sorted(allpos.tolist()) == list(range(s.h * s.w))
    assert all(len(g) > 0 for g in s.groups)
    assert validate_schedule(s) == []


@given(schedules())
def test_rebuild_from_header_params_is_identical(s):
    buf = schedule_params_to_bytes(s.kind, s.params)
    kind, params, off = schedule_params_from_bytes(buf)
    assert off == len(buf)
    assert build_schedule(kind, params, s.h, s.w).same_as(s)
    assert parse_schedule(s.spec_string(), s.h, s.w).same_as(s)
