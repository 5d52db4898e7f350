"""Deterministic masking schedules.

A schedule is an ordered partition of the h*w grid positions into groups.
Encoder and decoder rebuild it from ``(kind, params, h, w)``, so every
constructor here is a pure function of those values. Positions are stored as
raster indices ``i * w + j`` in coding order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .kernels import lds_order

CHECKERBOARD = "checkerboard"
QUINCUNX = "quincunx"
QLDS = "qlds"
IMPLICIT_VAR = "implicit_var"

KIND_CODES = {CHECKERBOARD: 0, QUINCUNX: 1, QLDS: 2, IMPLICIT_VAR: 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MaskSchedule:
    h: int
    w: int
    kind: str
    params: tuple
    groups: tuple  # of int64 arrays of raster indices

    @property
    def K(self):
        return len(self.groups)

    @property
    def N(self):
        return self.h * self.w

    def cumulative(self):
        return [int(c) for c in np.cumsum([len(g) for g in self.groups])]

    def group_of(self):
        """Array mapping each raster index to its group number (0-based)."""
        out = np.full(self.N, -1, dtype=np.int64)
        for k, g in enumerate(self.groups):
            out[g] = k
        return out

    def revealed_before(self, k):
        """Boolean h*w mask of positions in groups ``0..k-1``."""
        m = np.zeros(self.N, dtype=bool)
        for g in self.groups[:k]:
            m[g] = True
        return m

    def same_as(self, other):
        return (
            self.h == other.h
            and self.w == other.w
            and self.kind == other.kind
            and self.params == other.params
            and len(self.groups) == len(other.groups)
            and all(np.array_equal(a, b) for a, b in zip(self.groups, other.groups))
        )

    def to_bytes(self) -> bytes:
        return schedule_params_to_bytes(self.kind, self.params)

    def spec_string(self):
        if self.kind == QLDS:
            # shortest text that rounds back to the same float32
            alpha = np.format_float_positional(np.float32(self.params[0]), trim="-")
            return f"qlds:{alpha}:{self.params[1]}"
        if self.kind == IMPLICIT_VAR:
            return "ivar:" + ",".join(f"{a}x{b}" for a, b in self.params)
        return self.kind


def _finish(h, w, kind, params, groups):
    groups = tuple(np.asarray(g, dtype=np.int64) for g in groups if len(g))
    for g in groups:
        g.setflags(write=False)
    return MaskSchedule(h, w, kind, params, groups)


def _check_dims(h, w):
    if h < 1 or w < 1:
        raise ScheduleError(f"grid dims must be >= 1, got {h}x{w}")


def checkerboard_schedule(h, w) -> MaskSchedule:
    _check_dims(h, w)
    i, j = np.divmod(np.arange(h * w), w)
    even = (i + j) % 2 == 0
    return _finish(h, w, CHECKERBOARD, (), [np.flatnonzero(even), np.flatnonzero(~even)])


def quincunx_schedule(h, w) -> MaskSchedule:
    _check_dims(h, w)
    if h % 4 or w % 4:
        raise ScheduleError(f"quincunx needs h and w divisible by 4, got {h}x{w}")
    i, j = np.divmod(np.arange(h * w), w)
    c1 = (i % 4 == 0) & (j % 4 == 0)
    c2 = (i % 4 == 2) & (j % 4 == 2)
    c3 = (i % 2 == 0) & (j % 2 == 0) & ~c1 & ~c2
    c4 = (i % 2 == 1) & (j % 2 == 1)
    c5 = (i + j) % 2 == 1
    return _finish(h, w, QUINCUNX, (), [np.flatnonzero(c) for c in (c1, c2, c3, c4, c5)])


def qlds_sizes(N, alpha, S):
    """Cumulative group sizes ceil(N * (i/S)**alpha), made strictly increasing and ending at N."""
    c = [math.ceil(N * (i / S) ** alpha) for i in range(1, S + 1)]
    c[-1] = N
    prev = 0
    for i in range(S):
        c[i] = max(c[i], prev + 1)
        prev = c[i]
    for i in range(S - 2, -1, -1):
        c[i] = min(c[i], c[i + 1] - 1)
    return c


def qlds_schedule(h, w, alpha=2.2, S=5) -> MaskSchedule:
    _check_dims(h, w)
    N = h * w
    if S < 1:
        raise ScheduleError(f"S must be >= 1, got {S}")
    if not alpha > 0:
        raise ScheduleError(f"alpha must be > 0, got {alpha}")
    if S > N:
        raise ScheduleError(f"S={S} exceeds the number of positions {N}")
    # alpha travels as float32 in the bitstream header
    alpha = float(np.float32(alpha))
    order = lds_order(h, w)
    cum = [0] + qlds_sizes(N, alpha, S)
    groups = [order[cum[i]:cum[i + 1]] for i in range(S)]
    return _finish(h, w, QLDS, (alpha, int(S)), groups)


def axis_index_set(s, n):
    """Subsampled indices {floor(t*n/s) : t < s} along an axis of length n."""
    return sorted({(t * n) // s for t in range(s)})


def _normalize_scales(scales, h, w):
    out = []
    for s in scales:
        if isinstance(s, (tuple, list)):
            a, b = int(s[0]), int(s[1])
        else:
            a = b = int(s)
        out.append((a, b))
    return tuple(out)


def implicit_var_schedule(h, w, scales) -> MaskSchedule:
    _check_dims(h, w)
    sc = _normalize_scales(scales, h, w)
    if not sc:
        raise ScheduleError("scales must be nonempty")
    if sc[-1] != (h, w):
        raise ScheduleError(f"last scale must equal the grid size ({h}, {w}), got {sc[-1]}")
    prev_i, prev_j = set(), set()
    prev = (0, 0)
    revealed = np.zeros((h, w), dtype=bool)
    groups = []
    for sh, sw in sc:
        if sh < 1 or sw < 1 or sh > h or sw > w:
            raise ScheduleError(f"scale ({sh}, {sw}) out of range for {h}x{w}")
        if sh < prev[0] or sw < prev[1] or (sh, sw) == prev:
            raise ScheduleError(f"scales must be strictly increasing, got ({sh}, {sw}) after {prev}")
        ii, jj = axis_index_set(sh, h), axis_index_set(sw, w)
        if not prev_i <= set(ii) or not prev_j <= set(jj):
            raise ScheduleError(f"scale ({sh}, {sw}) does not nest the previous index sets")
        cur = np.zeros((h, w), dtype=bool)
        cur[np.ix_(ii, jj)] = True
        new = cur & ~revealed
        groups.append(np.flatnonzero(new.ravel()))
        revealed |= cur
        prev_i, prev_j, prev = set(ii), set(jj), (sh, sw)
    return _finish(h, w, IMPLICIT_VAR, sc, groups)


def build_schedule(kind, params, h, w) -> MaskSchedule:
    if kind == CHECKERBOARD:
        return checkerboard_schedule(h, w)
    if kind == QUINCUNX:
        return quincunx_schedule(h, w)
    if kind == QLDS:
        return qlds_schedule(h, w, params[0], params[1])
    if kind == IMPLICIT_VAR:
        return implicit_var_schedule(h, w, params)
    raise ScheduleError(f"unknown schedule kind {kind!r}")


def parse_schedule(spec: str, h: int, w: int) -> MaskSchedule:
    """Build a schedule from a spec string.

    Accepted forms: ``checkerboard``, ``quincunx``, ``qlds:ALPHA:S``,
    ``ivar:2,4,6,8`` (square scales) or ``ivar:2x3,4x6`` (per-axis pairs).
    """
    name, _, rest = spec.partition(":")
    name = name.strip().lower()
    if name in (CHECKERBOARD, QUINCUNX) and not rest:
        return build_schedule(name, (), h, w)
    if name == QLDS:
        parts = rest.split(":") if rest else []
        alpha = float(parts[0]) if parts else 2.2
        S = int(parts[1]) if len(parts) > 1 else 5
        return qlds_schedule(h, w, alpha, S)
    if name in ("ivar", IMPLICIT_VAR):
        if not rest:
            raise ScheduleError("ivar needs scales, e.g. ivar:2,4,6,8")
        scales = []
        for tok in rest.split(","):
            if "x" in tok:
                a, b = tok.split("x")
                scales.append((int(a), int(b)))
            else:
                scales.append(int(tok))
        return implicit_var_schedule(h, w, scales)
    raise ScheduleError(f"cannot parse schedule spec {spec!r}")


def schedule_params_to_bytes(kind, params) -> bytes:
    code = KIND_CODES[kind]
    out = struct.pack("<B", code)
    if kind == QLDS:
        out += struct.pack("<fH", params[0], params[1])
    elif kind == IMPLICIT_VAR:
        if len(params) > 255:
            raise ScheduleError("too many scales to serialize")
        out += struct.pack("<B", len(params))
        for a, b in params:
            out += struct.pack("<HH", a, b)
    return out


def schedule_params_from_bytes(buf, offset=0):
    """Parse kind + params; returns ``(kind, params, new_offset)``."""
    (code,) = struct.unpack_from("<B", buf, offset)
    offset += 1
    if code not in KIND_NAMES:
        raise ScheduleError(f"unknown schedule kind byte {code}")
    kind = KIND_NAMES[code]
    params = ()
    if kind == QLDS:
        alpha, S = struct.unpack_from("<fH", buf, offset)
        offset += 6
        params = (float(alpha), int(S))
    elif kind == IMPLICIT_VAR:
        (n,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        pairs = []
        for _ in range(n):
            a, b = struct.unpack_from("<HH", buf, offset)
            offset += 4
            pairs.append((a, b))
        params = tuple(pairs)
    return kind, params, offset


def validate_schedule(s: MaskSchedule) -> list:
    """Return a list of violation strings; empty means the schedule is valid."""
    problems = []
    try:
        N = s.h * s.w
        seen = np.full(N, -1, dtype=np.int64)
        for k, g in enumerate(s.groups):
            g = np.asarray(g)
            if len(g) == 0:
                problems.append(f"group {k} is empty")
                continue
            if g.min() < 0 or g.max() >= N:
                problems.append(f"group {k} has positions outside the {s.h}x{s.w} grid")
                g = g[(g >= 0) & (g < N)]
            for p in g:
                if seen[p] >= 0:
                    problems.append(f"overlap at ({p // s.w},{p % s.w}) between groups {seen[p]} and {k}")
                else:
                    seen[p] = k
        for p in np.flatnonzero(seen < 0):
            problems.append(f"position ({p // s.w},{p % s.w}) not covered")
        try:
            rebuilt = build_schedule(s.kind, s.params, s.h, s.w)
        except Exception as exc:  # noqa: BLE001 - report, never raise
            problems.append(f"cannot rebuild from parameters: {exc}")
        else:
            if not rebuilt.same_as(s):
                problems.append("rebuild from (kind, params) differs from the stored groups")
    except Exception as exc:  # noqa: BLE001
        problems.append(f"malformed schedule: {exc}")
    return problems
