"""Time the hot kernels with numba on and with the numpy fallback.

Each mode runs in its own interpreter because the switch is read at import:

    python3 benchmarks/bench_kernels.py            # both modes, table
    python3 benchmarks/bench_kernels.py --worker   # one mode, JSON (internal)
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def worker(repeat):
    from maskcodec import kernels
    from maskcodec.coder import RangeDecoder, RangeEncoder
    from maskcodec.probmodel.fields import quantize_probs

    rng = np.random.default_rng(0)
    n, V = 20000, 64
    cum = quantize_probs(rng.dirichlet(np.ones(V), n))
    syms = rng.integers(0, V, n)
    x = rng.normal(size=(4096, 8))
    cb = rng.normal(size=(256, 8))

    def enc():
        e = RangeEncoder()
        e.encode(cum, syms)
        return e.finish()

    payload = enc()

    def dec():
        RangeDecoder(payload).decode(cum)

    # warm-up pays any compile cost outside the timed region
    enc(); dec(); kernels.nearest_codeword(x, cb); kernels.lds_order(48, 48)
    out = {
        "numba": kernels.USE_NUMBA,
        "rc_encode_20k": _best(enc, repeat),
        "rc_decode_20k": _best(dec, repeat),
        "nearest_4096x256": _best(lambda: kernels.nearest_codeword(x, cb), repeat),
        "lds_order_48x48": _best(lambda: kernels.lds_order(48, 48), repeat),
    }
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    if a.worker:
        worker(a.repeat)
        return
    res = {}
    for flag in ("1", "0"):
        env = dict(os.environ, MASKCODEC_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--repeat", str(a.repeat)]
        res[flag] = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout)
    print(f"{'kernel':<20}{'numba (s)':>12}{'fallback (s)':>14}{'speedup':>10}")
    for k in res["1"]:
        if k == "numba":
            continue
        a_, b_ = res["1"][k], res["0"][k]
        print(f"{k:<20}{a_:>12.5f}{b_:>14.5f}{b_ / a_:>9.1f}x")


if __name__ == "__main__":
    main()
