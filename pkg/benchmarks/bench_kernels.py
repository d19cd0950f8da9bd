"""Compare the compiled recurrence kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the median wall time per call for each kernel and size, the speedup,
and the largest absolute difference between the two backends.
"""

import argparse
import statistics
import time

import numpy as np

from srnn import _pykernels

try:
    from srnn import _ckernels
except ImportError:
    _ckernels = None

SIZES = [(100, 100, 8), (100, 100, 32), (100, 20, 128), (50, 1, 512)]


def _time(fn, repeat):
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _cases(T, B, H, rng):
    xw4 = rng.standard_normal((T, B, 4 * H))
    U4 = rng.uniform(-0.08, 0.08, (4 * H, H))
    xw1 = rng.standard_normal((T, B, H))
    U1 = rng.uniform(-0.08, 0.08, (H, H))
    h0 = np.zeros((B, H))
    c0 = np.zeros((B, H))
    dh = rng.standard_normal((T, B, H))
    return {
        "lstm_forward": lambda k: k.lstm_forward(xw4, U4, h0, c0),
        "lstm_backward": lambda k: k.lstm_backward(*_pykernels.lstm_forward(xw4, U4, h0, c0)[:2], c0, U4, dh, dh),
        "rnn_forward": lambda k: k.rnn_forward(xw1, U1, h0),
        "rnn_backward": lambda k: k.rnn_backward(_pykernels.rnn_forward(xw1, U1, h0), U1, dh),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the NumPy backend is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'T,B,H':<14} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>10}")
    for T, B, H in SIZES:
        for name, call in _cases(T, B, H, rng).items():
            py = _time(lambda: call(_pykernels), args.repeat)
            cy = _time(lambda: call(_ckernels), args.repeat)
            a, b = call(_pykernels), call(_ckernels)
            a = a if isinstance(a, tuple) else (a,)
            b = b if isinstance(b, tuple) else (b,)
            diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
            print(f"{name:<14} {f'{T},{B},{H}':<14} {py * 1e3:>10.2f} {cy * 1e3:>10.2f} {py / cy:>7.2f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()
