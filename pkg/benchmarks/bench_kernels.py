"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Shapes are those of the
desk-scale flow network's first two layers on a batch of 8 clips.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from skelflow.tensor import _kernels_py
from skelflow.tensor.kernels import compiled_available

CASES = {
    # name: (padded input shape, kernel, stride, output shape)
    "im2col conv1": ((8, 3, 10, 34, 34), (3, 3, 3), (1, 1, 1), (8, 32, 32)),
    "im2col conv2": ((8, 8, 10, 18, 18), (3, 3, 3), (1, 1, 1), (8, 16, 16)),
}
POOLS = {
    "maxpool 1x2x2": ((8, 8, 8, 32, 32), (1, 2, 2)),
    "maxpool 2x2x2": ((8, 16, 8, 16, 16), (2, 2, 2)),
}


def _time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(repeat: int = 5) -> list[tuple[str, float, float]]:
    if not compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install --no-build-isolation -e .` first")
    from skelflow.tensor import _kernels as cy  # type: ignore[attr-defined]

    rng = np.random.default_rng(0)
    rows = []
    for name, (shape, kernel, stride, out_shape) in CASES.items():
        xp = rng.standard_normal(shape)
        py = _time(lambda: _kernels_py.im2col3d(xp, kernel, stride, out_shape), repeat)
        c = _time(lambda: cy.im2col3d(xp, kernel, stride, out_shape), repeat)
        cols = _kernels_py.im2col3d(xp, kernel, stride, out_shape)
        assert np.array_equal(cols, cy.im2col3d(xp, kernel, stride, out_shape))
        rows.append((name, py, c))
        py = _time(lambda: _kernels_py.col2im3d(cols, shape, kernel, stride, out_shape), repeat)
        c = _time(lambda: cy.col2im3d(cols, shape, kernel, stride, out_shape), repeat)
        rows.append((name.replace("im2col", "col2im"), py, c))
    for name, (shape, pool) in POOLS.items():
        x = rng.standard_normal(shape)
        py = _time(lambda: _kernels_py.maxpool3d_forward(x, pool), repeat)
        c = _time(lambda: cy.maxpool3d_forward(x, pool), repeat)
        rows.append((name, py, c))
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"{'kernel':<16}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, py, c in run(args.repeat):
        print(f"{name:<16}{py * 1e3:>12.2f}{c * 1e3:>12.2f}{py / c:>9.1f}x")


if __name__ == "__main__":
    main()
