"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Times the pairwise hinge kernel, the stride-1 max pool (forward and
backward), a full rank-pooling fit and a classifier training step under
each backend, and checks that both backends agree.
"""

import argparse
import timeit
from contextlib import contextmanager

import numpy as np

from rankfuse import _backend, _fallback
from rankfuse import classifier as cl
from rankfuse import rankpool as rp

try:
    from rankfuse import _kernels
except ImportError:  # extension not built
    _kernels = None

KERNELS = ("rank_hinge", "maxpool2x2_forward", "maxpool2x2_backward")


@contextmanager
def use(module):
    saved = {name: getattr(_backend, name) for name in KERNELS}
    for name in KERNELS:
        setattr(_backend, name, getattr(module, name))
    try:
        yield
    finally:
        for name, fn in saved.items():
            setattr(_backend, name, fn)


def best_of(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def cases(rng):
    scores = rng.normal(size=400)
    pool_in = rng.normal(size=(32, 26, 26, 32))
    out, idx = _fallback.maxpool2x2_forward(pool_in)
    grad = rng.normal(size=out.shape)
    volume = rp.Volume(rng.random((40, 128, 128)))
    fs = rp.extract_slice_features(volume)
    spec = cl.ClassifierSpec.for_input((13, 13, 2, 32))
    x = rng.normal(size=(32,) + spec.input_shape)
    y = np.arange(32) % 2

    def train_step():
        model = cl.ShallowCNN(spec, seed=0)
        model.forward(x, mode="train", rng=np.random.default_rng(0))
        model.backward(y)

    return {
        "rank_hinge (T=400)": (lambda: _backend.rank_hinge(scores), 20),
        "maxpool forward (32x26x26x32)": (lambda: _backend.maxpool2x2_forward(pool_in), 5),
        "maxpool backward (32x26x26x32)": (lambda: _backend.maxpool2x2_backward(grad, idx), 5),
        "rank pooling fit (T=40, 128x128)": (lambda: rp.fit_rank_pooling(fs), 1),
        "classifier train step (batch 32, 13x13x2x32)": (train_step, 1),
    }


def check_parity(rng):
    scores = rng.normal(size=200)
    a, b = _fallback.rank_hinge(scores), _kernels.rank_hinge(scores)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12)
    np.testing.assert_array_equal(a[1], b[1])
    x = rng.normal(size=(4, 9, 7, 5))
    (o1, i1), (o2, i2) = _fallback.maxpool2x2_forward(x), _kernels.maxpool2x2_forward(x)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(i1, i2)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = [("python", _fallback)]
    if _kernels is None:
        print("compiled extension not built; timing the fallback only")
    else:
        check_parity(rng)
        backends.append(("cython", _kernels))

    results = {}
    for label, module in backends:
        with use(module):
            for name, (fn, number) in cases(np.random.default_rng(1)).items():
                results.setdefault(name, {})[label] = best_of(fn, args.repeat, number)

    width = max(len(n) for n in results)
    print(f"{'case':<{width}}  {'python':>10}  {'cython':>10}  {'speedup':>8}")
    for name, times in results.items():
        py = times["python"]
        cy = times.get("cython")
        cy_text = f"{cy * 1e3:8.2f}ms" if cy is not None else f"{'-':>10}"
        speed = f"{py / cy:7.1f}x" if cy else f"{'-':>8}"
        print(f"{name:<{width}}  {py * 1e3:8.2f}ms  {cy_text}  {speed}")


if __name__ == "__main__":
    main()
