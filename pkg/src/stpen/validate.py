"""Self-checks runnable from the CLI: gradient suite plus oracle spot
comparisons, one PASS/FAIL line per check."""

import numpy as np

from .gradcheck import grad_check
from .model import Model, ModelConfig
from .ops import (bce_multilabel_loss, broadcast_mul, conv2d, linear,
                  lstm_step, roi_align, spatial_max_pool, temporal_difference)
from .tensor import Tensor


def _lstm_params(rng, hidden, c_in):
    shapes = {"wx": (hidden, c_in), "wh": (hidden, hidden), "b": (hidden,)}
    return {f"{g}.{p}": rng.normal(size=shapes[p]) * 0.4
            for g in ("i", "f", "o", "g") for p in ("wx", "wh", "b")}


def op_checks(rng):
    x = rng.normal(size=(2, 3, 6, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    yield "conv2d", lambda a, kk, bb: conv2d(a, kk, bb, stride=2, pad=1).sum(), [x, k, b]
    yield "sigmoid", lambda a: a.sigmoid().sum(), [rng.normal(size=(3, 4))]
    f = rng.normal(size=(2, 3, 4, 4))
    g = rng.uniform(0.1, 0.9, size=(2, 1, 4, 4))
    yield "broadcast_mul", lambda a, bb: broadcast_mul(a, bb).sum(), [f, g]
    yield "temporal_difference", lambda a: temporal_difference(a).sum(), [rng.normal(size=(5, 2, 3, 3))]
    yield "spatial_max_pool", lambda a: spatial_max_pool(a).sum(), [rng.normal(size=(3, 4, 5, 5))]
    yield "roi_align", lambda a: roi_align(a, (0.2, 0.1, 0.8, 0.9), 3).sum(), [rng.normal(size=(2, 2, 6, 6))]
    w = rng.normal(size=(3, 5))
    bias = rng.normal(size=3)
    yield "linear", lambda a, ww, bb: linear(a, ww, bb).sum(), [rng.normal(size=5), w, bias]
    params = _lstm_params(rng, 3, 4)
    names = sorted(params)

    def lstm_fn(*tensors):
        mapping = dict(zip(names, tensors[:len(names)]))
        h2, _ = lstm_step(tensors[-3], tensors[-2], tensors[-1], mapping)
        return h2.sum()

    yield "lstm_step", lstm_fn, [params[n] for n in names] + [
        rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)]
    scores = rng.uniform(0.05, 0.95, size=13)
    targets = (rng.random(13) < 0.4).astype(float)
    yield "bce_multilabel_loss", lambda s: bce_multilabel_loss(s, targets), [scores]


def end_to_end_check(rng, tolerance=1e-3):
    from .pipeline import SampleActor
    config = ModelConfig(image_size=16, stem_channels=4, channels=(4, 4, 4, 8, 8),
                         roi_size=2, lstm_hidden=4)
    model = Model(config, seed=int(rng.integers(1 << 31)))
    low = rng.uniform(0.0, 1.0, size=(8, 3, 16, 16))
    high = rng.uniform(0.0, 1.0, size=(16, 3, 16, 16))
    actors = [SampleActor(0, (0.2, 0.2, 0.8, 0.8), None)]

    def forward(low_t, high_t):
        scored = model.forward_tensors(low_t, high_t, actors)
        return scored[0][1].sum()

    return grad_check(forward, [low, high], eps=1e-5, max_entries=8,
                      seed=int(rng.integers(1 << 31)))


def run_validation(trials=20, tolerance=1e-4, stream=None):
    """Run all checks, fresh random inputs per trial; 0 when all pass."""
    import sys
    stream = stream or sys.stdout
    worst = {}
    for trial in range(trials):
        rng = np.random.default_rng(trial)
        for name, fn, inputs in op_checks(rng):
            err = grad_check(fn, inputs, eps=1e-5, max_entries=24, seed=trial)
            worst[name] = max(worst.get(name, 0.0), err)
    failures = 0
    for name, err in worst.items():
        ok = err < tolerance
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name} gradient (max rel err {err:.2e})",
              file=stream)
    err = end_to_end_check(np.random.default_rng(12345))
    ok = err < 1e-3
    failures += not ok
    print(f"{'PASS' if ok else 'FAIL'} end-to-end gradient (max rel err {err:.2e})",
          file=stream)
    return 1 if failures else 0
