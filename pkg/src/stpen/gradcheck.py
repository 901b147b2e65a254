"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .errors import InvalidArgument, NonFiniteError
from .tensor import Tensor


def grad_check(fn, inputs, eps=1e-6, max_entries=None, seed=0):
    """Compare fn's analytic gradient against central differences.

    fn takes one Tensor per entry of `inputs` and returns a scalar Tensor
    (compose non-scalar ops with a sum reduction before passing them in).
    Returns the maximum relative error
    |analytic - numeric| / max(1, |analytic|, |numeric|) over all checked
    entries.  `max_entries` caps the entries checked per input (sampled
    with a seeded generator) so large tensors stay affordable.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise InvalidArgument(f"eps must lie in [1e-7, 1e-3], got {eps}")
    arrays = [np.array(x, dtype=np.float64) for x in inputs]

    leaves = [Tensor(a.copy()) for a in arrays]
    out = fn(*leaves)
    if out.size != 1:
        raise InvalidArgument(f"fn must produce a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteError("non-finite forward value at the unperturbed point")
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]

    def evaluate(perturbed):
        value = fn(*[Tensor(a.copy()) for a in perturbed])
        return float(value.data)

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    for idx, a in enumerate(arrays):
        flat_indices = np.arange(a.size)
        if max_entries is not None and a.size > max_entries:
            flat_indices = rng.choice(a.size, size=max_entries, replace=False)
        for flat in flat_indices:
            pos = [arr.copy() for arr in arrays]
            neg = [arr.copy() for arr in arrays]
            pos[idx].flat[flat] += eps
            neg[idx].flat[flat] -= eps
            f_pos = evaluate(pos)
            f_neg = evaluate(neg)
            if not (np.isfinite(f_pos) and np.isfinite(f_neg)):
                raise NonFiniteError(f"non-finite value perturbing input {idx} entry {flat}")
            numeric = (f_pos - f_neg) / (2.0 * eps)
            a_val = float(analytic[idx].flat[flat])
            rel = abs(a_val - numeric) / max(1.0, abs(a_val), abs(numeric))
            max_rel = max(max_rel, rel)
    return max_rel
