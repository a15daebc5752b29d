"""Central finite-difference gradient checking.

The numeric side deliberately re-derives gradients without touching the
autodiff machinery, so it stays an independent oracle for every backward
rule in the package.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor, no_grad


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], *,
              h: float = 1e-5, n_samples: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a nullary closure over ``params`` returning a scalar tensor.
    Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    Requires double precision: the oracle's own truncation error at h=1e-5
    would drown float32 gradients.

    When ``n_samples`` is given, only that many coordinates (sampled without
    replacement via ``rng``) are probed; otherwise every coordinate is.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"gradcheck requires float64 parameters, got {p.data.dtype}")
        p.zero_grad()

    out = f()
    if out.data.size != 1:
        raise ValueError("gradcheck requires a scalar-valued function")
    out.backward()
    analytic = [p.grad.copy() for p in params]

    coords: list[tuple[int, int]] = [
        (pi, ci) for pi, p in enumerate(params) for ci in range(p.data.size)
    ]
    if n_samples is not None and n_samples < len(coords):
        if rng is None:
            rng = np.random.default_rng(0)
        picks = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in picks]

    max_err = 0.0
    for pi, ci in coords:
        flat = params[pi].data.reshape(-1)
        orig = flat[ci]
        flat[ci] = orig + h
        with no_grad():
            f_plus = f().item()
        flat[ci] = orig - h
        with no_grad():
            f_minus = f().item()
        flat[ci] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("gradcheck: function is non-finite at a perturbed point")
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic[pi].reshape(-1)[ci]
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > max_err:
            max_err = err
    return max_err
