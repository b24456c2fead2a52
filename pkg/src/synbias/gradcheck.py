"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError
from .rng import make_rng
from .tensor import Tape, Tensor, no_grad


def grad_check(function: Callable[[np.random.Generator], Tensor], params: list[Tensor],
               seed: int = 0, h: float = 1e-5, return_worst: bool = False):
    """Max over all entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    ``function`` receives a freshly seeded generator on every call so that any
    sampling inside it repeats exactly.
    """
    with no_grad():
        f0 = float(function(make_rng(seed)).data)
        f1 = float(function(make_rng(seed)).data)
    if f0 != f1:
        raise ContractError("grad_check: function is not deterministic")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = function(make_rng(seed))
    tape.backward(loss, params)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    worst_at = None
    with no_grad():
        for k, p in enumerate(params):
            flat = p.data.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp = float(function(make_rng(seed)).data)
                flat[j] = orig - h
                fm = float(function(make_rng(seed)).data)
                flat[j] = orig
                num = (fp - fm) / (2 * h)
                ana = analytic[k].reshape(-1)[j]
                err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
                if err > worst:
                    worst = err
                    worst_at = (k, j)
    if return_worst:
        return worst, worst_at
    return worst
