"""Central finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    worst: Optional[tuple] = None  # (param name/index, flat index, analytic, numeric)
    per_param: dict = field(default_factory=dict)

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[Tensor] | dict, h: float = 1e-5,
              max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None,
              floor: float = 1e-6, rewind: Optional[Callable[[], None]] = None,
              shrink: Sequence[float] = ()) -> GradCheckReport:
    """Compare tape gradients with central differences of ``loss_fn``.

    ``loss_fn`` is called once under a tape and then repeatedly without one.
    ``rewind`` runs before every re-evaluation (e.g. to replay frozen graphs).
    ``max_entries`` caps how many randomly chosen entries of each parameter are
    probed; ``None`` probes them all.

    The networks are only piecewise smooth (leaky ReLU, max pooling, a fixed
    assignment inside EMD). A probe interval that straddles a kink gives a
    meaningless difference quotient, so each step size in ``shrink`` is tried
    in turn until an entry agrees; the smallest error seen is reported.
    """
    named = params.items() if isinstance(params, dict) else enumerate(params)
    named = list(named)
    rng = rng or np.random.default_rng(0)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {key: p.grad.copy() for key, p in named}

    def evaluate() -> float:
        if rewind is not None:
            rewind()
        return float(loss_fn().data)

    report = GradCheckReport()
    for key, p in named:
        size = p.data.size
        idx = np.arange(size)
        if max_entries is not None and size > max_entries:
            idx = np.sort(rng.choice(size, max_entries, replace=False))
        flat = p.data.reshape(-1)
        worst_here = 0.0
        for i in idx:
            a = float(analytic[key].reshape(-1)[i])
            err, numeric = np.inf, np.nan
            for step in (h, *shrink):
                orig = flat[i]
                flat[i] = orig + step
                fp = evaluate()
                flat[i] = orig - step
                fm = evaluate()
                flat[i] = orig
                cand = (fp - fm) / (2 * step)
                cand_err = relative_error(a, cand, floor)
                if cand_err < err:
                    err, numeric = cand_err, cand
                if err < 1e-6:
                    break
            worst_here = max(worst_here, err)
            report.checked += 1
            if report.worst is None or err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (key, int(i), a, numeric)
        report.per_param[key] = worst_here
    return report
