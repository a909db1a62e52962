"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NonFiniteError
from .rng import Rng
from .tensor import Tensor, backward, no_grad

# Relative errors are taken against max(|analytic|, |numeric|, REL_FLOOR) so
# that gradients that are zero up to rounding do not produce huge ratios.
REL_FLOOR = 1e-3


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    worst: tuple | None = None      # (parameter name, flat index)
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.message and self.max_rel_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} max_rel_error={self.max_rel_error:.3e} (tol {self.tolerance:g}, {self.checked} entries)"
        if self.worst is not None:
            text += f" worst={self.worst[0]}[{self.worst[1]}]"
        if self.message:
            text += f" ({self.message})"
        return text


def _named(params) -> dict:
    if isinstance(params, Mapping):
        return dict(params)
    return {f"p{i}": p for i, p in enumerate(params)}


def gradcheck(build_loss: Callable[[], Tensor], params: Mapping[str, Tensor] | Sequence[Tensor],
              tolerance: float = 1e-6, h: float = 1e-5, max_entries: int | None = None,
              seed: int = 0) -> GradcheckReport:
    """Compare tape gradients of ``build_loss()`` with central differences.

    ``build_loss`` must rebuild the loss from the current values of
    ``params`` each call.  With ``max_entries`` set, at most that many
    entries of each parameter are probed, chosen by a seeded draw.
    """
    named = _named(params)
    for p in named.values():
        p.grad = None
    try:
        loss = build_loss()
    except NonFiniteError as exc:
        return GradcheckReport(np.inf, tolerance, 0, None, f"non-finite loss at base point: {exc}")
    if not np.isfinite(loss.data).all():
        return GradcheckReport(np.inf, tolerance, 0, None, "non-finite loss at base point")
    backward(loss)

    rng = Rng(seed)
    worst_err, worst, checked = 0.0, None, 0
    for name, p in named.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            picks = np.sort(rng.derive(name).permutation(flat.size)[:max_entries])
        else:
            picks = range(flat.size)
        for i in picks:
            orig = flat[i]
            try:
                with no_grad():
                    flat[i] = orig + h
                    f_plus = build_loss().item()
                    flat[i] = orig - h
                    f_minus = build_loss().item()
            except NonFiniteError:
                f_plus = f_minus = np.nan
            finally:
                flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                return GradcheckReport(np.inf, tolerance, checked, (name, int(i)),
                                       f"non-finite loss when perturbing {name}[{int(i)}]")
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            checked += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (name, int(i))
    return GradcheckReport(float(worst_err), tolerance, checked, worst)
