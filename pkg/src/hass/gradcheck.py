"""Central finite-difference check of tape gradients.

A coordinate whose ``+h`` and ``-h`` evaluations switch any ReLU on or off
straddles a kink; the difference quotient there does not estimate the
derivative, so such coordinates are counted and left out of the error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# gradient entries smaller than this are compared on an absolute scale
DENOM_FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DENOM_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    n_checked: int
    n_kinks: int
    per_param: dict[str, float] = field(default_factory=dict)


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-4,
                     coords: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of ``loss_fn()`` w.r.t. ``param``.

    Returns ``(values, smooth)`` over the flat ``coords`` (all by default);
    ``smooth[j]`` is False where the step crossed a ReLU kink.
    """
    flat = param.data.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    values = np.zeros(len(idx))
    smooth = np.ones(len(idx), dtype=bool)
    with ad.no_grad():
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            with ad.relu_masks() as up:
                plus = loss_fn().item()
            flat[i] = orig - h
            with ad.relu_masks() as down:
                minus = loss_fn().item()
            flat[i] = orig
            values[j] = (plus - minus) / (2 * h)
            smooth[j] = _same_pattern(up, down)
    return values, smooth


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-4,
                    max_coords: int | None = None, rng: np.random.Generator | None = None,
                    floor: float = DENOM_FLOOR) -> GradCheckResult:
    """Compare ``backward`` against central differences for every named tensor.

    With ``max_coords`` set, at most that many coordinates per tensor are
    sampled (using ``rng``); otherwise every coordinate is checked.
    """
    grads = ad.backward(loss_fn(), list(params.values()))
    rng = rng or np.random.default_rng(0)
    per_param, n, kinks = {}, 0, 0
    for name, p in params.items():
        size = p.data.size
        if max_coords is not None and size > max_coords:
            coords = np.sort(rng.choice(size, max_coords, replace=False))
        else:
            coords = np.arange(size)
        num, smooth = numeric_gradient(loss_fn, p, h, coords)
        ana = grads[p].reshape(-1)[coords]
        err = relative_error(ana[smooth], num[smooth], floor)
        per_param[name] = float(err.max()) if err.size else 0.0
        n += int(smooth.sum())
        kinks += int((~smooth).sum())
    worst = max(per_param, key=per_param.get)
    return GradCheckResult(per_param[worst], worst, n, kinks, per_param)
