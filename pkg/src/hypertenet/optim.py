from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import ContractError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, allow_missing: bool = False) -> None:
    """One bias-corrected Adam update over ``params``, then zero their gradients.

    A parameter whose ``grad`` is None is a contract violation unless
    ``allow_missing`` is set, in which case it is skipped (it did not take
    part in this step's loss).
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing and not allow_missing:
        raise ContractError(f"adam_step: no gradient for {missing}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ContractError(f"adam_step: moment shape {m.shape} != param {p.shape} for {name}")
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)
        p.grad = None


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    passed: bool


def finite_diff_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[GradCheckResult]:
    """Compare autodiff gradients of the scalar ``fn()`` with central differences.

    ``fn`` must be deterministic (no dropout). The relative error per entry is
    ``|a - n| / max(|a| + |n|, 1e-6 * max(1, |f|))``; the floor grows with the
    loss value ``f`` because the rounding noise of the differences does, which
    keeps the measure invariant to rescaling the loss. With ``max_entries``
    only a random subset of each parameter's coordinates is perturbed.
    """
    for p in params.values():
        p.grad = None
    out = fn()
    floor = 1e-6 * max(1.0, abs(out.item()))
    out.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy() for k, p in params.items()}
    for p in params.values():
        p.grad = None

    results = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = fn().item()
            flat[c] = orig - step
            down = fn().item()
            flat[c] = orig
            num = (up - down) / (2 * step)
            a = a_flat[c]
            # the floor keeps near-zero gradients from being judged on rounding noise
            err = abs(a - num) / max(abs(a) + abs(num), floor)
            worst = max(worst, err)
        results.append(GradCheckResult(name, worst, worst < tolerance))
    return results
