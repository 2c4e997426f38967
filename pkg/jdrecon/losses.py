"""
Ensemble-comparison losses and their gradients.

Every loss compares an observed ensemble ``E`` with a surrogate ensemble
``E_hat`` on the same grid and returns a ``LossValue`` whose ``grad_states``
is the gradient of the value with respect to the surrogate states
[M, N+1, d]. Losses use the piecewise-constant projection of the
trajectories, i.e. slices t_0..t_{N-1}; the decoupled loss and MMD further
skip the shared initial slice. Values carry no dt factor.

Wasserstein losses are differentiated with the optimal coupling frozen. A
``couplings`` argument replays given couplings instead of solving, which
makes the loss a smooth function of the surrogate states for gradient checks.
"""

from collections.abc import Callable, Sequence
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist

from . import autodiff as ad
from .models import Assignment, Ensemble, LossKind, LossValue
from .transport import slice_w2sq_gradient, w1_assignment, w2sq_exact, w2sq_slices

MMD_KERNELS = 5
MMD_MULTIPLIER = 2.0


class LossError(ValueError):
    """Raised for mismatched ensembles, unknown loss kinds or missing tapes."""


def _check_pair(E: Ensemble, E_hat: Ensemble) -> None:
    if not E.grid.matches(E_hat.grid):
        raise LossError(f"grid mismatch: N={E.grid.N}, T={E.grid.T} vs N={E_hat.grid.N}, T={E_hat.grid.T}")
    if E.states.shape != E_hat.states.shape:
        raise LossError(f"ensemble shape mismatch: {E.states.shape} vs {E_hat.states.shape}")


def _projected(E: Ensemble) -> np.ndarray:
    """States at t_0..t_{N-1}."""
    return E.states[:, : E.grid.N, :]


def _check_couplings(couplings: Sequence[Assignment] | None, expected: int) -> None:
    if couplings is not None and len(couplings) != expected:
        raise LossError(f"expected {expected} couplings, got {len(couplings)}")


def decoupled_slices(N: int, include_initial: bool = False) -> list[int]:
    return list(range(0 if include_initial else 1, N))


def loss_decoupled_w2sq(
    E: Ensemble,
    E_hat: Ensemble,
    include_initial: bool = False,
    couplings: Sequence[Assignment] | None = None,
    threads: int = 1,
) -> LossValue:
    """Sum over slices t_1..t_{N-1} of the squared W2 between the state clouds."""
    _check_pair(E, E_hat)
    slices = decoupled_slices(E.grid.N, include_initial)
    _check_couplings(couplings, len(slices))
    x, y = E.states, E_hat.states
    if couplings is None:
        per_slice, assignments = w2sq_slices(x, y, slices, threads=threads)
    else:
        assignments = list(couplings)
        per_slice = np.array(
            [np.mean(np.sum((x[:, i, :] - y[a.perm, i, :]) ** 2, axis=1)) for i, a in zip(slices, assignments, strict=True)]
        )
    grad = np.zeros_like(y)
    for i, a in zip(slices, assignments, strict=True):
        grad[:, i, :] = slice_w2sq_gradient(x[:, i, :], y[:, i, :], a)
    return LossValue(value=float(per_slice.sum()), per_slice=per_slice, couplings=assignments, grad_states=grad)


def _trajectory_coupling(
    x: np.ndarray,
    y: np.ndarray,
    couplings: Sequence[Assignment] | None,
    solver: Callable[[np.ndarray, np.ndarray], Assignment],
) -> Assignment:
    _check_couplings(couplings, 1)
    if couplings is not None:
        return couplings[0]
    return solver(x, y)


def loss_w2sq_traj(E: Ensemble, E_hat: Ensemble, couplings: Sequence[Assignment] | None = None) -> LossValue:
    """Squared W2 between whole projected trajectories, one matching in R^{N d}."""
    _check_pair(E, E_hat)
    M = E.M
    x = _projected(E).reshape(M, -1)
    y = _projected(E_hat).reshape(M, -1)
    a = _trajectory_coupling(x, y, couplings, lambda p, q: w2sq_exact(p, q)[1])
    value = float(np.mean(np.sum((x - y[a.perm]) ** 2, axis=1)))
    grad = np.zeros_like(E_hat.states)
    grad[:, : E.grid.N, :] = slice_w2sq_gradient(x, y, a).reshape(M, E.grid.N, E.d)
    return LossValue(value=value, couplings=[a], grad_states=grad)


def loss_w1_traj(E: Ensemble, E_hat: Ensemble, couplings: Sequence[Assignment] | None = None) -> LossValue:
    """W1 between whole projected trajectories; the gradient vanishes on exactly matched pairs."""
    _check_pair(E, E_hat)
    M = E.M
    x = _projected(E).reshape(M, -1)
    y = _projected(E_hat).reshape(M, -1)
    a = _trajectory_coupling(x, y, couplings, w1_assignment)
    diff = y[a.perm] - x
    norms = np.linalg.norm(diff, axis=1)
    value = float(norms.mean())
    unit = np.zeros_like(diff)
    np.divide(diff, norms[:, None], out=unit, where=norms[:, None] > 0)
    flat_grad = np.zeros_like(y)
    flat_grad[a.perm] = unit / M
    grad = np.zeros_like(E_hat.states)
    grad[:, : E.grid.N, :] = flat_grad.reshape(M, E.grid.N, E.d)
    return LossValue(value=value, couplings=[a], grad_states=grad)


def loss_mse(E: Ensemble, E_hat: Ensemble) -> LossValue:
    """Index-aligned mean squared error over t_0..t_{N-1}."""
    _check_pair(E, E_hat)
    x, y = _projected(E), _projected(E_hat)
    count = E.M * E.grid.N
    per_slice = np.sum((x - y) ** 2, axis=(0, 2)) / count
    grad = np.zeros_like(E_hat.states)
    grad[:, : E.grid.N, :] = 2.0 * (y - x) / count
    return LossValue(value=float(per_slice.sum()), per_slice=per_slice, grad_states=grad)


def loss_mean2var(E: Ensemble, E_hat: Ensemble) -> LossValue:
    """Sum over t_0..t_{N-1} of squared mean gap plus absolute (population) variance gap."""
    _check_pair(E, E_hat)
    x, y = _projected(E), _projected(E_hat)
    M = E.M
    mean_gap = y.mean(axis=0) - x.mean(axis=0)  # [N, d]
    var_gap = y.var(axis=0) - x.var(axis=0)
    per_slice = np.sum(mean_gap**2, axis=1) + np.sum(np.abs(var_gap), axis=1)
    centered = y - y.mean(axis=0)
    grad = np.zeros_like(E_hat.states)
    grad[:, : E.grid.N, :] = 2.0 * mean_gap / M + np.sign(var_gap) * 2.0 * centered / M
    return LossValue(value=float(per_slice.sum()), per_slice=per_slice, grad_states=grad)


def mmd_bandwidths(x: np.ndarray) -> np.ndarray:
    """Squared bandwidths base * 2^k, k = 0..4, base the median pairwise squared distance of x."""
    dists = cdist(x, x, "sqeuclidean")
    upper = dists[np.triu_indices(x.shape[0], k=1)]
    base = float(np.median(upper)) if upper.size else 0.0
    if base <= 0:
        base = 1.0
    return base * MMD_MULTIPLIER ** np.arange(MMD_KERNELS)


def _kernel_weights(D: np.ndarray, bandwidths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kernel values sum_k exp(-D / s_k) and the derivative weights sum_k exp(-D / s_k) / s_k."""
    terms = np.exp(-D[..., None] / bandwidths)
    return terms.sum(axis=-1), (terms / bandwidths).sum(axis=-1)


def mmd_slice(x: np.ndarray, y: np.ndarray, bandwidths: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Biased (V-statistic) squared MMD of one slice and its gradient with respect to y."""
    if bandwidths is None:
        bandwidths = mmd_bandwidths(x)
    M = x.shape[0]
    Kxx, _ = _kernel_weights(cdist(x, x, "sqeuclidean"), bandwidths)
    Kxy, Wxy = _kernel_weights(cdist(x, y, "sqeuclidean"), bandwidths)
    Kyy, Wyy = _kernel_weights(cdist(y, y, "sqeuclidean"), bandwidths)
    value = float(Kxx.mean() - 2.0 * Kxy.mean() + Kyy.mean())
    pull = Wxy.T @ x - Wxy.sum(axis=0)[:, None] * y
    spread = Wyy.sum(axis=1)[:, None] * y - Wyy @ y
    grad = -4.0 / M**2 * (pull + spread)
    return value, grad


def loss_mmd(E: Ensemble, E_hat: Ensemble) -> LossValue:
    """Sum over t_1..t_{N-1} of the 5-kernel Gaussian MMD."""
    _check_pair(E, E_hat)
    slices = decoupled_slices(E.grid.N)
    per_slice = np.zeros(len(slices))
    grad = np.zeros_like(E_hat.states)
    for k, i in enumerate(slices):
        per_slice[k], grad[:, i, :] = mmd_slice(E.states[:, i, :], E_hat.states[:, i, :])
    return LossValue(value=float(per_slice.sum()), per_slice=per_slice, grad_states=grad)


LOSS_REGISTRY: dict[LossKind, Callable[..., LossValue]] = {
    LossKind.DECOUPLED_W2SQ: loss_decoupled_w2sq,
    LossKind.W2SQ: loss_w2sq_traj,
    LossKind.W1: loss_w1_traj,
    LossKind.MSE: loss_mse,
    LossKind.MEAN2VAR: loss_mean2var,
    LossKind.MMD: loss_mmd,
}


def compute_loss(
    loss_kind: LossKind | str,
    E: Ensemble,
    E_hat: Ensemble,
    include_initial: bool = False,
    threads: int = 1,
) -> LossValue:
    """Dispatch on the loss kind."""
    try:
        kind = LossKind(loss_kind)
    except ValueError as e:
        raise LossError(f"unknown loss kind {loss_kind!r}; expected one of {[k.value for k in LossKind]}") from e
    if kind is LossKind.DECOUPLED_W2SQ:
        return loss_decoupled_w2sq(E, E_hat, include_initial=include_initial, threads=threads)
    return LOSS_REGISTRY[kind](E, E_hat)


def loss_gradient(
    loss_kind: LossKind | str,
    E_fixed: Ensemble,
    E_surrogate: Ensemble,
    tape: ad.Tape | None,
    states: Any,
    loss: LossValue | None = None,
    **kwargs: Any,
) -> dict[str, np.ndarray]:
    """
    Parameter gradients of a loss through the surrogate's taped simulation.

    Args:
        loss_kind: Loss to differentiate
        E_fixed: Observed ensemble
        E_surrogate: Surrogate ensemble simulated on ``tape``
        tape: Tape recorded during the surrogate simulation
        states: Taped state history [M, N+1, d] of the surrogate
        loss: Precomputed loss value (reused instead of recomputing)

    Returns:
        Gradient per registered tape parameter
    """
    if tape is None or not ad.is_var(states):
        raise LossError("surrogate ensemble carries no autodiff tape")
    if loss is None:
        loss = compute_loss(loss_kind, E_fixed, E_surrogate, **kwargs)
    if loss.grad_states is None:
        raise LossError("loss value carries no state gradient")
    return ad.backward(tape, loss.grad_states, output=states)
