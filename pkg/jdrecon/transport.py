"""
Exact optimal transport between equal-size uniform empirical distributions.

With equal sizes and uniform weights the optimal coupling is a permutation,
so the earth mover's problem reduces to a dense assignment problem solved
with ``scipy.optimize.linear_sum_assignment``. Values are unscaled averages
(1/M) * sum of matched costs.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
import itertools
import math

from loguru import logger
import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .models import Assignment, Ensemble, MomentMatrices, TimeGrid
from .process_model import ProcessSpec, evaluate_batch

BRUTE_FORCE_LIMIT = 9
EIGEN_TOLERANCE = 1e-10


class TransportError(ValueError):
    """Raised for mismatched clouds, non-finite costs or invalid moment matrices."""


def as_cloud(points: np.ndarray) -> np.ndarray:
    """Validate a point cloud and return it as [M, k]."""
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.ndim == 1:
        cloud = cloud[:, None]
    if cloud.ndim != 2 or cloud.shape[0] < 1:
        raise TransportError(f"point cloud must have shape [M, k] with M >= 1, got {cloud.shape}")
    if not np.isfinite(cloud).all():
        raise TransportError("point cloud contains non-finite entries")
    return cloud


def _pair(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y = as_cloud(xs), as_cloud(ys)
    if x.shape != y.shape:
        raise TransportError(f"clouds must have equal shapes, got {x.shape} and {y.shape}")
    return x, y


def _solve(cost: np.ndarray) -> Assignment:
    if not np.isfinite(cost).all():
        raise TransportError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return Assignment(perm=perm, cost=float(cost[rows, cols].mean()))


def w2sq_1d(xs: np.ndarray, ys: np.ndarray) -> tuple[float, Assignment]:
    """Squared W2 between 1-D clouds by sorted matching (stable sort breaks ties by index)."""
    x, y = _pair(xs, ys)
    if x.shape[1] != 1:
        raise TransportError(f"w2sq_1d needs 1-D clouds, got dimension {x.shape[1]}")
    ix = np.argsort(x[:, 0], kind="stable")
    iy = np.argsort(y[:, 0], kind="stable")
    perm = np.empty_like(ix)
    perm[ix] = iy
    value = float(np.mean((x[ix, 0] - y[iy, 0]) ** 2))
    return value, Assignment(perm=perm, cost=value)


def w2sq_exact(xs: np.ndarray, ys: np.ndarray) -> tuple[float, Assignment]:
    """Squared W2 by exact assignment on the squared-Euclidean cost matrix."""
    x, y = _pair(xs, ys)
    assignment = _solve(cdist(x, y, "sqeuclidean"))
    return assignment.cost, assignment


def w1_exact(xs: np.ndarray, ys: np.ndarray) -> float:
    """W1 by exact assignment on the Euclidean cost matrix."""
    return w1_assignment(xs, ys).cost


def w1_assignment(xs: np.ndarray, ys: np.ndarray) -> Assignment:
    x, y = _pair(xs, ys)
    return _solve(cdist(x, y, "euclidean"))


def w2sq_bruteforce(xs: np.ndarray, ys: np.ndarray, metric: str = "sqeuclidean") -> float:
    """Minimum over all M! permutations; test oracle for M <= 9."""
    x, y = _pair(xs, ys)
    M = x.shape[0]
    if M > BRUTE_FORCE_LIMIT:
        raise TransportError(f"brute force limited to M <= {BRUTE_FORCE_LIMIT}, got {M}")
    cost = cdist(x, y, metric)
    rows = np.arange(M)
    best = min(cost[rows, list(p)].sum() for p in itertools.permutations(range(M)))
    return float(best / M)


def w2sq_slices(
    states: np.ndarray,
    states_hat: np.ndarray,
    slices: Sequence[int],
    threads: int = 1,
) -> tuple[np.ndarray, list[Assignment]]:
    """
    Per-slice squared W2 between two state histories [M, N+1, d].

    1-D slices use the sorted closed form; higher dimensions solve the
    assignment problem, optionally across a thread pool. Results are in
    slice order regardless of completion order.
    """
    solver = w2sq_1d if states.shape[2] == 1 else w2sq_exact

    def solve(i: int) -> tuple[float, Assignment]:
        return solver(states[:, i, :], states_hat[:, i, :])

    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, slices))
    else:
        results = [solve(i) for i in slices]
    values = np.array([r[0] for r in results], dtype=np.float64)
    return values, [r[1] for r in results]


def rate_h(M: int, n: int) -> float:
    """Empirical-convergence rate factor h(M, n)."""
    if M < 1 or n < 1:
        raise TransportError(f"rate_h needs M >= 1 and n >= 1, got M={M}, n={n}")
    if n <= 4:
        return M ** (-0.25) * math.sqrt(math.log(1.0 + M))
    return M ** (-1.0 / n)


def _second_moment(spec: ProcessSpec, states: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean drift [d] and mean sigma sigma^T + sum_s rate_s beta_s beta_s^T [d, d] over a cloud."""
    f, sigma, beta = evaluate_batch(spec, states, t)
    rates = spec.measure.rate_array()
    diffusion = np.einsum("jik,jlk->jil", sigma, sigma)
    jumps = np.einsum("jis,s,jls->jil", beta, rates, beta)
    return f.mean(axis=0), (diffusion + jumps).mean(axis=0)


def estimate_moment_matrices(
    spec: ProcessSpec,
    spec_hat: ProcessSpec,
    ensembles: tuple[Ensemble, Ensemble],
    grid: TimeGrid,
    t_index: int,
) -> MomentMatrices:
    """
    Monte Carlo estimates of the integrated moment matrices for t_0..t_{t_index}.

    Left-endpoint quadrature: entry k integrates over slices 0..k-1.
    """
    E, E_hat = ensembles
    if not (E.grid.matches(grid) and E_hat.grid.matches(grid)):
        raise TransportError("both ensembles must live on the given grid")
    if not 0 <= t_index <= grid.N:
        raise TransportError(f"t_index {t_index} outside 0..{grid.N}")
    d = spec.d
    dt = grid.dt
    S = np.zeros((t_index + 1, d, d))
    S_hat = np.zeros((t_index + 1, d, d))
    gap = np.zeros((t_index + 1, d))
    for k in range(t_index):
        t = k * dt
        f, q = _second_moment(spec, E.states[:, k, :], t)
        f_hat, q_hat = _second_moment(spec_hat, E_hat.states[:, k, :], t)
        S[k + 1] = S[k] + dt * q
        S_hat[k + 1] = S_hat[k] + dt * q_hat
        gap[k + 1] = gap[k] + dt * (f - f_hat)
    return MomentMatrices(S=S, S_hat=S_hat, drift_gap=gap)


def _psd_eigh(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sym = 0.5 * (A + A.T)
    eigvals, eigvecs = linalg.eigh(sym)
    if eigvals.min(initial=0.0) < -EIGEN_TOLERANCE:
        raise TransportError(f"matrix is not positive semidefinite (min eigenvalue {eigvals.min():.3e})")
    return np.clip(eigvals, 0.0, None), eigvecs


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Positive square root of a symmetric PSD matrix, clipping tiny negative eigenvalues."""
    eigvals, eigvecs = _psd_eigh(A)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def bures_term(S: np.ndarray, S_hat: np.ndarray) -> float:
    """Tr(S + S_hat - 2 (S^1/2 S_hat S^1/2)^1/2)."""
    root = psd_sqrt(S)
    hat_vals, _ = _psd_eigh(S_hat)
    cross_vals, _ = _psd_eigh(root @ S_hat @ root)
    return float(np.trace(root @ root) + hat_vals.sum() - 2.0 * np.sqrt(cross_vals).sum())


def gaussian_lower_bound(mm: MomentMatrices, grid: TimeGrid) -> float:
    """
    Lower bound on the time-integrated squared W2 between two processes.

    Integrates |drift_gap|^2 + Tr(S + S_hat - 2 (S^1/2 S_hat S^1/2)^1/2)
    with the left-endpoint rule over the entries of ``mm``.
    """
    K = mm.S.shape[0]
    total = 0.0
    for k in range(K - 1):
        integrand = float(np.sum(mm.drift_gap[k] ** 2)) + bures_term(mm.S[k], mm.S_hat[k])
        total += grid.dt * integrand
    logger.debug(f"[OT] gaussian lower bound over {K} slices: {total:.6g}")
    return max(total, 0.0)


def slice_w2sq_gradient(x: np.ndarray, y: np.ndarray, assignment: Assignment) -> np.ndarray:
    """Gradient of (1/M) sum |x_i - y_perm(i)|^2 with respect to y, coupling frozen."""
    M = x.shape[0]
    grad = np.zeros_like(y)
    grad[assignment.perm] = 2.0 * (y[assignment.perm] - x) / M
    return grad
