"""
Coefficient functions, jump measures and the ground-truth model zoo.

Coefficient functions work on batches: ``x`` has shape [M, d] and ``t`` is a
scalar time. They return

    drift      [M, d]
    diffusion  [M, d, m]
    jump       [M, d, n_marks]   (column s is the jump amplitude of mark s)

and are written with the operators of ``jdrecon.autodiff`` so that the same
function evaluates plain arrays and taped values.
"""

from collections.abc import Callable
import math
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import autodiff as ad
from .models import JumpMeasure
from .networks import MlpParams

CoefficientFn = Callable[[Any, float], Any]


class ProcessModelError(ValueError):
    """Raised for invalid zoo parameters or coefficient inputs."""


class CoefficientSet(BaseModel):
    """Drift, diffusion and jump functions of a process."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    drift: CoefficientFn
    diffusion: CoefficientFn
    jump: CoefficientFn


class ProcessSpec(BaseModel):
    """A jump-diffusion dX = f dt + sigma dB + sum_s beta_s dÑ_s."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: int = Field(ge=1)
    m: int = Field(ge=0)
    measure: JumpMeasure
    coefficients: CoefficientSet
    source: Literal["ground_truth", "surrogate"] = "ground_truth"
    name: str = "custom"
    params: dict[str, Any] = Field(default_factory=dict)
    networks: dict[str, MlpParams] = Field(default_factory=dict)

    @property
    def n_marks(self) -> int:
        return self.measure.n_marks


def _batch_size(x: Any) -> int:
    return int(ad.value_of(x).shape[0])


def _column(x: Any) -> Any:
    """[M] -> [M, 1, 1]."""
    return ad.reshape(x, (_batch_size(x), 1, 1))


def _constant(x: Any, value: float, shape: tuple[int, ...]) -> np.ndarray:
    return np.full((_batch_size(x), *shape), float(value))


def _scalar_form(form: str, coefficient: float) -> Callable[[Any], Any]:
    """A d=1 coefficient of the given form, returned as [M, 1, 1]."""
    if form == "const":
        return lambda x: _constant(x, coefficient, (1, 1))
    if form == "linear":
        return lambda x: _column(coefficient * x[:, 0])
    if form == "langevin":
        return lambda x: _column(coefficient * ad.sqrt_abs(x[:, 0]))
    raise ProcessModelError(f"unknown coefficient form {form!r}; expected const, linear or langevin")


def make_example1(b: float, a: float, sigma0: float, y0: float) -> ProcessSpec:
    """
    Bond-pricing model with a unit-rate compensated Poisson jump of size y0.

    drift (b + y0) + a x, diffusion sigma0 sqrt|x|, jump y0.
    """
    def drift(x: Any, t: float) -> Any:
        return (b + y0) + a * x

    def diffusion(x: Any, t: float) -> Any:
        return _column(sigma0 * ad.sqrt_abs(x[:, 0]))

    def jump(x: Any, t: float) -> Any:
        return _constant(x, y0, (1, 1))

    return ProcessSpec(
        d=1,
        m=1,
        measure=JumpMeasure(rates=[1.0]),
        coefficients=CoefficientSet(drift=drift, diffusion=diffusion, jump=jump),
        name="example1",
        params={"b": b, "a": a, "sigma0": sigma0, "y0": y0},
    )


def make_example2(form_sigma: str, form_beta: str, sigma0: float, beta0: float, r0: float) -> ProcessSpec:
    """Stock-return model: constant drift r0, diffusion and jump of a selectable form."""
    sigma_fn = _scalar_form(form_sigma, sigma0)
    beta_fn = _scalar_form(form_beta, beta0)

    def drift(x: Any, t: float) -> Any:
        return _constant(x, r0, (1,))

    def diffusion(x: Any, t: float) -> Any:
        return sigma_fn(x)

    def jump(x: Any, t: float) -> Any:
        return beta_fn(x)

    return ProcessSpec(
        d=1,
        m=1,
        measure=JumpMeasure(rates=[1.0]),
        coefficients=CoefficientSet(drift=drift, diffusion=diffusion, jump=jump),
        name="example2",
        params={"form_sigma": form_sigma, "form_beta": form_beta, "sigma0": sigma0, "beta0": beta0, "r0": r0},
    )


# Mixture parameters of the Example 3 drift.
SIGMA1, SIGMA2 = 1.0, 0.95
MU11, MU12, MU21, MU22 = 1.6, 1.2, 1.8, 1.0


def _gaussian_bump(x1: Any, x2: Any, mu1: float, mu2: float, scale: float) -> Any:
    exponent = (ad.square(x1 - mu1) + ad.square(x2 - mu2)) * (-1.0 / (2.0 * scale**2))
    return ad.exp(exponent) * (1.0 / (math.sqrt(2.0 * math.pi) * scale))


def example3_g(x: Any) -> Any:
    """The Example 3 potential gradient g(X) for a batch [M, 2].

    The second component's first term uses mu21, as the model is defined.
    """
    x1, x2 = x[:, 0], x[:, 1]
    n1 = _gaussian_bump(x1, x2, MU11, MU12, SIGMA1)
    n2 = _gaussian_bump(x1, x2, MU21, MU22, SIGMA2)
    w1 = n1 / (n1 + n2)
    w2 = n2 / (n1 + n2)
    g1 = w1 * (x1 - MU11) * (1.0 / SIGMA1) + w2 * (x1 - MU21) * (1.0 / SIGMA2)
    g2 = w1 * (x2 - MU21) * (1.0 / SIGMA1) + w2 * (x2 - MU22) * (1.0 / SIGMA2)
    return ad.stack([g1, g2], axis=1)


def make_example3(c1: float, c2: float, sigma0: float, beta0: float) -> ProcessSpec:
    """
    2-D mixture-potential drift with correlated diffusion and two compensated jumps.

    Args:
        c1: Correlation of the Brownian noise across dimensions, |c1| <= 1
        c2: Correlation of the jump noise across dimensions, |c2| <= 1
        sigma0: Diffusion strength
        beta0: Jump amplitude

    Returns:
        ProcessSpec with d = m = 2 and two unit-rate marks
    """
    if abs(c1) > 1 or abs(c2) > 1:
        raise ProcessModelError(f"correlations must satisfy |c1|, |c2| <= 1, got c1={c1}, c2={c2}")

    beta = np.array([[beta0, c2 * beta0], [c2 * beta0, beta0]], dtype=np.float64)

    def drift(x: Any, t: float) -> Any:
        return -example3_g(x)

    def diffusion(x: Any, t: float) -> Any:
        s1 = sigma0 * ad.sqrt_abs(x[:, 0])
        s2 = sigma0 * ad.sqrt_abs(x[:, 1])
        row1 = ad.stack([s1, c1 * s2], axis=1)
        row2 = ad.stack([c1 * s1, s2], axis=1)
        return ad.stack([row1, row2], axis=1)

    def jump(x: Any, t: float) -> Any:
        return np.broadcast_to(beta, (_batch_size(x), 2, 2)).copy()

    return ProcessSpec(
        d=2,
        m=2,
        measure=JumpMeasure(rates=[1.0, 1.0]),
        coefficients=CoefficientSet(drift=drift, diffusion=diffusion, jump=jump),
        name="example3",
        params={"c1": c1, "c2": c2, "sigma0": sigma0, "beta0": beta0},
    )


ZOO: dict[str, Callable[..., ProcessSpec]] = {
    "example1": make_example1,
    "example2": make_example2,
    "example3": make_example3,
}

ZOO_DEFAULTS: dict[str, dict[str, Any]] = {
    "example1": {
        "params": {"b": 4.0, "a": -1.0, "sigma0": 0.4, "y0": 1.0},
        "initial_mean": [2.0],
        "T": 20.2,
    },
    "example2": {
        "params": {"form_sigma": "langevin", "form_beta": "langevin", "sigma0": 0.1, "beta0": 0.1, "r0": 0.05},
        "initial_mean": [1.0],
        "T": 5.1,
    },
    "example3": {
        "params": {"c1": -0.5, "c2": -0.5, "sigma0": 0.1, "beta0": 0.1},
        "initial_mean": [1.7, 1.1],
        "T": 10.2,
    },
}


def build_model(model_id: str, params: dict[str, Any] | None = None) -> ProcessSpec:
    """Build a zoo model from its id, filling unspecified parameters with the defaults."""
    if model_id not in ZOO:
        raise ProcessModelError(f"unknown model {model_id!r}; available: {sorted(ZOO)}")
    merged = dict(ZOO_DEFAULTS[model_id]["params"])
    unknown = set(params or {}) - set(merged)
    if unknown:
        raise ProcessModelError(f"unknown parameters for {model_id}: {sorted(unknown)}")
    merged.update(params or {})
    try:
        return ZOO[model_id](**merged)
    except TypeError as e:
        raise ProcessModelError(f"invalid parameters for {model_id}: {e}") from e


def with_overrides(
    spec: ProcessSpec,
    drift: CoefficientFn | None = None,
    diffusion: CoefficientFn | None = None,
    jump: CoefficientFn | None = None,
    source: Literal["ground_truth", "surrogate"] | None = None,
) -> ProcessSpec:
    """Copy of ``spec`` with selected coefficient functions replaced."""
    coefficients = CoefficientSet(
        drift=drift or spec.coefficients.drift,
        diffusion=diffusion or spec.coefficients.diffusion,
        jump=jump or spec.coefficients.jump,
    )
    return spec.model_copy(update={"coefficients": coefficients, "source": source or spec.source})


def zero_spec(d: int = 1, m: int = 1, n_marks: int = 1) -> ProcessSpec:
    """Process whose coefficients are identically zero."""
    return ProcessSpec(
        d=d,
        m=m,
        measure=JumpMeasure(rates=[1.0] * n_marks),
        coefficients=CoefficientSet(
            drift=lambda x, t: _constant(x, 0.0, (d,)),
            diffusion=lambda x, t: _constant(x, 0.0, (d, m)),
            jump=lambda x, t: _constant(x, 0.0, (d, n_marks)),
        ),
        name="zero",
    )


def evaluate_batch(spec: ProcessSpec, x: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Untaped coefficient evaluation on a batch [M, d]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.d:
        raise ProcessModelError(f"expected states of shape [M, {spec.d}], got {x.shape}")
    f = ad.value_of(spec.coefficients.drift(x, t))
    sigma = ad.value_of(spec.coefficients.diffusion(x, t))
    beta = ad.value_of(spec.coefficients.jump(x, t))
    M = x.shape[0]
    return (
        np.broadcast_to(f, (M, spec.d)),
        np.broadcast_to(sigma, (M, spec.d, spec.m)),
        np.broadcast_to(beta, (M, spec.d, spec.n_marks)),
    )


def evaluate_coefficients(spec: ProcessSpec, x: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """
    Evaluate f, sigma and the per-mark jump vectors at a single state.

    Args:
        spec: Process to evaluate
        x: State in R^d
        t: Time

    Returns:
        (f [d], sigma [d, m], [beta_s [d] for each mark s])
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != spec.d:
        raise ProcessModelError(f"expected a state of dimension {spec.d}, got {x.shape[0]}")
    if not np.isfinite(x).all() or not math.isfinite(t):
        raise ProcessModelError(f"coefficient inputs must be finite, got x={x}, t={t}")
    f, sigma, beta = evaluate_batch(spec, x[None, :], t)
    return f[0].copy(), sigma[0].copy(), [beta[0, :, s].copy() for s in range(spec.n_marks)]
