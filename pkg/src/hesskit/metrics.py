"""Disentanglement measurements: activeness and latent path length.

Activeness of a latent component is the mean output variance as that
component alone is resampled from the prior: a component the function
does not depend on scores exactly zero, because its sweep produces
identical outputs.

Path length measures smoothness: the expected squared distance between
the output at a latent point and at a small spherical-interpolation step
toward a second point, scaled by 1/alpha^2. The distance here is plain
squared pixel L2, so absolute values are only comparable within this
toolkit, not against perceptual-distance variants. Smoothness and
off-diagonal curvature are different quantities: a separable cubic scaled
by a large constant keeps a zero penalty while its path length grows
without bound.

All estimators are pure given a seed; Monte-Carlo batches evaluate in
vectorized order so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation, DegeneracyError
from .penalty import evaluate_with_taps

_PARALLEL_EPS = 1e-6

PRIORS = ("gaussian",)


def _check_prior(prior: str) -> None:
    if prior not in PRIORS:
        raise ContractViolation(f"unsupported prior {prior!r}; choose from {PRIORS}")


@dataclass(frozen=True)
class PPLConfig:
    """Path-length settings: step size, sample count, distance, prior."""

    alpha: float = 1e-4
    samples: int = 10000
    distance: str = "squared-l2"
    prior: str = "gaussian"

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ContractViolation(f"alpha must be positive, got {self.alpha}")
        if self.samples < 1:
            raise ContractViolation(f"samples must be >= 1, got {self.samples}")
        if self.distance != "squared-l2":
            raise ContractViolation(f"unsupported distance {self.distance!r}")
        _check_prior(self.prior)


@dataclass
class PPLResult:
    value: float
    std_error: float
    samples: int
    skipped: int
    alpha: float

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "samples": self.samples,
            "skipped": self.skipped,
            "alpha": self.alpha,
            "distance": "squared-l2",
        }


def slerp(a, b, alpha: float) -> np.ndarray:
    """Spherical linear interpolation between two latent vectors.

    Returns sin((1-alpha) w)/sin(w) * a + sin(alpha w)/sin(w) * b where w
    is the angle between a and b. Falls back to linear interpolation for
    nearly parallel inputs; antiparallel inputs are degenerate because the
    interpolation plane is undefined.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ContractViolation(f"slerp: shapes {a.shape} and {b.shape} differ")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ContractViolation("slerp: inputs must be nonzero")
    omega = float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))
    if omega > np.pi - _PARALLEL_EPS:
        raise DegeneracyError("slerp: antiparallel inputs")
    if omega < _PARALLEL_EPS:
        return (1.0 - alpha) * a + alpha * b
    s = np.sin(omega)
    return np.sin((1.0 - alpha) * omega) / s * a + np.sin(alpha * omega) / s * b


def _eval_np(fn, z: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        out, _ = evaluate_with_taps(fn, ad.Tensor(z))
    return out.values


def activeness(fn, dim: int, component: int, n_base: int = 64, n_sweep: int = 16,
               prior: str = "gaussian", seed: int = 0) -> float:
    """Mean output variance as one latent component is resampled.

    For each of ``n_base`` base latents, component ``component`` (0-based)
    is redrawn ``n_sweep`` times from the prior with the others held
    fixed; the per-output-element variance over the sweep is averaged
    over elements and then over base latents.
    """
    if not 0 <= component < dim:
        raise ContractViolation(f"component {component} outside [0, {dim})")
    if n_base < 2 or n_sweep < 2:
        raise ContractViolation("n_base and n_sweep must be >= 2")
    _check_prior(prior)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    base = rng.normal(size=(n_base, dim))
    sweeps = rng.normal(size=(n_base, n_sweep))
    scores = np.empty(n_base)
    for i in range(n_base):
        batch = np.repeat(base[i][None, :], n_sweep, axis=0)
        batch[:, component] = sweeps[i]
        out = _eval_np(fn, batch)  # (n_sweep, m)
        # shift by the first row: identical sweeps then score exactly zero
        scores[i] = np.mean(np.var(out - out[0], axis=0, ddof=1))
    return float(np.mean(scores))


def activeness_profile(fn, dim: int, n_base: int = 64, n_sweep: int = 16,
                       prior: str = "gaussian", seed: int = 0) -> np.ndarray:
    """Activeness of every component, one shared seed per component index."""
    return np.array(
        [activeness(fn, dim, i, n_base, n_sweep, prior, seed) for i in range(dim)]
    )


def ppl(fn, dim: int, config: PPLConfig = PPLConfig(), seed: int = 0) -> PPLResult:
    """Monte-Carlo path length over latent pairs drawn from the prior.

    Degenerate (antiparallel) pairs are skipped and counted; nearly
    parallel pairs fall back to linear interpolation, mirroring
    :func:`slerp`.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z1 = rng.normal(size=(config.samples, dim))
    z2 = rng.normal(size=(config.samples, dim))

    n1 = np.linalg.norm(z1, axis=1)
    n2 = np.linalg.norm(z2, axis=1)
    nonzero = (n1 > 0.0) & (n2 > 0.0)
    cosw = np.einsum("ij,ij->i", z1, z2) / np.where(nonzero, n1 * n2, 1.0)
    omega = np.arccos(np.clip(cosw, -1.0, 1.0))
    keep = nonzero & (omega <= np.pi - _PARALLEL_EPS)
    skipped = int(config.samples - keep.sum())
    if not np.any(keep):
        raise ContractViolation("ppl: every sampled pair was degenerate")

    z1k, z2k, wk = z1[keep], z2[keep], omega[keep]
    lerp = wk < _PARALLEL_EPS
    s = np.sin(np.where(lerp, 1.0, wk))
    ca = np.where(lerp, 1.0 - config.alpha, np.sin((1.0 - config.alpha) * wk) / s)
    cb = np.where(lerp, config.alpha, np.sin(config.alpha * wk) / s)
    zs = ca[:, None] * z1k + cb[:, None] * z2k

    out1 = _eval_np(fn, z1k)
    out2 = _eval_np(fn, zs)
    d = np.sum((out1 - out2) ** 2, axis=1) / (config.alpha * config.alpha)
    n = d.size
    se = float(d.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return PPLResult(value=float(d.mean()), std_error=se, samples=n,
                     skipped=skipped, alpha=config.alpha)
