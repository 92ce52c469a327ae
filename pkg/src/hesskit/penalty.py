"""Stochastic estimator of the squared off-diagonal Hessian mass.

For a function G and point z, the second directional derivative v^T H v
along a Rademacher probe v is approximated with a central second
difference, and the Bessel-corrected variance of that quantity over k
independent probes is an unbiased estimate of twice the sum of squared
off-diagonal Hessian entries (see ``oracle.enumerate_variance`` for the
exhaustive check). Diagonal curvature contributes a probe-independent
offset and cancels out of the variance, which is what makes the penalty
blind to separable structure.

The estimate is assembled from differentiable primitives end to end, so
it can be used directly as a training loss. Conventions:

* the reported scalar is the raw probe variance; its expectation is
  ``2 * exact_offdiag_penalty(H)``, and ``PenaltyValue.offdiag_estimate``
  exposes the halved value for callers who want the off-diagonal sum
  itself (the factor is otherwise absorbed into the loss weight);
* vector-valued functions are handled per output component, then reduced
  with ``max`` or ``mean`` across components;
* when several activation taps are configured, probes are shared across
  taps within one call (all tap readings come from the same perturbed
  passes) and per-tap penalties are averaged;
* a batch of latents uses independent probes per row, and the scalar is
  the mean over rows, matching an expectation over the latent prior.

Estimation is pure given (function, z, probes) and may run concurrently
for disjoint records.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation

REDUCTIONS = ("max", "mean")


@dataclass(frozen=True)
class PenaltyConfig:
    """Estimator settings: step, probe count, reduction, taps and seed.

    ``taps`` names the activations the penalty is applied to; empty means
    the function's output itself, and the reserved name "output" may be
    mixed with named taps. ``k >= 2`` because the sample variance is
    undefined below that.
    """

    epsilon: float = 0.1
    k: int = 2
    reduction: str = "max"
    taps: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ContractViolation(f"epsilon must be positive, got {self.epsilon}")
        if int(self.k) != self.k or self.k < 2:
            raise ContractViolation(f"probe count k must be an integer >= 2, got {self.k}")
        if self.reduction not in REDUCTIONS:
            raise ContractViolation(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")
        object.__setattr__(self, "taps", tuple(self.taps))


@dataclass
class PenaltyValue:
    """Estimator output: differentiable scalar plus pre-reduction detail.

    ``per_component`` maps tap name (or "output") to the (B, m) probe
    variances before reduction; ``per_sample`` holds the per-row reduced
    values averaged over taps, so a batched call doubles as a set of
    independent trials.
    """

    scalar: ad.Tensor
    per_component: dict[str, np.ndarray]
    per_sample: np.ndarray
    k: int
    epsilon: float
    reduction: str = "max"
    taps: tuple[str, ...] = field(default_factory=tuple)

    @property
    def value(self) -> float:
        return self.scalar.item()

    @property
    def offdiag_estimate(self) -> float:
        """Unbiased estimate of the off-diagonal squared sum itself (value / 2)."""
        return 0.5 * self.value


def sample_rademacher(dim: int, k: int, seed: int = 0, rng=None) -> np.ndarray:
    """Draw k probe vectors with i.i.d. entries, each -1 or +1 with equal probability."""
    if int(dim) != dim or dim < 1:
        raise ContractViolation(f"dim must be a positive integer, got {dim}")
    if int(k) != k or k < 2:
        raise ContractViolation(f"probe count k must be an integer >= 2, got {k}")
    rng = np.random.default_rng(seed) if rng is None else rng
    return rng.integers(0, 2, size=(int(k), int(dim))).astype(np.float64) * 2.0 - 1.0


def exact_offdiag_penalty(matrix) -> float:
    """Sum of squared off-diagonal entries of a square matrix."""
    h = np.asarray(matrix, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {h.shape}")
    return float(np.sum(h * h) - np.sum(np.diag(h) ** 2))


def evaluate_with_taps(fn, z: ad.Tensor) -> tuple[ad.Tensor, dict[str, ad.Tensor]]:
    """Normalize a function result to (output, taps)."""
    result = fn(z)
    if isinstance(result, tuple):
        out, taps = result
        return out, dict(taps)
    return result, {}


def _prepare_latents(z) -> tuple[np.ndarray, bool]:
    arr = z.values if isinstance(z, ad.Tensor) else np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("latent input must be finite")
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ContractViolation(f"latent must be 1-D or 2-D, got shape {arr.shape}")


def second_directional_fd(fn, z, v, epsilon: float, taps: tuple[str, ...] | None = None):
    """Central second difference (G(z+ev) - 2 G(z) + G(z-ev)) / e^2.

    Approximates v^T H v for every output component; exact on quadratics.
    With ``taps`` given, returns a dict of per-tap difference tensors
    instead of the output's. Differentiable with respect to any parameters
    inside ``fn``. A 1-D ``z`` yields per-component shape (m,), a batch
    yields (B, m).
    """
    if not epsilon > 0.0:
        raise ContractViolation(f"epsilon must be positive, got {epsilon}")
    zarr, single = _prepare_latents(z)
    varr, _ = _prepare_latents(v)
    if varr.shape[-1] != zarr.shape[-1]:
        raise ContractViolation(
            f"probe dimension {varr.shape[-1]} != latent dimension {zarr.shape[-1]}"
        )
    step = epsilon * np.broadcast_to(varr, zarr.shape)

    out_c, taps_c = evaluate_with_taps(fn, ad.Tensor(zarr))
    out_p, taps_p = evaluate_with_taps(fn, ad.Tensor(zarr + step))
    out_m, taps_m = evaluate_with_taps(fn, ad.Tensor(zarr - step))

    inv = 1.0 / (epsilon * epsilon)

    def diff(plus, center, minus):
        d = (plus + minus - center * 2.0) * inv
        if single:
            return ad.reshape(d, (d.shape[-1],))
        return d

    if taps is None:
        return diff(out_p, out_c, out_m)
    result = {}
    for name in taps:
        if name == "output":
            result[name] = diff(out_p, out_c, out_m)
            continue
        if name not in taps_c:
            raise ContractViolation(f"function exposes no tap named {name!r}")
        result[name] = diff(taps_p[name], taps_c[name], taps_m[name])
    return result


def hessian_penalty_estimate(fn, z, config: PenaltyConfig, rng=None, probes=None) -> PenaltyValue:
    """Unbiased stochastic estimate of the off-diagonal Hessian penalty.

    Runs 2k+1 forward passes of ``fn`` around ``z`` (the center pass is
    shared by all probes), takes the per-component Bessel-corrected
    variance of the central second differences over the k probes, reduces
    across components per ``config.reduction``, averages over batch rows
    and finally over taps.

    ``probes`` may inject an explicit (k, dim) or (k, B, dim) array of
    +-1 vectors (used by oracle-consistency tests); otherwise they are
    drawn from ``rng`` or deterministically from ``config.seed``.
    """
    zarr, _ = _prepare_latents(z)
    n_rows, dim = zarr.shape
    eps = config.epsilon

    if probes is None:
        rng = np.random.default_rng(config.seed) if rng is None else rng
        probes = rng.integers(0, 2, size=(config.k, n_rows, dim)).astype(np.float64) * 2.0 - 1.0
    else:
        probes = np.asarray(probes, dtype=np.float64)
        if probes.ndim == 2:
            probes = np.broadcast_to(probes[:, None, :], (probes.shape[0], n_rows, dim)).copy()
        if probes.shape != (config.k, n_rows, dim):
            raise ContractViolation(
                f"probes must have shape ({config.k}, {n_rows}, {dim}), got {probes.shape}"
            )
        if not np.all(np.abs(probes) == 1.0):
            raise ContractViolation("probes must contain only +1 or -1 entries")

    names = config.taps if config.taps else ("output",)

    def select(out, taps, name):
        if name == "output":
            return out
        if name not in taps:
            raise ContractViolation(f"function exposes no tap named {name!r}")
        return taps[name]

    out_c, taps_c = evaluate_with_taps(fn, ad.Tensor(zarr))
    center = {name: select(out_c, taps_c, name) for name in names}

    diffs: dict[str, list[ad.Tensor]] = {name: [] for name in names}
    inv = 1.0 / (eps * eps)
    for j in range(config.k):
        step = eps * probes[j]
        out_p, taps_p = evaluate_with_taps(fn, ad.Tensor(zarr + step))
        out_m, taps_m = evaluate_with_taps(fn, ad.Tensor(zarr - step))
        for name in names:
            plus = select(out_p, taps_p, name)
            minus = select(out_m, taps_m, name)
            diffs[name].append((plus + minus - center[name] * 2.0) * inv)

    per_component: dict[str, np.ndarray] = {}
    tap_scalars = []
    per_sample = np.zeros(n_rows)
    for name in names:
        variances = ad.stack(diffs[name], axis=0).var(axis=0, ddof=1)  # (B, m)
        reduced = variances.max(axis=-1) if config.reduction == "max" else variances.mean(axis=-1)
        per_component[name] = variances.values.copy()
        per_sample = per_sample + reduced.values
        tap_scalars.append(reduced.mean())

    per_sample /= len(names)
    loss = tap_scalars[0]
    for extra in tap_scalars[1:]:
        loss = loss + extra
    loss = loss * (1.0 / len(names))

    return PenaltyValue(
        scalar=loss,
        per_component=per_component,
        per_sample=per_sample,
        k=config.k,
        epsilon=eps,
        reduction=config.reduction,
        taps=config.taps,
    )
