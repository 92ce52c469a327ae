"""Exact brute-force references for the stochastic estimator.

Three independent ground truths live here: full finite-difference
Hessians of a black-box function, the exact population variance of the
probe quadratic form by enumeration of all 2^n sign vectors, and the
diagonality statistics used to compare trained generators. None of them
share code with the stochastic path they validate.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation
from .penalty import evaluate_with_taps, exact_offdiag_penalty

ENUMERATION_LIMIT = 20
_CHUNK = 1 << 16


@dataclass
class HessianSet:
    """Per-output-component Hessians of one function at one point.

    ``matrices`` has shape (m, n, n) and stores (H + H^T) / 2 of the raw
    estimate. ``max_asymmetry`` records the largest |H_ij - H_ji| seen
    before symmetrization; the centered-product stencil used here is
    symmetric by construction, so the field is 0.0 and only becomes
    informative for stencil variants.
    """

    matrices: np.ndarray
    z: np.ndarray
    epsilon: float
    max_asymmetry: float = 0.0

    @property
    def count(self) -> int:
        return self.matrices.shape[0]


@dataclass
class DiagonalityReport:
    """How diagonal a collection of Hessians is.

    ``d_percent`` is the fraction of matrices whose largest-magnitude
    entry lies on the diagonal (ties count as diagonal); ``d_ratio`` is
    the mean absolute diagonal entry over the mean absolute off-diagonal
    entry, pooled across all matrices. When every off-diagonal entry is
    zero the ratio is reported as +inf with ``offdiag_all_zero`` set.
    """

    d_percent: float
    d_ratio: float
    count: int
    offdiag_all_zero: bool = False

    def to_dict(self) -> dict:
        return {
            "d_percent": self.d_percent,
            "d_ratio": None if math.isinf(self.d_ratio) else self.d_ratio,
            "count": self.count,
            "offdiag_all_zero": self.offdiag_all_zero,
        }


def exact_hessian_fd(fn, z, epsilon: float) -> HessianSet:
    """Full finite-difference Hessian of every output component.

    Diagonal entries use the 1-D central second difference; mixed entries
    use the four-point centered product stencil

        [f(z+e_i+e_j) - f(z+e_i-e_j) - f(z-e_i+e_j) + f(z-e_i-e_j)] / (4 eps^2)

    whose truncation error is O(eps^2), so cubic test functions are
    resolved exactly up to round-off. Costs O(n^2) batched evaluations.
    """
    if not epsilon > 0.0:
        raise ContractViolation(f"epsilon must be positive, got {epsilon}")
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    n = z.size
    eye = np.eye(n)

    points = [z]
    for i in range(n):
        points.append(z + epsilon * eye[i])
        points.append(z - epsilon * eye[i])
    pair_base = len(points)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for i, j in pairs:
        step_i, step_j = epsilon * eye[i], epsilon * eye[j]
        points.extend((z + step_i + step_j, z + step_i - step_j,
                       z - step_i + step_j, z - step_i - step_j))

    with ad.no_grad():
        out, _ = evaluate_with_taps(fn, ad.Tensor(np.stack(points)))
    f = out.values  # (P, m)
    m = f.shape[1]

    h = np.zeros((m, n, n))
    inv = 1.0 / (epsilon * epsilon)
    for i in range(n):
        h[:, i, i] = (f[1 + 2 * i] - 2.0 * f[0] + f[2 + 2 * i]) * inv
    for idx, (i, j) in enumerate(pairs):
        p = pair_base + 4 * idx
        mixed = (f[p] - f[p + 1] - f[p + 2] + f[p + 3]) * (0.25 * inv)
        h[:, i, j] = mixed
        h[:, j, i] = mixed

    return HessianSet(matrices=h, z=z, epsilon=epsilon, max_asymmetry=0.0)


def hessian_sets_for(fn, zs, epsilon: float, threads: int = 1) -> list[HessianSet]:
    """Exact Hessians at several points; points are independent, so they parallelize."""
    zs = np.asarray(zs, dtype=np.float64)
    if zs.ndim != 2:
        raise ContractViolation(f"expected a (S, n) array of points, got shape {zs.shape}")
    if threads < 1:
        raise ContractViolation(f"threads must be >= 1, got {threads}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda p: exact_hessian_fd(fn, p, epsilon), zs))
    return [exact_hessian_fd(fn, p, epsilon) for p in zs]


def enumerate_variance(matrix) -> float:
    """Exact population variance of v^T H v over all 2^n sign vectors.

    The enumeration is the ground truth the stochastic estimator is
    checked against: the result equals twice the sum of squared
    off-diagonal entries of H. Accumulation is shifted by trace(H), the
    analytic mean of the quadratic form, to keep the sums stable.
    """
    h = np.asarray(matrix, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {h.shape}")
    if not np.allclose(h, h.T):
        raise ContractViolation("matrix must be symmetric")
    n = h.shape[0]
    if n > ENUMERATION_LIMIT:
        raise ContractViolation(
            f"enumeration over 2^n probes is limited to n <= {ENUMERATION_LIMIT}, got n = {n}"
        )
    total = 1 << n
    shift = float(np.trace(h))
    bits = np.arange(n, dtype=np.uint64)
    sum_c = 0.0
    sum_c2 = 0.0
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.uint64)
        v = (((idx[:, None] >> bits) & 1) * 2.0 - 1.0)
        q = np.einsum("bi,bi->b", v @ h, v)
        c = q - shift
        sum_c += float(np.sum(c))
        sum_c2 += float(np.sum(c * c))
    mean_c = sum_c / total
    return sum_c2 / total - mean_c * mean_c


def diagonality_metrics(hessians) -> DiagonalityReport:
    """Pool Hessian collections into the two diagonality statistics."""
    stacks = list(_iter_hessian_stacks(hessians))
    if not stacks:
        raise ContractViolation("diagonality_metrics: empty collection")

    diag_count = 0
    total = 0
    diag_sum = 0.0
    diag_n = 0
    off_sum = 0.0
    off_n = 0
    for mats in stacks:
        m, n, _ = mats.shape
        absmats = np.abs(mats)
        eye = np.eye(n, dtype=bool)
        diag_abs = absmats[:, eye]
        off_abs = absmats[:, ~eye]
        max_diag = diag_abs.max(axis=1)
        max_off = off_abs.max(axis=1) if n > 1 else np.zeros(m)
        diag_count += int(np.sum(max_diag >= max_off))  # ties favor the diagonal
        total += m
        diag_sum += float(diag_abs.sum())
        diag_n += diag_abs.size
        off_sum += float(off_abs.sum())
        off_n += off_abs.size

    mean_diag = diag_sum / diag_n if diag_n else 0.0
    mean_off = off_sum / off_n if off_n else 0.0
    if mean_off == 0.0:
        return DiagonalityReport(
            d_percent=diag_count / total, d_ratio=math.inf, count=total, offdiag_all_zero=True
        )
    return DiagonalityReport(
        d_percent=diag_count / total, d_ratio=mean_diag / mean_off, count=total
    )


def _iter_hessian_stacks(hessians):
    if isinstance(hessians, HessianSet):
        yield _check_stack(hessians.matrices)
        return
    if isinstance(hessians, np.ndarray):
        yield _check_stack(hessians if hessians.ndim == 3 else hessians[None])
        return
    for item in hessians:
        if isinstance(item, HessianSet):
            yield _check_stack(item.matrices)
        else:
            a = np.asarray(item, dtype=np.float64)
            yield _check_stack(a if a.ndim == 3 else a[None])


def _check_stack(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ContractViolation(f"expected (m, n, n) Hessian stacks, got shape {a.shape}")
    return a


def export_hessian_heatmaps(hessians, path, top: int | None = None) -> list[dict]:
    """Write one CSV plus one grayscale pixmap per Hessian matrix.

    Matrices are ranked by their exact off-diagonal penalty; ``top``
    restricts export to the k largest. CSV values round-trip exactly
    (shortest-repr decimals); pixmaps are min/max normalized per matrix,
    with a constant matrix rendered as uniform mid-gray. Returns the
    written index, which is also stored as ``index.json``.
    """
    mats = np.concatenate(list(_iter_hessian_stacks(hessians)), axis=0)
    penalties = np.array([exact_offdiag_penalty(m) for m in mats])
    order = np.argsort(-penalties, kind="stable")
    if top is not None:
        if top < 1:
            raise ContractViolation(f"top must be >= 1, got {top}")
        order = order[:top]

    os.makedirs(path, exist_ok=True)
    index = []
    for rank, comp in enumerate(order):
        comp = int(comp)
        stem = f"hessian_{comp:05d}"
        csv_path = os.path.join(path, stem + ".csv")
        pgm_path = os.path.join(path, stem + ".pgm")
        _write_csv(csv_path, mats[comp])
        _write_pgm(pgm_path, mats[comp])
        index.append(
            {
                "rank": rank,
                "component": comp,
                "offdiag_penalty": float(penalties[comp]),
                "csv": os.path.basename(csv_path),
                "pixmap": os.path.basename(pgm_path),
            }
        )
    with open(os.path.join(path, "index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index


def _write_csv(path: str, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def _write_pgm(path: str, matrix: np.ndarray) -> None:
    lo, hi = float(matrix.min()), float(matrix.max())
    if hi > lo:
        norm = (matrix - lo) / (hi - lo)
        pixels = np.clip(np.rint(norm * 255.0), 0, 255).astype(np.uint8)
    else:
        pixels = np.full(matrix.shape, 128, dtype=np.uint8)  # degenerate range guard
    header = f"P5\n{matrix.shape[1]} {matrix.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())
