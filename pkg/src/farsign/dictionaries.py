"""Worker direction dictionaries and directional-robustness certification.

Each worker w owns a d x m matrix A_w of direction columns.  The resilience
of the signed update rests on the margin

    eta(S) = min_{||x||_1 = 1}  sum_{w not in S} ||A_w^T x||_1
                              - sum_{w in S}     ||A_w^T x||_1

being strictly positive for every candidate adversarial subset S up to a
given size.  This module computes that margin three ways (closed form for
identity dictionaries, an exact angular sweep in d = 2, and Monte-Carlo
sampling on the l1 sphere) and wraps subset enumeration plus verdicts into
``certify``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

MARGIN_METHODS = ("analytic_identity", "exact_2d", "monte_carlo")
SUBSET_CAP = 1_000_000
_IDENTITY_MATERIALIZE_CAP = 2048


class CertificationBudgetError(RuntimeError):
    """Raised when exact subset enumeration would exceed the combinatorial cap."""


@dataclass(eq=False)
class DirectionDictionary:
    """N per-worker direction matrices of shape (dim, n_directions).

    ``matrices`` is None for the implicit identity dictionary (each worker
    holds the standard basis, n_directions == dim); this avoids ever
    materializing N identity matrices at large dim.
    """

    n_workers: int
    dim: int
    n_directions: int
    matrices: tuple[np.ndarray, ...] | None
    a_bar: float

    def __post_init__(self) -> None:
        if self.n_workers < 1 or self.dim < 1 or self.n_directions < 1:
            raise ValueError("n_workers, dim and n_directions must be positive")
        if self.matrices is None:
            if self.n_directions != self.dim:
                raise ValueError("identity dictionaries require n_directions == dim")
            if self.a_bar != 1.0:
                raise ValueError("identity dictionaries have a_bar == 1")
            return
        if len(self.matrices) != self.n_workers:
            raise ValueError("one matrix per worker required")
        recomputed = 0.0
        for w, mat in enumerate(self.matrices):
            if mat.shape != (self.dim, self.n_directions):
                raise ValueError(
                    f"matrix for worker {w} has shape {mat.shape}, "
                    f"expected {(self.dim, self.n_directions)}"
                )
            if not np.isfinite(mat).all():
                raise ValueError(f"matrix for worker {w} contains non-finite entries")
            recomputed = max(recomputed, float(np.linalg.norm(mat, axis=0).max()))
        if abs(recomputed - self.a_bar) > 1e-12:
            raise ValueError("a_bar must equal the largest column l2 norm")

    @property
    def is_identity(self) -> bool:
        return self.matrices is None

    def matrix(self, worker: int) -> np.ndarray:
        if not 0 <= worker < self.n_workers:
            raise ValueError(f"worker index {worker} out of range")
        if self.matrices is not None:
            return self.matrices[worker]
        if self.dim > _IDENTITY_MATERIALIZE_CAP:
            raise ValueError(
                "refusing to materialize an identity matrix at this dimension"
            )
        return np.eye(self.dim)

    def column(self, worker: int, direction: int) -> np.ndarray:
        if not 0 <= direction < self.n_directions:
            raise ValueError(f"direction index {direction} out of range")
        if self.is_identity:
            col = np.zeros(self.dim)
            col[direction] = 1.0
            return col
        return self.matrices[worker][:, direction]  # type: ignore[index]

    def stacked_rank(self) -> int:
        """Rank of the d x (N*m) horizontal stack of all worker matrices.

        Recorded for diagnostics; full column rank is possible only when
        N*m <= d and is not enforced anywhere.
        """
        if self.is_identity:
            return self.dim
        stacked = np.hstack(self.matrices)  # type: ignore[arg-type]
        return int(np.linalg.matrix_rank(stacked))

    def has_full_column_rank(self) -> bool:
        return (
            self.n_workers * self.n_directions <= self.dim
            and self.stacked_rank() == self.n_workers * self.n_directions
        )


def identity_dictionary(dim: int, n_workers: int) -> DirectionDictionary:
    return DirectionDictionary(
        n_workers=n_workers, dim=dim, n_directions=dim, matrices=None, a_bar=1.0
    )


def dictionary_from_matrices(matrices) -> DirectionDictionary:
    mats = tuple(np.ascontiguousarray(np.asarray(m, dtype=np.float64)) for m in matrices)
    if not mats:
        raise ValueError("at least one worker matrix required")
    for m in mats:
        if m.ndim != 2:
            raise ValueError("worker matrices must be 2-dimensional")
    d, md = mats[0].shape
    a_bar = max(float(np.linalg.norm(m, axis=0).max()) for m in mats)
    return DirectionDictionary(
        n_workers=len(mats), dim=d, n_directions=md, matrices=mats, a_bar=a_bar
    )


def ganesh_example_dictionary() -> DirectionDictionary:
    """Four single-column worker matrices in the plane.

    A compact non-identity instance whose certification flips between one
    and two tolerated adversaries; used throughout the tests.
    """
    cols = ([2.0, 0.0], [0.0, 2.0], [1.0, 2.0], [-2.0, 1.0])
    return dictionary_from_matrices([np.array(c).reshape(2, 1) for c in cols])


# ---------------------------------------------------------------------------
# Serialization: plain text, one worker block of d rows per matrix
# ---------------------------------------------------------------------------


def save_dictionary(dic: DirectionDictionary, path: str | Path) -> None:
    """Write the dictionary as text: a 'N d m' header line, then one block of
    d rows by m space-separated decimals per worker, blocks separated by a
    blank line.  Decimals are written with repr so a round-trip is exact.
    """
    if dic.is_identity and dic.dim > _IDENTITY_MATERIALIZE_CAP:
        raise ValueError("identity dictionaries at this dimension stay implicit")
    lines = [f"{dic.n_workers} {dic.dim} {dic.n_directions}"]
    for w in range(dic.n_workers):
        lines.append("")
        mat = dic.matrix(w)
        for row in mat:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dictionary(path: str | Path) -> DirectionDictionary:
    raw = [ln.strip() for ln in Path(path).read_text().splitlines()]
    rows = [ln for ln in raw if ln]
    if not rows:
        raise ValueError(f"{path}: empty dictionary file")
    header = rows[0].split()
    if len(header) != 3:
        raise ValueError(f"{path}: header must be 'n_workers dim n_directions'")
    n_workers, dim, m = (int(v) for v in header)
    body = rows[1:]
    if len(body) != n_workers * dim:
        raise ValueError(
            f"{path}: expected {n_workers * dim} matrix rows, found {len(body)}"
        )
    mats = []
    for w in range(n_workers):
        block = body[w * dim : (w + 1) * dim]
        mat = np.array([[float(v) for v in ln.split()] for ln in block])
        if mat.shape != (dim, m):
            raise ValueError(f"{path}: worker {w} block has shape {mat.shape}")
        mats.append(mat)
    return dictionary_from_matrices(mats)


# ---------------------------------------------------------------------------
# Margin computation
# ---------------------------------------------------------------------------


def _norm_table(dic: DirectionDictionary, points: np.ndarray) -> np.ndarray:
    """||A_w^T x||_1 for every worker w (rows) and point x (columns).

    points has shape (P, d) and need not be normalized.
    """
    if dic.is_identity:
        per_coord = np.abs(points)  # (P, d); identity norm is ||x||_1
        total = per_coord.sum(axis=1)
        return np.tile(total, (dic.n_workers, 1))
    out = np.empty((dic.n_workers, points.shape[0]))
    for w, mat in enumerate(dic.matrices):  # type: ignore[union-attr]
        out[w] = np.abs(points @ mat).sum(axis=1)
    return out


def _margin_from_table(table: np.ndarray, subset: tuple[int, ...]) -> np.ndarray:
    total = table.sum(axis=0)
    if not subset:
        return total
    return total - 2.0 * table[list(subset)].sum(axis=0)


def _breakpoint_angles(dic: DirectionDictionary) -> np.ndarray:
    """Angles where some column is orthogonal to x(theta) or x(theta) hits an
    axis; between consecutive angles every absolute term is smooth and the
    normalized margin is monotone, so arc endpoints plus midpoints cover the
    minimum."""
    angles = [0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi]
    for w in range(dic.n_workers):
        mat = dic.matrix(w)
        for i in range(dic.n_directions):
            cx, cy = float(mat[0, i]), float(mat[1, i])
            if cx == 0.0 and cy == 0.0:
                continue
            phi = math.atan2(cy, cx)
            for theta in (phi + 0.5 * math.pi, phi - 0.5 * math.pi):
                angles.append(theta % (2.0 * math.pi))
    uniq = np.unique(np.asarray(angles))
    mids = (uniq + np.diff(np.append(uniq, uniq[0] + 2.0 * math.pi)) / 2.0) % (
        2.0 * math.pi
    )
    return np.concatenate([uniq, mids])


def _l1_sphere_samples(dim: int, samples: int, seed: int) -> np.ndarray:
    """Uniform samples on the l1 unit sphere via exponential symmetrization."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    mags = rng.exponential(size=(samples, dim))
    mags /= mags.sum(axis=1, keepdims=True)
    signs = rng.integers(0, 2, size=(samples, dim)) * 2 - 1
    return mags * signs


def subset_margin(
    dic: DirectionDictionary,
    subset,
    method: str = "auto",
    samples: int = 100_000,
    seed: int = 0,
) -> float:
    """Margin eta(S) for one adversarial subset, normalized to ||x||_1 = 1.

    method 'auto' picks the closed form for identity dictionaries, the exact
    angular sweep when dim == 2 and Monte-Carlo sampling otherwise.
    """
    subset = tuple(sorted(set(int(w) for w in subset)))
    for w in subset:
        if not 0 <= w < dic.n_workers:
            raise ValueError(f"subset worker {w} out of range")
    if method == "auto":
        if dic.is_identity:
            method = "analytic_identity"
        elif dic.dim == 2:
            method = "exact_2d"
        else:
            method = "monte_carlo"
    if method not in MARGIN_METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {MARGIN_METHODS}")

    if method == "analytic_identity":
        if not dic.is_identity:
            raise ValueError("analytic_identity applies to identity dictionaries only")
        return float(dic.n_workers - 2 * len(subset))

    if method == "exact_2d":
        if dic.dim != 2:
            raise ValueError("exact_2d requires dim == 2")
        thetas = _breakpoint_angles(dic)
        points = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        points /= np.abs(points).sum(axis=1, keepdims=True)
        table = _norm_table(dic, points)
        return float(_margin_from_table(table, subset).min())

    points = _l1_sphere_samples(dic.dim, samples, seed)
    table = _norm_table(dic, points)
    return float(_margin_from_table(table, subset).min())


@dataclass(frozen=True)
class RobustnessCertificate:
    n_workers: int
    f_adv: int
    method: str
    margin_eta: float
    worst_subset: tuple[int, ...]
    samples_or_cells: int
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict.endswith("_pass")


def _enumerate_subsets(n_workers: int, f_adv: int):
    for size in range(f_adv + 1):
        yield from combinations(range(n_workers), size)


def certify(
    dic: DirectionDictionary,
    f_adv: int,
    method: str = "auto",
    samples: int = 100_000,
    seed: int = 0,
    subset_cap: int = SUBSET_CAP,
) -> RobustnessCertificate:
    """Certify directional robustness against up to f_adv adversarial workers.

    Exact methods yield certified_pass / certified_fail; Monte-Carlo yields
    sampled_pass / sampled_fail.  The verdict is a fail iff the worst margin
    is <= 0.  Subsets are scanned in deterministic order (size ascending,
    lexicographic); the first subset attaining the worst margin is reported.

    Raises:
        CertificationBudgetError: if exact enumeration needs more than
            ``subset_cap`` subsets of size f_adv (use monte_carlo, which
            falls back to sampling subsets as well as sphere points).
    """
    if not 0 <= f_adv < dic.n_workers:
        raise ValueError("f_adv must lie in [0, n_workers)")
    if method == "auto":
        if dic.is_identity:
            method = "analytic_identity"
        elif dic.dim == 2:
            method = "exact_2d"
        else:
            method = "monte_carlo"
    if method not in MARGIN_METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {MARGIN_METHODS}")

    if method == "analytic_identity":
        if not dic.is_identity:
            raise ValueError("analytic_identity applies to identity dictionaries only")
        # Margin depends on the subset only through its size, so only the
        # worst size needs a representative subset.
        margin = float(dic.n_workers - 2 * f_adv)
        verdict = "certified_pass" if margin > 0 else "certified_fail"
        return RobustnessCertificate(
            n_workers=dic.n_workers,
            f_adv=f_adv,
            method=method,
            margin_eta=margin,
            worst_subset=tuple(range(f_adv)),
            samples_or_cells=1,
            verdict=verdict,
        )

    worst_size_count = math.comb(dic.n_workers, f_adv)
    exact = method == "exact_2d"
    if exact and dic.dim != 2:
        raise ValueError("exact_2d requires dim == 2")
    if exact and worst_size_count > subset_cap:
        raise CertificationBudgetError(
            f"C({dic.n_workers}, {f_adv}) = {worst_size_count} subsets exceed the "
            f"cap of {subset_cap}; use method='monte_carlo'"
        )

    if exact:
        thetas = _breakpoint_angles(dic)
        points = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        points /= np.abs(points).sum(axis=1, keepdims=True)
        cells = points.shape[0]
    else:
        points = _l1_sphere_samples(dic.dim, samples, seed)
        cells = samples
    table = _norm_table(dic, points)

    if worst_size_count > subset_cap:
        # Sampled verdicts may also sample the subset space.
        rng = np.random.Generator(np.random.Philox(key=(1 << 32) | seed))
        subsets = [
            tuple(sorted(rng.choice(dic.n_workers, size=f_adv, replace=False)))
            for _ in range(subset_cap)
        ]
        subsets_iter = iter(subsets)
    else:
        subsets_iter = _enumerate_subsets(dic.n_workers, f_adv)

    worst_margin = math.inf
    worst_subset: tuple[int, ...] = ()
    for subset in subsets_iter:
        margin = float(_margin_from_table(table, subset).min())
        if margin < worst_margin:
            worst_margin = margin
            worst_subset = tuple(int(w) for w in subset)
    label = "certified" if exact else "sampled"
    verdict = f"{label}_pass" if worst_margin > 0 else f"{label}_fail"
    return RobustnessCertificate(
        n_workers=dic.n_workers,
        f_adv=f_adv,
        method=method,
        margin_eta=worst_margin,
        worst_subset=worst_subset,
        samples_or_cells=cells,
        verdict=verdict,
    )


if __name__ == "__main__":
    dic = ganesh_example_dictionary()
    for f in (1, 2):
        cert = certify(dic, f, method="exact_2d")
        print(f"f_adv={f}: eta={cert.margin_eta:.6f} verdict={cert.verdict} "
              f"worst={cert.worst_subset}")
