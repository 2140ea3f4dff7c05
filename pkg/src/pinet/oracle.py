"""Brute-force dense polynomial oracle.

Any map ``R^d -> R^o`` that is a polynomial of total degree <= N can be
written as ``beta + sum_n W_n x_2 z x_3 z ... x_{n+1} z`` with one
``o x d^n`` coefficient tensor per order. Only the symmetric part of each
``W_n`` is identifiable, so coefficients are stored per monomial instead:
``DensePoly.coeffs[j, m]`` multiplies ``prod_i z_i ** basis[m][i]`` in output
``j``. The basis is graded (degree 0 first) and, within one degree, in
descending lexicographic order of exponent vectors, e.g. for d=2, N=2::

    (0,0) (1,0) (0,1) (2,0) (1,1) (0,2)

Black-box maps are passed as callables taking a ``(m, d)`` float array and
returning ``(m, o)`` values (a ``Tensor`` or anything array-like).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

DEFAULT_BUDGET = 5000
RANK_TOL = 1e-10
FIT_TOL = 1e-9
PROBE_TOL = 1e-6
PROBE_SCALES = (1.0, 8.0, 64.0)
HOLDOUT_POINTS = 200


class BudgetExceeded(ValueError):
    def __init__(self, basis_size: int, budget: int, d: int, n: int):
        self.basis_size = basis_size
        self.budget = budget
        super().__init__(
            f"C({d + n},{n})={basis_size} exceeds budget {budget} "
            f"(monomial basis for d={d}, N={n})"
        )


class IllConditioned(ValueError):
    def __init__(self, condition: float):
        self.condition = condition
        super().__init__(f"design matrix is rank deficient (condition number {condition:.3e})")


# -- monomial basis --------------------------------------------------------------


def basis_size(d: int, n: int) -> int:
    return math.comb(d + n, n)


def monomials(d: int, n: int) -> list[tuple[int, ...]]:
    """All exponent vectors over ``d`` variables with total degree <= ``n``."""
    out = []
    for deg in range(n + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            e = [0] * d
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


def design_matrix(z: np.ndarray, basis: Sequence[tuple[int, ...]]) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    exps = np.asarray(basis, dtype=np.int64)
    top = int(exps.max()) if exps.size else 0
    powers = np.ones((top + 1,) + z.shape)
    for p in range(1, top + 1):
        powers[p] = powers[p - 1] * z
    cols = np.ones((z.shape[0], len(basis)))
    for i in range(z.shape[1]):
        cols *= powers[exps[:, i], :, i].T
    return cols


def monomial_name(e: Sequence[int]) -> str:
    if not any(e):
        return "1"
    parts = []
    for i, p in enumerate(e, start=1):
        if p == 1:
            parts.append(f"z{i}")
        elif p > 1:
            parts.append(f"z{i}^{p}")
    return "*".join(parts)


# -- dense polynomials ------------------------------------------------------------


@dataclass
class DensePoly:
    input_dim: int
    output_dim: int
    order: int
    coeffs: np.ndarray  # (output_dim, basis_size(input_dim, order))

    def __post_init__(self):
        self.coeffs = np.array(self.coeffs, dtype=np.float64).reshape(self.output_dim, -1)
        nb = basis_size(self.input_dim, self.order)
        if self.coeffs.shape[1] != nb:
            raise ShapeError(f"expected {nb} coefficients per output, got {self.coeffs.shape[1]}")

    @property
    def basis(self) -> list[tuple[int, ...]]:
        return monomials(self.input_dim, self.order)

    @property
    def beta(self) -> np.ndarray:
        return self.coeffs[:, 0].copy()

    def degree(self, atol: float = 0.0) -> int:
        """Highest total degree carrying a coefficient with magnitude above ``atol``."""
        degs = np.array([sum(e) for e in self.basis])
        live = np.abs(self.coeffs).max(axis=0) > atol
        return int(degs[live].max()) if live.any() else 0

    def terms(self, output: int = 0, atol: float = 0.0) -> list[tuple[tuple[int, ...], float]]:
        return [(e, float(c)) for e, c in zip(self.basis, self.coeffs[output]) if abs(c) > atol]

    def tensors(self) -> list[np.ndarray]:
        """Symmetric coefficient tensors ``W_n`` of shape ``(o, d, ..., d)`` for n = 1..N."""
        d, o = self.input_dim, self.output_dim
        out = [np.zeros((o,) + (d,) * n) for n in range(1, self.order + 1)]
        for m, e in enumerate(self.basis):
            n = sum(e)
            if n == 0:
                continue
            idx = [i for i, p in enumerate(e) for _ in range(p)]
            perms = set(itertools.permutations(idx))
            for perm in perms:
                out[n - 1][(slice(None),) + perm] = self.coeffs[:, m] / len(perms)
        return out

    @classmethod
    def from_tensors(cls, beta, tensors: Sequence[np.ndarray]) -> "DensePoly":
        """Collapse (not necessarily symmetric) coefficient tensors onto the monomial basis."""
        beta = np.asarray(beta, dtype=np.float64)
        o = beta.shape[0]
        d = tensors[0].shape[1] if tensors else 1
        n_max = len(tensors)
        basis = monomials(d, n_max)
        pos = {e: i for i, e in enumerate(basis)}
        coeffs = np.zeros((o, len(basis)))
        coeffs[:, 0] = beta
        for n, w in enumerate(tensors, start=1):
            w = np.asarray(w, dtype=np.float64)
            for idx in itertools.product(range(d), repeat=n):
                e = [0] * d
                for i in idx:
                    e[i] += 1
                coeffs[:, pos[tuple(e)]] += w[(slice(None),) + idx]
        return cls(d, o, n_max, coeffs)


def eval_dense(p: DensePoly, z) -> Tensor:
    """Evaluate in the monomial basis. ``z`` is ``(d,)`` or ``(batch, d)``."""
    arr = T.as_tensor(z).data
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != p.input_dim:
        raise ShapeError(f"input shape {T.as_tensor(z).shape} incompatible with d={p.input_dim}")
    out = design_matrix(arr, p.basis) @ p.coeffs.T
    return Tensor(out[0] if single else out)


def eval_dense_tensor_path(p: DensePoly, z) -> Tensor:
    """Evaluate through repeated mode products with the symmetric tensors (cross-check route)."""
    zt = T.as_tensor(z)
    if zt.ndim != 1 or zt.shape[0] != p.input_dim:
        raise ShapeError(f"tensor path takes a single ({p.input_dim},) vector, got {zt.shape}")
    y = T.Tensor(p.beta)
    for w in p.tensors():
        acc = Tensor(w)
        while acc.ndim > 1:
            acc = T.mode_vec_product(acc, zt, acc.ndim)
        y = T.add(y, acc)
    return y


# -- least squares ------------------------------------------------------------------


@dataclass
class LstsqResult:
    coefficients: np.ndarray
    residual: float  # max absolute residual of the fitted system
    condition: float
    rank: int
    rank_deficient: bool


def solve_least_squares(design, targets, rank_tol: float = RANK_TOL) -> LstsqResult:
    """Minimum-norm least-squares solve through the SVD of ``design``.

    Singular values below ``rank_tol * s_max`` are discarded; when that
    happens ``rank_deficient`` is set but the truncated solution is still
    returned.
    """
    a = np.asarray(T.as_tensor(design).data if isinstance(design, Tensor) else design, dtype=np.float64)
    b = np.asarray(T.as_tensor(targets).data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"design must be a matrix, got shape {a.shape}")
    if a.shape[0] < a.shape[1]:
        raise ShapeError(f"need rows >= columns, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"targets have {b.shape[0]} rows, design has {a.shape[0]}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    keep = s > rank_tol * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    rank = int(keep.sum())
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    x = vt.T @ ((u.T @ b) * (inv if b.ndim == 1 else inv[:, None]))
    cond = float(s[0] / s[-1]) if s.size and s[-1] > 0 else math.inf
    resid = float(np.max(np.abs(a @ x - b))) if b.size else 0.0
    return LstsqResult(x, resid, cond, rank, rank < a.shape[1])


# -- fitting and probing ----------------------------------------------------------------


def _call(f: Callable, z: np.ndarray) -> np.ndarray:
    y = f(z)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != z.shape[0]:
        raise ShapeError(f"black box returned {y.shape[0]} rows for {z.shape[0]} inputs")
    return y


@dataclass
class FitResult:
    poly: DensePoly
    residual: float
    condition: float
    samples: int

    def __iter__(self):  # allows ``poly, residual = fit_dense(...)``
        return iter((self.poly, self.residual))


def relative_error(actual: np.ndarray, reference: np.ndarray) -> float:
    """max |actual - reference| / (1 + |reference|), elementwise."""
    return float(np.max(np.abs(actual - reference) / (1.0 + np.abs(reference))))


def fit_dense(f: Callable, d: int, o: int, n_max: int, seed: int = 0,
              budget: int = DEFAULT_BUDGET, holdout: int = HOLDOUT_POINTS) -> FitResult:
    """Recover dense coefficients of degree <= ``n_max`` from samples of ``f``.

    Fit points: ``max(2 * basis, 20)`` draws from U[-1, 1]^d. The returned
    residual is :func:`relative_error` over ``holdout`` fresh draws.
    """
    nb = basis_size(d, n_max)
    if nb > budget:
        raise BudgetExceeded(nb, budget, d, n_max)
    rng = np.random.default_rng(seed)
    m = max(2 * nb, 20)
    z_fit = rng.uniform(-1.0, 1.0, size=(m, d))
    z_hold = rng.uniform(-1.0, 1.0, size=(holdout, d))
    y_fit = _call(f, z_fit)
    if y_fit.shape[1] != o:
        raise ShapeError(f"black box has {y_fit.shape[1]} outputs, expected {o}")
    basis = monomials(d, n_max)
    sol = solve_least_squares(design_matrix(z_fit, basis), y_fit)
    if sol.rank_deficient:
        raise IllConditioned(sol.condition)
    poly = DensePoly(d, o, n_max, sol.coefficients.T)
    y_hold = _call(f, z_hold)
    resid = relative_error(eval_dense(poly, z_hold).data, y_hold)
    return FitResult(poly, resid, sol.condition, m)


def fit_dense_samples(z, y, n_max: int) -> FitResult:
    """Least-squares fit from a fixed sample set; the residual is measured on the same points."""
    z = np.atleast_2d(np.asarray(T.as_tensor(z).data))
    y = np.asarray(T.as_tensor(y).data)
    y = y[:, None] if y.ndim == 1 else y
    basis = monomials(z.shape[1], n_max)
    sol = solve_least_squares(design_matrix(z, basis), y)
    poly = DensePoly(z.shape[1], y.shape[1], n_max, sol.coefficients.T)
    return FitResult(poly, relative_error(eval_dense(poly, z).data, y), sol.condition, z.shape[0])


EXCEEDS_MAX = "exceeds max"


@dataclass
class DegreeProbe:
    per_output: list[int | None]  # None: no vanishing difference up to max_degree + 1
    max_degree: int

    @property
    def degree(self) -> int | None:
        if any(d is None for d in self.per_output):
            return None
        return max(self.per_output)

    @property
    def exceeds(self) -> bool:
        return self.degree is None

    def __str__(self):
        return EXCEEDS_MAX if self.exceeds else str(self.degree)


def _sliding_max(a: np.ndarray, width: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(a, width).max(axis=-1)


def difference_ratio(g: np.ndarray, n: int) -> float:
    """Largest ``|Delta^n g| / (2^n max|g|)`` over all windows of ``n+1`` consecutive samples."""
    diff = np.diff(g, n)
    scale = _sliding_max(np.abs(g), n + 1) * 2.0 ** n
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(scale > 0, np.abs(diff) / scale, 0.0)
    if not np.all(np.isfinite(ratio)):
        return math.inf
    return float(ratio.max())


def probe_degree(f: Callable, d: int, seed: int = 0, max_degree: int = 8,
                 tol: float = PROBE_TOL, scales: Sequence[float] = PROBE_SCALES) -> DegreeProbe:
    """Realized polynomial degree of ``f`` along a random ray through the origin.

    Samples ``g(t) = f(s * t * u)`` for a seeded unit direction ``u`` on
    ``2 * max_degree + 3`` unit-spaced ``t`` centred near zero (randomly
    offset by up to half a step so symmetric functions do not hide terms).
    At each domain scale ``s`` the degree of an output is the smallest D
    whose (D+1)-th difference vanishes, to ``tol`` relative to the local
    sample magnitude, in every window. Rounding noise sits near 1e-16 at any
    scale, so scales can only reveal degree, never invent it; the largest
    degree seen wins. Outputs with no vanishing difference report ``None``.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=d)
    u /= np.linalg.norm(u)
    pts = 2 * max_degree + 3
    t = np.arange(pts) - (pts - 1) / 2 + rng.uniform(-0.5, 0.5)
    per_output: list[int | None] | None = None
    for s in scales:
        with np.errstate(all="ignore"):
            g = _call(f, (s * t)[:, None] * u[None, :])
        found_here = []
        for col in g.T:
            found = None
            for deg in range(max_degree + 1):
                if difference_ratio(col, deg + 1) <= tol:
                    found = deg
                    break
            found_here.append(found)
        if per_output is None:
            per_output = found_here
        else:
            per_output = [None if a is None or b is None else max(a, b) for a, b in zip(per_output, found_here)]
    return DegreeProbe(per_output, max_degree)
