"""Exact rational matrices with labelled axes, and a float spectral oracle.

Matrices are stored as an integer numerator grid over a single positive
denominator, kept in lowest terms.  Products run through numpy integer
kernels whenever the result provably fits (an exact float dgemm below
2**52, int64 below 2**62) and fall back to arbitrary-precision Python
integers otherwise, so no operation ever rounds.

Rows and columns are addressed by object labels.  Two matrices over the
same label sets compare equal when their entries agree label-by-label,
regardless of storage order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

_DGEMM_SAFE = 2**52  # conservative: exact float64 integer arithmetic
_INT64_SAFE = 2**62

Labels = tuple[str, ...]


def _int_array(values, dtype=np.int64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def _max_abs_int(arr: np.ndarray) -> int:
    if arr.size == 0:
        return 0
    if arr.dtype == object:
        return max(abs(int(v)) for v in arr.flat)
    return int(np.abs(arr).max())


def _demote(arr: np.ndarray) -> np.ndarray:
    """Bring an object array back to int64 once its entries allow it."""
    if arr.dtype == object and _max_abs_int(arr) < _INT64_SAFE:
        arr = arr.astype(np.int64)
    return arr


def _exact_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer matrix product, exact on every path."""
    if a.dtype == np.int64 and b.dtype == np.int64:
        bound = a.shape[1] * _max_abs_int(a) * _max_abs_int(b)
        if bound < _DGEMM_SAFE:
            return np.rint(a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)
        if bound < _INT64_SAFE:
            return a @ b
    return np.dot(a.astype(object), b.astype(object))


def _gcd_of_array(arr: np.ndarray) -> int:
    if arr.dtype == object:
        g = 0
        for v in arr.flat:
            g = math.gcd(g, int(v))
            if g == 1:
                return 1
        return g
    if arr.size == 0:
        return 0
    return int(np.gcd.reduce(np.abs(arr), axis=None))


def _reduce(num: np.ndarray, den: int) -> tuple[np.ndarray, int]:
    if den < 1:
        raise ValueError("denominator must be positive")
    if den > 1:
        g = math.gcd(_gcd_of_array(num), den)
        if g > 1:
            num = num // g
            den //= g
    return _demote(num), den


def _scaled(num: np.ndarray, k: int) -> np.ndarray:
    """num * k without silent int64 overflow."""
    if k == 1:
        return num
    if num.dtype == np.int64 and _max_abs_int(num) * abs(k) >= _INT64_SAFE:
        num = num.astype(object)
    return num * k


class LabeledMatrix:
    """Dense exact-rational matrix whose axes carry object labels."""

    __slots__ = ("row_labels", "col_labels", "_num", "_den", "_row_index", "_col_index")

    def __init__(self, row_labels: Iterable[str], col_labels: Iterable[str],
                 num: np.ndarray, den: int = 1, reduce: bool = True):
        self.row_labels: Labels = tuple(row_labels)
        self.col_labels: Labels = tuple(col_labels)
        if num.shape != (len(self.row_labels), len(self.col_labels)):
            raise DimensionError(
                f"entry grid {num.shape} does not match labels "
                f"({len(self.row_labels)} x {len(self.col_labels)})")
        if reduce:
            num, den = _reduce(num, int(den))
        if num.flags.writeable:
            num = num.copy()
            num.flags.writeable = False
        self._num = num
        self._den = int(den)
        self._row_index = None
        self._col_index = None

    # -- construction -----------------------------------------------------

    @classmethod
    def from_rows(cls, row_labels, col_labels, rows) -> "LabeledMatrix":
        """Build from any grid of ints / Fractions / (num, den) pairs."""
        fracs = [[Fraction(v) for v in row] for row in rows]
        den = 1
        for row in fracs:
            for v in row:
                den = den * v.denominator // math.gcd(den, v.denominator)
        num = [[int(v * den) for v in row] for row in fracs]
        arr = np.array(num, dtype=object)
        return cls(row_labels, col_labels, _demote(arr), den)

    @classmethod
    def identity(cls, labels) -> "LabeledMatrix":
        labels = tuple(labels)
        return cls(labels, labels, _int_array(np.eye(len(labels), dtype=np.int64)), 1)

    @classmethod
    def zeros(cls, row_labels, col_labels) -> "LabeledMatrix":
        row_labels, col_labels = tuple(row_labels), tuple(col_labels)
        return cls(row_labels, col_labels,
                   _int_array(np.zeros((len(row_labels), len(col_labels)), dtype=np.int64)), 1)

    @classmethod
    def constant(cls, labels, value) -> "LabeledMatrix":
        """Square matrix with every entry equal to `value` (e.g. J / n)."""
        labels = tuple(labels)
        v = Fraction(value)
        n = len(labels)
        num = np.full((n, n), int(v.numerator), dtype=np.int64)
        return cls(labels, labels, num, v.denominator)

    # -- label bookkeeping -------------------------------------------------

    def _rindex(self) -> dict:
        if self._row_index is None:
            self._row_index = {lab: i for i, lab in enumerate(self.row_labels)}
        return self._row_index

    def _cindex(self) -> dict:
        if self._col_index is None:
            self._col_index = {lab: i for i, lab in enumerate(self.col_labels)}
        return self._col_index

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.row_labels), len(self.col_labels))

    def aligned(self, row_labels, col_labels) -> "LabeledMatrix":
        """Reordered copy over the same label sets."""
        row_labels, col_labels = tuple(row_labels), tuple(col_labels)
        if row_labels == self.row_labels and col_labels == self.col_labels:
            return self
        if set(row_labels) != set(self.row_labels) or set(col_labels) != set(self.col_labels):
            raise DimensionError("cannot align matrices over different label sets")
        ri = self._rindex()
        ci = self._cindex()
        rperm = [ri[lab] for lab in row_labels]
        cperm = [ci[lab] for lab in col_labels]
        num = self._num[np.ix_(rperm, cperm)]
        return LabeledMatrix(row_labels, col_labels, num, self._den, reduce=False)

    # -- element access ----------------------------------------------------

    def entry(self, row: str, col: str) -> Fraction:
        return Fraction(int(self._num[self._rindex()[row], self._cindex()[col]]), self._den)

    def __getitem__(self, key) -> Fraction:
        return self.entry(*key)

    def fraction_rows(self) -> list[list[Fraction]]:
        return [[Fraction(int(v), self._den) for v in row] for row in self._num]

    # -- algebra -----------------------------------------------------------

    def __matmul__(self, other: "LabeledMatrix") -> "LabeledMatrix":
        if set(self.col_labels) != set(other.row_labels):
            raise DimensionError(
                f"product label mismatch: left columns {_describe(self.col_labels)} "
                f"vs right rows {_describe(other.row_labels)}")
        if other.row_labels != self.col_labels:
            other = other.aligned(self.col_labels, other.col_labels)
        num = _exact_matmul(self._num, other._num)
        return LabeledMatrix(self.row_labels, other.col_labels, num,
                             self._den * other._den)

    def _binary(self, other: "LabeledMatrix", sign: int) -> "LabeledMatrix":
        if set(self.row_labels) != set(other.row_labels) or \
           set(self.col_labels) != set(other.col_labels):
            raise DimensionError(
                f"sum label mismatch: {_describe(self.row_labels)} vs "
                f"{_describe(other.row_labels)}")
        other = other.aligned(self.row_labels, self.col_labels)
        den = self._den * other._den // math.gcd(self._den, other._den)
        a = _scaled(self._num, den // self._den)
        b = _scaled(other._num, sign * (den // other._den))
        if a.dtype == object or b.dtype == object:
            num = a.astype(object) + b.astype(object)
        else:
            # int64 addition cannot overflow: both sides are < 2**62
            num = a + b
        return LabeledMatrix(self.row_labels, self.col_labels, num, den)

    def __add__(self, other):
        return self._binary(other, 1)

    def __sub__(self, other):
        return self._binary(other, -1)

    def __neg__(self):
        return LabeledMatrix(self.row_labels, self.col_labels, -self._num,
                             self._den, reduce=False)

    def scale(self, value) -> "LabeledMatrix":
        v = Fraction(value)
        num = _scaled(self._num, int(v.numerator))
        return LabeledMatrix(self.row_labels, self.col_labels, num,
                             self._den * v.denominator)

    def transpose(self) -> "LabeledMatrix":
        return LabeledMatrix(self.col_labels, self.row_labels, self._num.T,
                             self._den, reduce=False)

    @property
    def T(self) -> "LabeledMatrix":
        return self.transpose()

    # -- predicates and reductions ------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledMatrix):
            return NotImplemented
        if set(self.row_labels) != set(other.row_labels) or \
           set(self.col_labels) != set(other.col_labels):
            return False
        other = other.aligned(self.row_labels, self.col_labels)
        return self._den == other._den and np.array_equal(self._num, other._num)

    __hash__ = None

    def is_zero(self) -> bool:
        return not self._num.any()

    def is_square(self) -> bool:
        return set(self.row_labels) == set(self.col_labels)

    def is_symmetric(self) -> bool:
        if not self.is_square():
            return False
        other = self.aligned(self.row_labels, self.row_labels)
        return np.array_equal(other._num, other._num.T)

    def trace(self) -> Fraction:
        if not self.is_square():
            raise DimensionError(
                f"trace of non-square matrix: rows {_describe(self.row_labels)} "
                f"vs columns {_describe(self.col_labels)}")
        aligned = self.aligned(self.row_labels, self.row_labels)
        total = sum(int(v) for v in np.diagonal(aligned._num))
        return Fraction(total, self._den)

    def max_abs(self) -> Fraction:
        return Fraction(_max_abs_int(self._num), self._den)

    def canonical_key(self) -> tuple:
        """Hashable identity under label-based equality (sorted labels)."""
        rperm = sorted(range(len(self.row_labels)), key=lambda i: self.row_labels[i])
        cperm = sorted(range(len(self.col_labels)), key=lambda i: self.col_labels[i])
        num = self._num[np.ix_(rperm, cperm)]
        return (tuple(sorted(self.row_labels)), tuple(sorted(self.col_labels)),
                self._den, tuple(int(v) for v in num.flat))

    def to_float(self) -> np.ndarray:
        if self._num.dtype == object:
            num = np.array([[float(v) for v in row] for row in self._num])
        else:
            num = self._num.astype(np.float64)
        return num / float(self._den)

    def __repr__(self):
        return (f"LabeledMatrix({len(self.row_labels)}x{len(self.col_labels)}, "
                f"den={self._den})")


def _describe(labels: Sequence[str], limit: int = 6) -> str:
    shown = ", ".join(labels[:limit])
    if len(labels) > limit:
        shown += f", ... ({len(labels)} total)"
    return "{" + shown + "}"


# -- spec-level operation names ----------------------------------------------

def mat_mul(a: LabeledMatrix, b: LabeledMatrix) -> LabeledMatrix:
    return a @ b


def trace(a: LabeledMatrix) -> Fraction:
    return a.trace()


def is_symmetric_idempotent(a: LabeledMatrix) -> bool:
    """True iff a equals its transpose and its own square, exactly."""
    if not a.is_square():
        return False
    if not a.is_symmetric():
        return False
    return (a @ a) == a


# -- floating-point spectral oracle -------------------------------------------

try:  # pragma: no cover - exercised indirectly
    from numba import njit as _njit
    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False


def _jacobi_sweeps(a: np.ndarray, stop: float, max_sweeps: int) -> float:
    """Cyclic Jacobi diagonalization, in place.  Returns final max |offdiag|."""
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            row = np.abs(a[p, p + 1:])
            if row.size:
                off = max(off, float(row.max()))
        if off <= stop:
            return off
        thresh = off / n if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= thresh or apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = cp * c - cq * s
                a[:, q] = cq * c + cp * s
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = rp * c - rq * s
                a[q, :] = rq * c + rp * s
                a[p, q] = a[q, p] = 0.5 * (a[p, q] + a[q, p])
    off = 0.0
    for p in range(n - 1):
        row = np.abs(a[p, p + 1:])
        if row.size:
            off = max(off, float(row.max()))
    return off


if _HAVE_NUMBA:
    @_njit(cache=True)
    def _jacobi_sweeps_jit(a, stop, max_sweeps):  # pragma: no cover - compiled
        n = a.shape[0]
        for sweep in range(max_sweeps):
            off = 0.0
            for p in range(n - 1):
                for q in range(p + 1, n):
                    v = abs(a[p, q])
                    if v > off:
                        off = v
            if off <= stop:
                return off
            thresh = off / n if sweep < 3 else 0.0
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if abs(apq) <= thresh or apq == 0.0:
                        continue
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if tau >= 0.0:
                        t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = t * c
                    for i in range(n):
                        aip = a[i, p]
                        aiq = a[i, q]
                        a[i, p] = aip * c - aiq * s
                        a[i, q] = aiq * c + aip * s
                    for i in range(n):
                        api = a[p, i]
                        aqi = a[q, i]
                        a[p, i] = api * c - aqi * s
                        a[q, i] = aqi * c + api * s
                    m = 0.5 * (a[p, q] + a[q, p])
                    a[p, q] = m
                    a[q, p] = m
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                v = abs(a[p, q])
                if v > off:
                    off = v
        return off


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalues of a symmetric matrix, clustered within the tolerance."""

    eigenvalues: tuple[tuple[float, int], ...]  # (value, multiplicity), ascending
    residual: float

    def multiplicity_near(self, value: float, tol: float) -> int:
        return sum(m for v, m in self.eigenvalues if abs(v - value) <= tol)

    def distinct_nonzero(self, tol: float) -> list[tuple[float, int]]:
        return [(v, m) for v, m in self.eigenvalues if abs(v) > tol]


def float_spectrum(a: LabeledMatrix, tol: float = 1e-9) -> SpectrumReport:
    """All eigenvalues of an exactly-symmetric matrix via cyclic Jacobi.

    This path is independent of the exact pipeline: the input is converted
    to floats once and diagonalized with plain rotations.
    """
    if not a.is_square():
        raise DimensionError("float_spectrum requires a square matrix")
    if not a.is_symmetric():
        raise ValueError("float_spectrum requires an exactly symmetric matrix")
    work = np.ascontiguousarray(a.aligned(a.row_labels, a.row_labels).to_float())
    scale = max(1.0, float(np.abs(work).max(initial=0.0)))
    stop = min(tol, 1e-12) * scale
    if _HAVE_NUMBA:
        residual = float(_jacobi_sweeps_jit(work, stop, 40))
    else:
        residual = _jacobi_sweeps(work, stop, 40)
    if residual > tol * scale:
        raise ValueError(f"Jacobi sweep did not converge: residual {residual:g}")
    values = np.sort(np.diagonal(work))
    clusters: list[list[float]] = []
    for v in values:
        if clusters and v - clusters[-1][-1] <= tol:
            clusters[-1].append(float(v))
        else:
            clusters.append([float(v)])
    eig = tuple((float(np.mean(c)), len(c)) for c in clusters)
    return SpectrumReport(eigenvalues=eig, residual=residual)
