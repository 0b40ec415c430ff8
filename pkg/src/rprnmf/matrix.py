"""Dense matrix and mask types plus the elementwise/product primitives.

Matrices are thin wrappers around row-major float64 numpy arrays.  Factor
matrices are non-negative by construction (:func:`new_nonneg`); the plain
:class:`DenseMatrix` constructor accepts signed values so intermediate
quantities (gradients, residuals) can reuse the type.

``EPS`` is the single clamping constant shared by every divisor and log
argument in this package.
"""

from __future__ import annotations

import numpy as np

from .exceptions import (
    DegenerateMaskError,
    EmptyMaskError,
    InvalidRangeError,
    NegativeEntryError,
    NonPositiveModelEntryError,
    ShapeMismatchError,
)

EPS = 1e-12


class DenseMatrix:
    """2-D real matrix with row-major storage.

    Parameters
    ----------
    array : array-like
        Anything numpy can turn into a 2-D float array.  The data is copied
        into a C-contiguous float64 array.
    """

    __slots__ = ("a",)

    def __init__(self, array):
        a = np.array(array, dtype=float, order="C")
        if a.ndim != 2:
            raise ShapeMismatchError(f"expected a 2-D array, got ndim={a.ndim}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ShapeMismatchError(f"matrix dimensions must be positive, got {a.shape}")
        self.a = a

    @property
    def rows(self) -> int:
        return self.a.shape[0]

    @property
    def cols(self) -> int:
        return self.a.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Entries in row-major order (flat view)."""
        return self.a.ravel()

    def copy(self) -> "DenseMatrix":
        return DenseMatrix(self.a)

    def __getitem__(self, key):
        return self.a[key]

    def __repr__(self) -> str:
        return f"DenseMatrix({self.rows}x{self.cols})"


class MaskMatrix:
    """Binary indicator of observed entries (1 = observed)."""

    __slots__ = ("bits",)

    def __init__(self, array):
        b = np.array(array, dtype=float, order="C")
        if b.ndim != 2:
            raise ShapeMismatchError(f"expected a 2-D mask, got ndim={b.ndim}")
        if not np.isin(b, (0.0, 1.0)).all():
            raise ShapeMismatchError("mask entries must be 0 or 1")
        self.bits = b

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        """Number of observed entries."""
        return int(self.bits.sum())

    def copy(self) -> "MaskMatrix":
        return MaskMatrix(self.bits)

    @classmethod
    def ones(cls, rows: int, cols: int) -> "MaskMatrix":
        return cls(np.ones((rows, cols)))

    def require_coverage(self) -> None:
        """Reject masks with an all-zero row or column.

        Such masks leave a row/column of the factorisation entirely
        unconstrained, so they are refused wherever a mask feeds a solve.
        """
        row_gap = np.where(self.bits.sum(axis=1) == 0)[0]
        col_gap = np.where(self.bits.sum(axis=0) == 0)[0]
        if row_gap.size or col_gap.size:
            raise DegenerateMaskError(
                f"mask has empty rows {row_gap.tolist()} / columns {col_gap.tolist()}"
            )

    def __repr__(self) -> str:
        return f"MaskMatrix({self.rows}x{self.cols}, observed={self.count})"


def as_array(m) -> np.ndarray:
    """Accept a DenseMatrix or any array-like; return the float ndarray."""
    if isinstance(m, DenseMatrix):
        return m.a
    return np.asarray(m, dtype=float)


def as_mask_array(mask) -> np.ndarray | None:
    if mask is None:
        return None
    if isinstance(mask, MaskMatrix):
        return mask.bits
    return np.asarray(mask, dtype=float)


def new_nonneg(rows: int, cols: int, data) -> DenseMatrix:
    """Construct a non-negative ``rows`` x ``cols`` matrix from flat row-major data."""
    flat = np.asarray(data, dtype=float).ravel()
    if flat.size != rows * cols:
        raise ShapeMismatchError(
            f"need {rows * cols} entries for a {rows}x{cols} matrix, got {flat.size}"
        )
    neg = np.where(flat < 0)[0]
    if neg.size:
        i = int(neg[0])
        raise NegativeEntryError(i, float(flat[i]))
    return DenseMatrix(flat.reshape(rows, cols))


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Matrix product a @ b."""
    aa, bb = as_array(a), as_array(b)
    if aa.shape[1] != bb.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {aa.shape} by {bb.shape}")
    return DenseMatrix(aa @ bb)


def random_init(rows: int, cols: int, seed: int, low: float = 0.01, high: float = 1.0) -> DenseMatrix:
    """Seeded i.i.d. uniform matrix on [low, high).

    The default range starts above zero so multiplicative updates never see
    an exactly-zero factor entry at iteration 0.
    """
    if not (0 < low < high):
        raise InvalidRangeError(f"need 0 < low < high, got low={low}, high={high}")
    rng = np.random.default_rng(seed)
    return DenseMatrix(rng.uniform(low, high, size=(rows, cols)))


def _check_same_shape(v: np.ndarray, wh: np.ndarray, mask: np.ndarray | None) -> None:
    if v.shape != wh.shape:
        raise ShapeMismatchError(f"shape {v.shape} vs {wh.shape}")
    if mask is not None and mask.shape != v.shape:
        raise ShapeMismatchError(f"mask shape {mask.shape} vs data shape {v.shape}")


def frobenius_sq_diff(v, wh, mask=None) -> float:
    """Sum of squared differences, restricted to observed entries when masked."""
    va, wa, ma = as_array(v), as_array(wh), as_mask_array(mask)
    _check_same_shape(va, wa, ma)
    d = va - wa
    if ma is not None:
        d = ma * d
    return float(np.sum(d * d))


def matrix_divergence(v, wh, mask=None) -> float:
    """Generalised KL divergence sum(v*log(v/wh) - v + wh) over observed entries.

    Zero data entries contribute ``wh`` only (0*log(0/y) = 0).  Model entries
    below EPS are clamped; negative model entries are rejected outright.
    """
    va, wa, ma = as_array(v), as_array(wh), as_mask_array(mask)
    _check_same_shape(va, wa, ma)
    if ma is None:
        ma = 1.0
        observed_neg = wa < 0
    else:
        observed_neg = (wa < 0) & (ma > 0)
    if np.any(observed_neg):
        raise NonPositiveModelEntryError("model matrix has negative entries at observed cells")
    wc = np.maximum(wa, EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(va > 0, va * np.log(np.maximum(va, EPS) / wc), 0.0)
    return float(np.sum(ma * (lg - va + wa)))
