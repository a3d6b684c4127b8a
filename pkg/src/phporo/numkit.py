"""Dense linear algebra utilities with explicit structural checks.

All matrices are plain 2-d numpy arrays of float64.  Every routine is a pure
function; nothing here mutates its arguments.  Tolerances default to the
scale-aware value ``1e-10 * (1 + max|entry|)`` and can be overridden
everywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

POSITIVE_DEFINITE = "positive_definite"
POSITIVE_SEMIDEFINITE = "positive_semidefinite"
INDEFINITE = "indefinite"


class StructureError(ValueError):
    """A matrix violates a required algebraic structure (symmetry, definiteness)."""


class SingularMatrixError(ValueError):
    """A linear solve hit a numerically singular matrix."""


def as_matrix(M) -> np.ndarray:
    """Convert to a float64 2-d array and verify all entries are finite."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a matrix, got array of dimension {A.ndim}")
    if A.size and not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    return A


def default_tol(M) -> float:
    """Scale-aware structural tolerance: 1e-10 * (1 + max|entry|)."""
    A = np.asarray(M, dtype=float)
    amax = float(np.max(np.abs(A))) if A.size else 0.0
    return 1e-10 * (1.0 + amax)


def _require_square(M: np.ndarray, op: str) -> None:
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{op} requires a square matrix, got shape {M.shape}")


def symmetry_defect(M) -> float:
    """Largest entry of |M - M^T|."""
    A = as_matrix(M)
    _require_square(A, "symmetry_defect")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(A - A.T)))


def skew_defect(M) -> float:
    """Largest entry of |M + M^T| (includes the doubled diagonal)."""
    A = as_matrix(M)
    _require_square(A, "skew_defect")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(A + A.T)))


def is_symmetric(M, tol: float | None = None) -> bool:
    """True iff max |M_ij - M_ji| <= tol."""
    A = as_matrix(M)
    _require_square(A, "is_symmetric")
    if tol is None:
        tol = default_tol(A)
    return symmetry_defect(A) <= tol


def is_skew(M, tol: float | None = None) -> bool:
    """True iff max |M_ij + M_ji| <= tol (diagonal bounded by tol)."""
    A = as_matrix(M)
    _require_square(A, "is_skew")
    if tol is None:
        tol = default_tol(A)
    return skew_defect(A) <= tol


def sym_skew_split(M) -> tuple[np.ndarray, np.ndarray]:
    """Split M into (symmetric, skew-symmetric) parts that sum back to M."""
    A = as_matrix(M)
    _require_square(A, "sym_skew_split")
    sym = 0.5 * (A + A.T)
    skw = 0.5 * (A - A.T)
    return sym, skw


@dataclass(frozen=True)
class SpectralReport:
    """Eigenvalue-based definiteness report for a (nearly) symmetric matrix."""

    min_eigenvalue: float
    max_eigenvalue: float
    max_asymmetry: float
    verdict: str

    @property
    def is_semidefinite(self) -> bool:
        return self.verdict in (POSITIVE_DEFINITE, POSITIVE_SEMIDEFINITE)

    def to_dict(self) -> dict:
        return {
            "min_eigenvalue": self.min_eigenvalue,
            "max_eigenvalue": self.max_eigenvalue,
            "max_asymmetry": self.max_asymmetry,
            "verdict": self.verdict,
        }


def psd_check(M, tol: float | None = None, require_symmetric: bool = True) -> SpectralReport:
    """Classify the symmetrized part of M as PD / PSD / indefinite.

    Eigenvalues are taken from 0.5*(M + M^T).  With ``require_symmetric``
    (the default) an asymmetry beyond tol raises ``StructureError`` so that
    callers must symmetrize explicitly; reporting callers can disable the
    check and read ``max_asymmetry`` from the result instead.
    """
    A = as_matrix(M)
    _require_square(A, "psd_check")
    if tol is None:
        tol = default_tol(A)
    defect = symmetry_defect(A)
    if require_symmetric and defect > tol:
        raise StructureError(
            f"matrix asymmetry {defect:.3e} exceeds tolerance {tol:.3e}"
        )
    if A.size == 0:
        return SpectralReport(np.inf, -np.inf, 0.0, POSITIVE_DEFINITE)
    eigs = np.linalg.eigvalsh(0.5 * (A + A.T))
    lo, hi = float(eigs[0]), float(eigs[-1])
    if lo > tol:
        verdict = POSITIVE_DEFINITE
    elif lo >= -tol:
        verdict = POSITIVE_SEMIDEFINITE
    else:
        verdict = INDEFINITE
    return SpectralReport(lo, hi, defect, verdict)


def sqrtm_spd(M, tol: float | None = None) -> np.ndarray:
    """Symmetric positive definite square root via spectral decomposition.

    Requires M symmetric positive definite within tol; the result S is
    symmetric with ||S @ S - M|| <= tol * ||M||.
    """
    A = as_matrix(M)
    _require_square(A, "sqrtm_spd")
    if tol is None:
        tol = default_tol(A)
    report = psd_check(A, tol)
    if report.verdict != POSITIVE_DEFINITE:
        raise StructureError(
            f"sqrtm_spd needs a positive definite matrix, got {report.verdict} "
            f"(min eigenvalue {report.min_eigenvalue:.3e})"
        )
    if A.size == 0:
        return A.copy()
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def solve(M, b) -> np.ndarray:
    """Solve M x = b with LU factorization and explicit singularity detection.

    Accepts a vector or a matrix right-hand side.  A pivot below
    ``1e-13 * max(1, max pivot)`` raises ``SingularMatrixError``.
    """
    A = as_matrix(M)
    _require_square(A, "solve")
    rhs = np.asarray(b, dtype=float)
    if rhs.shape[0] != A.shape[0]:
        raise ValueError(f"rhs length {rhs.shape[0]} does not match matrix size {A.shape[0]}")
    if A.size == 0:
        return np.zeros_like(rhs)
    with warnings.catch_warnings():
        # singularity is detected and raised explicitly below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if float(np.min(pivots)) <= 1e-13 * max(1.0, float(np.max(pivots))):
        raise SingularMatrixError(
            f"matrix numerically singular (smallest pivot {np.min(pivots):.3e})"
        )
    return lu_solve((lu, piv), rhs, check_finite=False)


def block_diag(*blocks) -> np.ndarray:
    """Dense block-diagonal concatenation; accepts empty blocks."""
    mats = [as_matrix(B) for B in blocks]
    rows = sum(B.shape[0] for B in mats)
    cols = sum(B.shape[1] for B in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for B in mats:
        out[r : r + B.shape[0], c : c + B.shape[1]] = B
        r += B.shape[0]
        c += B.shape[1]
    return out


# ---------------------------------------------------------------------------
# MatrixMarket import/export (coordinate and dense array formats)
# ---------------------------------------------------------------------------

_MM_COORD = "%%MatrixMarket matrix coordinate real general"
_MM_ARRAY = "%%MatrixMarket matrix array real general"


def write_matrix_market(path, M, fmt: str = "coordinate") -> None:
    """Write M in MatrixMarket format (1-based indices, real general)."""
    A = as_matrix(M)
    lines = []
    if fmt == "coordinate":
        lines.append(_MM_COORD)
        ii, jj = np.nonzero(A)
        lines.append(f"{A.shape[0]} {A.shape[1]} {len(ii)}")
        for i, j in zip(ii, jj):
            lines.append(f"{i + 1} {j + 1} {float(A[i, j])!r}")
    elif fmt == "array":
        lines.append(_MM_ARRAY)
        lines.append(f"{A.shape[0]} {A.shape[1]}")
        # array format is column-major by convention
        for j in range(A.shape[1]):
            for i in range(A.shape[0]):
                lines.append(f"{float(A[i, j])!r}")
    else:
        raise ValueError(f"unknown MatrixMarket format {fmt!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_market(path) -> np.ndarray:
    """Read a real general MatrixMarket file written in either format."""
    with open(path) as fh:
        header = fh.readline().strip()
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("%")]
    if header == _MM_COORD:
        nr, nc, nnz = (int(tok) for tok in rows[0].split())
        A = np.zeros((nr, nc))
        if len(rows) - 1 != nnz:
            raise ValueError(f"expected {nnz} coordinate entries, found {len(rows) - 1}")
        for ln in rows[1:]:
            si, sj, sv = ln.split()
            A[int(si) - 1, int(sj) - 1] = float(sv)
        return A
    if header == _MM_ARRAY:
        nr, nc = (int(tok) for tok in rows[0].split())
        vals = np.array([float(v) for v in rows[1:]])
        if vals.size != nr * nc:
            raise ValueError(f"expected {nr * nc} array entries, found {vals.size}")
        return vals.reshape((nc, nr)).T
    raise ValueError(f"unsupported MatrixMarket header: {header!r}")
