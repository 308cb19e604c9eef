"""
Complex dense linear algebra primitives.

Everything here works on plain ``numpy`` arrays: vectors are 1-D complex arrays and
matrices are 2-D complex arrays. Functions are pure and never modify their inputs.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateBasisError, DomainError

ORTHO_TOL = 1e-10
PIVOT_TOL = 1e-10

# fixed perturbation of e_1 used as the power-iteration start vector
_START_SEED = 20210425


def as_cvec(x):
    x = np.asarray(x, dtype=complex)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("vector has non-finite entries")
    return x


def as_cmat(a):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    return a


def phase_normalize(x):
    """Rotate a vector (or each column of a matrix) so that its largest-magnitude entry
    is real and positive.

    The first entry whose magnitude is within a relative 1e-9 of the maximum is used,
    so equal-magnitude vectors such as DFT beams are referenced to their first entry.
    """
    x = np.asarray(x, dtype=complex)
    if x.ndim == 2:
        return np.column_stack([phase_normalize(col) for col in x.T]) if x.shape[1] else x.copy()
    mag = np.abs(x)
    peak = mag.max(initial=0.0)
    if peak == 0.0:
        return x.copy()
    idx = int(np.flatnonzero(mag >= peak * (1.0 - 1e-9))[0])
    return x * (np.conj(x[idx]) / mag[idx])


def chordal_distance(x, y):
    """Chordal distance between the complex lines spanned by ``x`` and ``y``.

    ``sqrt(1 - |x^H y|^2 / (|x|^2 |y|^2))``, in [0, 1], evaluated as the norm of the
    component of ``y/|y|`` orthogonal to ``x`` so that small distances keep full
    relative precision.
    """
    x = as_cvec(x)
    y = as_cvec(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    nx = np.vdot(x, x).real
    ny = np.vdot(y, y).real
    if nx <= 0.0 or ny <= 0.0:
        raise DomainError("chordal distance undefined for a zero vector")
    xn = x / np.sqrt(nx)
    yn = y / np.sqrt(ny)
    resid = yn - xn * np.vdot(xn, yn)
    return float(min(1.0, np.linalg.norm(resid)))


def chordal_distance_sq_rows(x, ys):
    """Squared chordal distances between ``x`` and every row of ``ys`` (vectorised)."""
    x = np.asarray(x, dtype=complex)
    ys = np.asarray(ys, dtype=complex)
    nx = np.vdot(x, x).real
    ny = np.einsum("ij,ij->i", ys.conj(), ys).real
    if nx <= 0.0 or np.any(ny <= 0.0):
        raise DomainError("chordal distance undefined for a zero vector")
    corr = np.abs(ys.conj() @ x) ** 2 / (nx * ny)
    return np.clip(1.0 - corr, 0.0, 1.0)


def weighted_chordal(c, c_hat, sigma_hat):
    """Squared chordal distance ``d^2(S c, S c_hat)`` with ``S = diag(sigma_hat)``.

    This is the subband metric: quantizing ``b = S c`` with the deformed word
    ``S c_hat / |S c_hat|`` has exactly this distortion.
    """
    c = as_cvec(c)
    c_hat = as_cvec(c_hat)
    w = np.asarray(sigma_hat, dtype=float)
    if not (c.shape == c_hat.shape == w.shape):
        raise ValueError("length mismatch between vectors and weights")
    if np.any(w < 0):
        raise DomainError("weights must be non-negative")
    return chordal_distance(w * c, w * c_hat) ** 2


def orthonormalize(v):
    """Gram-Schmidt orthonormalization of the columns of ``v``, in column order.

    Classical Gram-Schmidt with one re-orthogonalization pass. The result equals the
    Q factor of the QR decomposition with positive diagonal in R, so the first column
    is ``v[:, 0] / |v[:, 0]|``.

    Raises
    ------
    DegenerateBasisError
        If a column's residual after projection falls below ``PIVOT_TOL`` relative to
        its original norm.
    """
    v = as_cmat(v)
    n, k = v.shape
    if k > n:
        raise DegenerateBasisError(f"{k} columns cannot be independent in dimension {n}", column=n)
    w = np.zeros((n, k), dtype=complex)
    for j in range(k):
        col = v[:, j].copy()
        ref = np.linalg.norm(col)
        if ref == 0.0:
            raise DegenerateBasisError(f"column {j} is zero", column=j)
        if j:
            basis = w[:, :j]
            for _ in range(2):
                col -= basis @ (basis.conj().T @ col)
        nrm = np.linalg.norm(col)
        if nrm < PIVOT_TOL * ref:
            raise DegenerateBasisError(
                f"column {j} is linearly dependent on columns 0..{j - 1} "
                f"(pivot {nrm / ref:.3e})", column=j)
        w[:, j] = col / nrm
    return w


def projector(v):
    """Orthogonal projector ``V (V^H V)^{-1} V^H`` onto the column span of ``v``."""
    v = as_cmat(v)
    orthonormalize(v)  # rank check only
    gram = v.conj().T @ v
    p = v @ np.linalg.solve(gram, v.conj().T)
    return 0.5 * (p + p.conj().T)


def is_orthonormal(w, tol=ORTHO_TOL):
    w = np.asarray(w, dtype=complex)
    return bool(np.max(np.abs(w.conj().T @ w - np.eye(w.shape[1])), initial=0.0) <= tol)


def check_hermitian(r, tol=1e-12):
    r = as_cmat(r)
    if r.shape[0] != r.shape[1]:
        raise ValueError(f"matrix must be square, got {r.shape}")
    scale = max(1.0, float(np.max(np.abs(r), initial=0.0)))
    if np.max(np.abs(r - r.conj().T), initial=0.0) > tol * scale:
        raise DomainError("matrix is not Hermitian")
    return r


@dataclass(frozen=True)
class EigenBasis:
    """Leading eigenpairs of a Hermitian PSD matrix.

    ``vectors`` has the eigenvectors as (phase-normalized) columns; ``values`` are
    non-negative and non-increasing.
    """

    vectors: np.ndarray
    values: np.ndarray

    @property
    def sigma(self):
        return np.sqrt(self.values)


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Full eigendecomposition of a complex Hermitian matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` in the order the rotations leave them (unsorted).
    """
    a = check_hermitian(a, tol=1e-9).copy()
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        return np.real(np.diag(a)).copy(), v
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            return np.real(np.diag(a)).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * mag)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ph = apq / mag
                # G = diag(1, conj(ph)) @ [[c, s], [-s, c]]
                g = np.array([[c, s], [-s * np.conj(ph), c * np.conj(ph)]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ g
                a[idx, :] = g.conj().T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                v[:, idx] = v[:, idx] @ g
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")


def eigh_topk(r, k, method="lapack"):
    """The ``k`` largest eigenpairs of a Hermitian PSD matrix.

    Parameters
    ----------
    r : (n, n) array
    k : int
        Number of eigenpairs, ``1 <= k <= n``.
    method : {"lapack", "jacobi"}
        ``"lapack"`` uses ``numpy.linalg.eigh``; ``"jacobi"`` the cyclic Jacobi solver
        in this module.

    Returns
    -------
    EigenBasis
        Values sorted descending (stable on exact ties), negative round-off clipped to
        zero, eigenvectors phase-normalized.
    """
    r = check_hermitian(r, tol=1e-9)
    n = r.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    herm = 0.5 * (r + r.conj().T)
    if method == "lapack":
        vals, vecs = np.linalg.eigh(herm)
    elif method == "jacobi":
        vals, vecs = jacobi_eigh(herm)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-vals, kind="stable")[:k]
    vals = np.clip(vals[order], 0.0, None)
    return EigenBasis(vectors=phase_normalize(vecs[:, order]), values=vals)


def principal_eigenvector(r, tol=1e-12, max_iter=20000):
    """Dominant eigenpair of a Hermitian PSD matrix by power iteration.

    The start vector is ``e_1`` plus a fixed pseudo-random perturbation, so results are
    reproducible. Iteration stops once ``|R e - lam e| <= tol * trace(R)``.

    Raises
    ------
    ConvergenceError
        When ``max_iter`` is exceeded, which signals nearly degenerate top eigenvalues;
        callers should fall back to :func:`eigh_topk`.
    """
    r = check_hermitian(r, tol=1e-9)
    n = r.shape[0]
    scale = np.trace(r).real
    if scale <= 0.0:
        raise DomainError("power iteration needs a nonzero PSD matrix")
    rng = np.random.default_rng(_START_SEED)
    x = np.zeros(n, dtype=complex)
    x[0] = 1.0
    x += 1e-3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    x /= np.linalg.norm(x)
    for _ in range(max_iter):
        y = r @ x
        lam = np.vdot(x, y).real
        if np.linalg.norm(y - lam * x) <= tol * scale:
            return phase_normalize(x), float(lam)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            raise DomainError("start vector lies in the null space")
        x = y / ny
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def top_eigenvector(r, tol=1e-12):
    """Power iteration with a dense-solver fallback for near-degenerate spectra."""
    try:
        return principal_eigenvector(r, tol=tol, max_iter=5000)
    except ConvergenceError:
        eb = eigh_topk(r, 1)
        return eb.vectors[:, 0], float(eb.values[0])
