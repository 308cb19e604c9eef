"""
Wideband feedback: a K-column basis for the dominant subspace of the normalized
sample covariance, plus quantized wideband amplitudes.

Three basis quantizers are provided:

* IND quantizes each eigenvector on its own; the codeword matrix ``V`` is used as is.
* OWP quantizes each eigenvector on its own and both ends orthonormalize ``V``.
* SWP picks codewords sequentially, each one quantizing the principal eigenvector of
  the covariance restricted to the orthogonal complement of the previous columns.

Only codeword indices and amplitude codes are fed back. The base station rebuilds the
basis with :func:`basis_from_indices`, which the user side also calls, so both ends hold
bit-identical matrices.

Payload layout (MSB first)::

    v_indices     K_fb fields of ceil(log2 |codebook|) bits, canonical column order
    strongest     ceil(log2 K) bits
    amplitudes    K-1 fields of 3 bits (level code), canonical order without strongest

Canonical column order is the order of the lifted codeword columns: block order for
FULL, plus-block then minus-block for BPLUS_BMINUS, and ``[w_j;0], [0;w_j]`` pairs for
B00B. Structured modes then sort the columns by quantized amplitude (descending,
stable), which the base station reproduces from the amplitude codes.
"""
import enum
import logging
from dataclasses import dataclass

import numpy as np

from .bits import BitReader, BitWriter, index_bits
from .channel import PolarizationMode, polarization_blocks
from .codebook import quantize_line, ranked_indices
from .errors import DegenerateBasisError, DomainError, InvariantViolation
from .linalg import (check_hermitian, eigh_topk, is_orthonormal, orthonormalize, projector,
                     top_eigenvector)

logger = logging.getLogger(__name__)

AMPLITUDE_LEVELS = np.array([2.0 ** (-m / 2.0) for m in range(7)] + [0.0])
AMPLITUDE_CODE_BITS = 3
SWP_MAX_CANDIDATES = 8
SWP_DEGENERATE_TOL = 1e-8


class WidebandScheme(enum.Enum):
    IDEAL = "ideal"
    IND = "ind"
    OWP = "owp"
    SWP = "swp"


@dataclass(frozen=True)
class AmplitudeQuantization:
    """Quantized wideband amplitudes relative to the strongest beam.

    ``values[j] = AMPLITUDE_LEVELS[codes[j]]``; the strongest beam has code 0 (level 1).
    """

    values: np.ndarray
    codes: tuple
    strongest: int

    @property
    def bits(self):
        return amplitude_bits(len(self.codes))


def amplitude_bits(k):
    return index_bits(k) + AMPLITUDE_CODE_BITS * (k - 1)


def quantize_amplitudes(sigma):
    """Quantize amplitudes relative to the strongest one.

    The strongest entry (lowest index on ties) becomes the reference at level 1; every
    other ratio ``sigma_j / sigma_max`` goes to the nearest level, ties to the larger.
    """
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("amplitudes must be a non-empty vector")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("amplitudes must be finite and non-negative")
    strongest = int(np.argmax(s))
    if s[strongest] <= 0.0:
        raise DomainError("all amplitudes are zero")
    ratio = s / s[strongest]
    # levels are descending, so argmin's first-hit rule sends ties to the larger level
    codes = np.argmin(np.abs(ratio[:, None] - AMPLITUDE_LEVELS[None, :]), axis=1)
    codes[strongest] = 0
    return AmplitudeQuantization(values=AMPLITUDE_LEVELS[codes], codes=tuple(int(c) for c in codes),
                                 strongest=strongest)


def amplitudes_from_codes(codes):
    codes = np.asarray(codes, dtype=int)
    return AMPLITUDE_LEVELS[codes]


@dataclass(frozen=True, eq=False)
class WidebandFeedback:
    """Wideband feedback record.

    Attributes
    ----------
    v_indices : tuple of int
        Codeword indices (the fed-back basis payload), canonical order.
    V : ndarray (N_t, K)
        Lifted codeword matrix, canonical column order.
    W : ndarray (N_t, K)
        Basis used for the subband stage, final column order. Orthonormal for OWP,
        SWP and IDEAL; equal to the reordered ``V`` for IND.
    sigma_hat : ndarray (K,)
        Quantized relative amplitudes in final column order (exact amplitudes for
        IDEAL).
    amplitudes : AmplitudeQuantization or None
        Amplitude codes in canonical order (None for IDEAL).
    order : tuple of int
        Final column ``i`` is canonical column ``order[i]``.
    """

    scheme: WidebandScheme
    pol_mode: PolarizationMode
    v_indices: tuple
    V: np.ndarray
    W: np.ndarray
    sigma_hat: np.ndarray
    amplitudes: object
    order: tuple
    index_width: int

    @property
    def k(self):
        return self.W.shape[1]

    @property
    def bit_count(self):
        if self.scheme is WidebandScheme.IDEAL:
            return 0
        return len(self.v_indices) * self.index_width + amplitude_bits(self.k)

    def payload(self):
        if self.scheme is WidebandScheme.IDEAL:
            return ""
        bw = BitWriter()
        for i in self.v_indices:
            bw.write(i, self.index_width)
        amp = self.amplitudes
        bw.write(amp.strongest, index_bits(self.k))
        for j, code in enumerate(amp.codes):
            if j != amp.strongest:
                bw.write(code, AMPLITUDE_CODE_BITS)
        return bw.getvalue()


# ----------------------------------------------------------------------- primitives

def quantize_ind(u, cb):
    """Columnwise nearest-codeword quantization; returns ``(V, indices)``."""
    u = np.asarray(u, dtype=complex)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != cb.dim:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs codebook {cb.dim}")
    idx = tuple(int(quantize_line(u[:, j], cb).index) for j in range(u.shape[1]))
    return cb.words[list(idx)].T.copy(), idx


def projection_distortion(w, r):
    """``1 - tr(P_W R)`` for a trace-one covariance ``R``."""
    r = check_hermitian(r, tol=1e-9)
    tr = np.trace(r).real
    if abs(tr - 1.0) > 1e-9:
        raise DomainError(f"covariance must have unit trace (got {tr:.12g})")
    p = projector(w)
    return float(np.clip(1.0 - np.trace(p @ r).real, 0.0, 1.0))


def wideband_amplitudes(w, r, require_orthonormal=True):
    """``sigma_j = sqrt(w_j^H R w_j)`` for each column."""
    w = np.asarray(w, dtype=complex)
    if require_orthonormal and not is_orthonormal(w):
        raise DomainError("basis must be orthonormal")
    vals = np.einsum("ij,ik,kj->j", w.conj(), r, w).real
    return np.sqrt(np.clip(vals, 0.0, None))


def _check_projector(p, rank):
    if np.max(np.abs(p - p.conj().T)) > 1e-8 or np.max(np.abs(p @ p - p)) > 1e-8 \
            or abs(np.trace(p).real - rank) > 1e-8:
        raise InvariantViolation("swp_projector", f"complement projector lost rank {rank}")


def basis_from_indices(indices, scheme, cb):
    """Rebuild one block basis from codeword indices (shared by user and base station)."""
    scheme = WidebandScheme(scheme)
    v = cb.words[list(indices)].T.copy()
    if scheme is WidebandScheme.IND:
        return v
    if scheme is WidebandScheme.OWP:
        return orthonormalize(v)
    if scheme is WidebandScheme.SWP:
        n = v.shape[0]
        perp = np.eye(n, dtype=complex)
        w = np.zeros_like(v)
        for j in range(v.shape[1]):
            pv = perp @ v[:, j]
            nrm = np.linalg.norm(pv)
            if nrm < SWP_DEGENERATE_TOL:
                raise DegenerateBasisError(f"codeword {indices[j]} vanishes after projection",
                                           column=j)
            w[:, j] = pv / nrm
            perp = perp - np.outer(w[:, j], w[:, j].conj())
            perp = 0.5 * (perp + perp.conj().T)
            _check_projector(perp, n - j - 1)
        return w
    raise ValueError(f"scheme {scheme} has no codeword basis")


def owp(u, cb, on_degenerate="error"):
    """Orthonormalized independent quantization of the columns of ``u``.

    Returns ``(indices, W)``. With ``on_degenerate="next"`` a codeword that is linearly
    dependent on the earlier ones is replaced by the next-nearest codeword.
    """
    v, idx = quantize_ind(u, cb)
    try:
        return idx, orthonormalize(v)
    except DegenerateBasisError as err:
        if on_degenerate != "next":
            raise DegenerateBasisError(
                f"{err}; the codebook is too coarse for distinct columns, use a larger one",
                column=err.column) from err
    idx = list(idx)
    for j in range(len(idx)):
        for cand in ranked_indices(u[:, j], cb, SWP_MAX_CANDIDATES):
            trial = idx[:j] + [int(cand)]
            try:
                orthonormalize(cb.words[trial].T)
            except DegenerateBasisError:
                continue
            idx[j] = int(cand)
            break
        else:
            raise DegenerateBasisError(f"no independent codeword for column {j}", column=j)
    idx = tuple(idx)
    return idx, orthonormalize(cb.words[list(idx)].T)


def swp(r, k, cb):
    """Sequential quantization of principal eigenvectors of projected covariances.

    Step ``j`` quantizes the principal eigenvector of ``P R P`` with ``P`` the projector
    onto the complement of the previous columns, then appends the normalized
    projection of the chosen codeword. A codeword annihilated by ``P`` is replaced by
    the next-nearest one (up to 8 candidates). Returns ``(indices, W)``.
    """
    r = check_hermitian(r, tol=1e-9)
    n = r.shape[0]
    if not 1 <= k <= n or k > cb.size:
        raise ValueError(f"need 1 <= K <= min(N, |codebook|), got K={k}")
    if cb.dim != n:
        raise ValueError("codebook dimension does not match covariance")
    scale = np.trace(r).real
    perp = np.eye(n, dtype=complex)
    idx = []
    w = np.zeros((n, k), dtype=complex)
    for j in range(k):
        rj = perp @ r @ perp
        rj = 0.5 * (rj + rj.conj().T)
        if np.trace(rj).real <= 1e-12 * scale:
            # covariance exhausted: any direction in the complement will do
            e = perp[:, int(np.argmax(np.linalg.norm(perp, axis=0)))]
        else:
            e, _ = top_eigenvector(rj)
        for cand in ranked_indices(e, cb, SWP_MAX_CANDIDATES):
            pv = perp @ cb.words[cand]
            if np.linalg.norm(pv) >= SWP_DEGENERATE_TOL:
                break
            logger.debug("SWP step %d: codeword %d annihilated, trying next", j, cand)
        else:
            raise DegenerateBasisError(f"SWP step {j}: all candidate codewords annihilated",
                                       column=j)
        idx.append(int(cand))
        w[:, j] = pv / np.linalg.norm(pv)
        perp = perp - np.outer(w[:, j], w[:, j].conj())
        perp = 0.5 * (perp + perp.conj().T)
        _check_projector(perp, n - j - 1)
    idx = tuple(idx)
    return idx, basis_from_indices(idx, WidebandScheme.SWP, cb)


# ------------------------------------------------------------------ full pipeline

def lift_blocks(mats, mode, n_t):
    """Embed block bases into the full antenna space in canonical column order."""
    mode = PolarizationMode(mode)
    if mode is PolarizationMode.FULL:
        if mats[0].shape[0] != n_t:
            raise ValueError("FULL basis must have N_t rows")
        return mats[0].copy()
    h = n_t // 2
    if any(m.shape[0] != h for m in mats):
        raise ValueError(f"block bases must have N_t/2 = {h} rows")
    if mode is PolarizationMode.BPLUS_BMINUS:
        bp, bm = mats
        out = np.zeros((n_t, bp.shape[1] + bm.shape[1]), dtype=complex)
        out[:h, :bp.shape[1]] = bp
        out[h:, bp.shape[1]:] = bm
        return out
    (b,) = mats
    out = np.zeros((n_t, 2 * b.shape[1]), dtype=complex)
    out[:h, 0::2] = b
    out[h:, 1::2] = b
    return out


def _block_ks(k, mode):
    mode = PolarizationMode(mode)
    if mode is PolarizationMode.FULL:
        return (k,)
    if k % 2:
        raise ValueError("polarization-structured feedback needs an even K")
    return (k // 2, k // 2) if mode is PolarizationMode.BPLUS_BMINUS else (k // 2,)


def _final_order(sigma_hat, mode):
    if PolarizationMode(mode) is PolarizationMode.FULL:
        return tuple(range(len(sigma_hat)))
    return tuple(int(i) for i in np.argsort(-np.asarray(sigma_hat), kind="stable"))


def wideband_feedback(r, k, cb, scheme, pol_mode=PolarizationMode.FULL,
                      on_degenerate="error", eig_method="lapack"):
    """Compute the wideband feedback of one user from its normalized covariance.

    Parameters
    ----------
    r : (N_t, N_t) array
        Normalized sample covariance (trace one).
    k : int
        Number of basis columns.
    cb : LineCodebook
        Basis codebook of dimension N_t (FULL) or N_t/2 (structured modes).
    scheme : WidebandScheme or str
    pol_mode : PolarizationMode or str
    on_degenerate : {"error", "next"}
        OWP handling of linearly dependent codewords.
    """
    scheme = WidebandScheme(scheme)
    mode = PolarizationMode(pol_mode)
    r = check_hermitian(r, tol=1e-9)
    n_t = r.shape[0]
    if not 1 <= k <= n_t:
        raise ValueError(f"K must be in [1, {n_t}]")

    if scheme is WidebandScheme.IDEAL:
        eb = eigh_topk(r, k, method=eig_method)
        return WidebandFeedback(scheme=scheme, pol_mode=mode, v_indices=(), V=eb.vectors,
                                W=eb.vectors, sigma_hat=eb.sigma, amplitudes=None,
                                order=tuple(range(k)), index_width=0)

    blocks = polarization_blocks(r, mode)
    all_idx, vs, ws = [], [], []
    for block, kb in zip(blocks, _block_ks(k, mode)):
        if scheme is WidebandScheme.SWP:
            idx, w = swp(block, kb, cb)
        else:
            u = eigh_topk(block, kb, method=eig_method).vectors
            if scheme is WidebandScheme.OWP:
                idx, w = owp(u, cb, on_degenerate=on_degenerate)
            else:
                w, idx = quantize_ind(u, cb)
        all_idx.extend(idx)
        vs.append(cb.words[list(idx)].T)
        ws.append(w)
    v_full = lift_blocks(vs, mode, n_t)
    w_full = lift_blocks(ws, mode, n_t)
    orthonormal = scheme is not WidebandScheme.IND
    sigma = wideband_amplitudes(w_full, r, require_orthonormal=orthonormal)
    amp = quantize_amplitudes(sigma)
    order = _final_order(amp.values, mode)
    return WidebandFeedback(scheme=scheme, pol_mode=mode, v_indices=tuple(all_idx), V=v_full,
                            W=w_full[:, list(order)], sigma_hat=amp.values[list(order)],
                            amplitudes=amp, order=order, index_width=cb.bits)


def decode_wideband(payload, scheme, pol_mode, cb, k, n_t):
    """Base-station side: rebuild the wideband feedback from its payload bits."""
    scheme = WidebandScheme(scheme)
    mode = PolarizationMode(pol_mode)
    if scheme is WidebandScheme.IDEAL:
        raise ValueError("ideal wideband feedback has no payload")
    reader = BitReader(payload)
    ks = _block_ks(k, mode)
    idx = tuple(reader.read(cb.bits) for _ in range(sum(ks)))
    strongest = reader.read(index_bits(k))
    codes = [0] * k
    for j in range(k):
        if j != strongest:
            codes[j] = reader.read(AMPLITUDE_CODE_BITS)
    if not reader.done():
        raise ValueError("trailing bits in wideband payload")
    vs, ws, start = [], [], 0
    for kb in ks:
        blk = idx[start:start + kb]
        start += kb
        vs.append(cb.words[list(blk)].T)
        ws.append(basis_from_indices(blk, scheme, cb))
    v_full = lift_blocks(vs, mode, n_t)
    w_full = lift_blocks(ws, mode, n_t)
    values = amplitudes_from_codes(codes)
    amp = AmplitudeQuantization(values=values, codes=tuple(codes), strongest=strongest)
    order = _final_order(values, mode)
    return WidebandFeedback(scheme=scheme, pol_mode=mode, v_indices=idx, V=v_full,
                            W=w_full[:, list(order)], sigma_hat=values[list(order)],
                            amplitudes=amp, order=order, index_width=cb.bits)
