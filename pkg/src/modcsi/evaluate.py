"""
Distortion metrics, checks of the distortion decomposition and its bounds, and a
multiuser zero-forcing spectral-efficiency simulation.

Conventions: inner products are Hermitian. A user with channel ``h`` receives
``h^H x``; the base station stacks quantized directions as rows ``h_hat_u^H`` of
``H_hat`` and zero-forces with respect to ``H_hat``.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .channel import ChannelSet, normalized_sample_covariance, user_rng
from .codebook import quantize_line, quantize_rows
from .errors import DegenerateBasisError, DomainError, InvariantViolation
from .linalg import chordal_distance, eigh_topk, is_orthonormal, orthonormalize
from .subband import (SubbandScheme, decode_subband, effective_channels, quantize_subband,
                      reconstruct, weighted_reconstruction)
from .wideband import (WidebandScheme, decode_wideband, owp, projection_distortion, swp,
                       wideband_feedback)

logger = logging.getLogger(__name__)

TOL_IDENTITY = 1e-9
TOL_NULLING = 1e-8


# ------------------------------------------------------------------ pipelines

@dataclass(frozen=True)
class Pipeline:
    """One wideband + subband quantization chain.

    ``subband_params`` is a BitAllocationParams (EXT2, INT5), a ProductCodebook (PCB)
    or None (EXACT). ``pinv`` selects least-squares effective channels for IND.
    """

    wideband: WidebandScheme
    subband: SubbandScheme
    k: int
    pol_mode: object
    basis_codebook: object = None
    subband_params: object = None
    pinv: bool = True
    on_degenerate: str = "next"
    rule: str = "exact"
    label: str = ""

    @property
    def orthonormal(self):
        return self.wideband is not WidebandScheme.IND


@dataclass(frozen=True, eq=False)
class UserResult:
    """Per-user outcome of a pipeline; arrays are indexed by subband."""

    user_id: int
    d_p: float
    d2_h: np.ndarray
    d2_b: np.ndarray
    in_span: np.ndarray
    d2_par: np.ndarray
    h_hat: np.ndarray
    wideband_bits: int
    subband_bits: int


def _span_distortion(v, r):
    """``1 - tr(P R)`` with ``P`` the projector onto the numerical column span of ``v``."""
    u, s, _ = np.linalg.svd(v, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    q = u[:, :rank]
    return float(np.clip(1.0 - np.trace(q.conj().T @ r @ q).real, 0.0, 1.0))


def _d2(x, y):
    nx = np.vdot(x, x).real
    ny = np.vdot(y, y).real
    if nx == 0.0 or ny == 0.0:
        return 1.0
    return float(np.clip(1.0 - abs(np.vdot(x, y)) ** 2 / (nx * ny), 0.0, 1.0))


def process_user(ch, pipe):
    """Run the full feedback chain for one user and emulate base-station decoding.

    The base station state (basis, amplitudes, subband records) is rebuilt from the
    payload bits alone and must match the user side exactly.
    """
    h = ch.subbands
    r = normalized_sample_covariance(ch)
    wfb = wideband_feedback(r, pipe.k, pipe.basis_codebook, pipe.wideband, pipe.pol_mode,
                            on_degenerate=pipe.on_degenerate)
    wpay = wfb.payload()
    if len(wpay) != wfb.bit_count:
        raise InvariantViolation("bit_count", f"wideband payload {len(wpay)} != {wfb.bit_count}")
    if pipe.wideband is WidebandScheme.IDEAL:
        w_bs, s_bs = wfb.W, wfb.sigma_hat
    else:
        bs = decode_wideband(wpay, pipe.wideband, pipe.pol_mode, pipe.basis_codebook,
                             pipe.k, h.shape[1])
        if not (np.array_equal(bs.W, wfb.W) and np.array_equal(bs.sigma_hat, wfb.sigma_hat)):
            raise InvariantViolation("bs_reconstruction", "decoded wideband basis differs")
        w_bs, s_bs = bs.W, bs.sigma_hat
    if pipe.orthonormal:
        if not is_orthonormal(wfb.W):
            raise InvariantViolation("orthonormality", f"{pipe.wideband.value} basis")
        d_p = projection_distortion(wfb.W, r)
    else:
        d_p = _span_distortion(wfb.W, r)

    n_s = h.shape[0]
    d2_h = np.empty(n_s)
    d2_b = np.empty(n_s)
    in_span = np.empty(n_s)
    d2_par = np.empty(n_s)
    h_hat = np.empty_like(h)
    sb_bits = 0
    for s in range(n_s):
        hs = h[s]
        b, c = effective_channels(wfb.W, wfb.sigma_hat, hs,
                                  pinv=pipe.pinv and not pipe.orthonormal)
        fb = quantize_subband(pipe.subband, b, c, wfb.sigma_hat, pipe.subband_params,
                              rule=pipe.rule)
        sb_bits = fb.bit_count
        if pipe.subband is SubbandScheme.EXACT:
            fb_bs = fb
        else:
            pay = fb.payload()
            if len(pay) != fb.bit_count:
                raise InvariantViolation("bit_count", f"subband payload {len(pay)} != {fb.bit_count}")
            fb_bs = decode_subband(pay, pipe.subband, s_bs, pipe.subband_params)
            if not np.array_equal(fb_bs.c_hat, fb.c_hat):
                raise InvariantViolation("bs_reconstruction", "decoded subband record differs")
        h_hat[s] = reconstruct(w_bs, s_bs, fb_bs)
        d2_h[s] = _d2(hs, h_hat[s])
        d2_b[s] = _d2(b, weighted_reconstruction(s_bs, fb_bs))
        par = wfb.W @ np.linalg.lstsq(wfb.W, hs, rcond=None)[0] if not pipe.orthonormal \
            else wfb.W @ (wfb.W.conj().T @ hs)
        in_span[s] = np.vdot(par, par).real / np.vdot(hs, hs).real
        d2_par[s] = _d2(par, h_hat[s]) if in_span[s] > 0 else 0.0
    return UserResult(user_id=ch.user_id, d_p=d_p, d2_h=d2_h, d2_b=d2_b, in_span=in_span,
                      d2_par=d2_par, h_hat=h_hat, wideband_bits=wfb.bit_count, subband_bits=sb_bits)


def run_pipeline(channels, pipe, threads=1):
    """Process every user; results keep the input order for any thread count."""
    if not channels:
        raise ValueError("empty channel set")
    if threads <= 1:
        return [process_user(ch, pipe) for ch in channels]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda ch: process_user(ch, pipe), channels))


# ------------------------------------------------------------------ distortions

@dataclass(frozen=True)
class DistortionReport:
    """Pooled distortions of a pipeline run.

    ``lower_gap = D_H - d_p`` and ``upper_gap = D_B + d_p - D_H``; both are
    non-negative for orthonormal wideband bases.
    """

    D_H: float
    D_B: float
    d_p: float
    lower_gap: float
    upper_gap: float
    decomposition_residual: float
    n_users: int
    per_user_d_p: tuple = field(default=(), repr=False)


def distortion_report(results):
    if not results:
        raise ValueError("no results")
    d_h = float(np.mean([r.d2_h.mean() for r in results]))
    d_b = float(np.mean([r.d2_b.mean() for r in results]))
    d_p = float(np.mean([r.d_p for r in results]))
    in_span_term = float(np.mean([(r.in_span * r.d2_par).mean() for r in results]))
    return DistortionReport(D_H=d_h, D_B=d_b, d_p=d_p, lower_gap=d_h - d_p,
                            upper_gap=d_b + d_p - d_h,
                            decomposition_residual=abs(d_h - (in_span_term + d_p)),
                            n_users=len(results),
                            per_user_d_p=tuple(r.d_p for r in results))


def overall_distortion(channels, pipe, threads=1):
    """Mean of ``d^2(h_s, h_hat_s)`` over users and subbands."""
    return distortion_report(run_pipeline(channels, pipe, threads)).D_H


def subband_distortion(channels, pipe, threads=1):
    """Mean of ``d^2(b_s, b_hat_s)``; defined only for orthonormal wideband bases."""
    if not pipe.orthonormal:
        raise DomainError("subband distortion needs an orthonormal wideband basis")
    return distortion_report(run_pipeline(channels, pipe, threads)).D_B


def bounds_check(report, orthonormal=True):
    """Return ``(lower_gap, upper_gap)``; for orthonormal bases both must be >= -1e-9."""
    if orthonormal and (report.lower_gap < -TOL_IDENTITY or report.upper_gap < -TOL_IDENTITY):
        raise InvariantViolation("distortion_bounds",
                                 f"gaps {report.lower_gap:.3e}, {report.upper_gap:.3e}")
    return report.lower_gap, report.upper_gap


def _stack_subbands(channels):
    if isinstance(channels, ChannelSet):
        return channels.subbands
    if isinstance(channels, (list, tuple)) and channels and isinstance(channels[0], ChannelSet):
        return np.concatenate([c.subbands for c in channels])
    h = np.asarray(channels, dtype=complex)
    return h[None, :] if h.ndim == 1 else h


@dataclass(frozen=True)
class DecompositionResult:
    D_H: float
    in_span_term: float
    d_p: float

    @property
    def residual(self):
        return abs(self.D_H - (self.in_span_term + self.d_p))


def decomposition_check(channels, w, codebook):
    """Both sides of the distortion decomposition on one sample set.

    Every sample is quantized with ``codebook`` (whose words must lie in ``span(W)``).
    ``D_H`` is the mean squared chordal distortion; the right side is the mean of
    ``|h~_par|^2 d^2(h_par, h_hat)`` plus ``d_p`` of the pooled normalized covariance.
    """
    w = np.asarray(w, dtype=complex)
    if not is_orthonormal(w):
        raise DomainError("W must be orthonormal")
    outside = codebook.words.T - w @ (w.conj().T @ codebook.words.T)
    if np.max(np.linalg.norm(outside, axis=0)) > TOL_IDENTITY:
        raise DomainError("codewords must lie in span(W)")
    h = _stack_subbands(channels)
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0):
        raise DomainError("zero channel sample")
    hn = h / norms[:, None]
    idx, dist = quantize_rows(hn, codebook)
    d_h = float(np.mean(dist ** 2))
    par = (hn @ w.conj()) @ w.T
    par_energy = np.einsum("ij,ij->i", par.conj(), par).real
    words = codebook.words[idx]
    term = np.empty(len(hn))
    for i in range(len(hn)):
        term[i] = par_energy[i] * (_d2(par[i], words[i]) if par_energy[i] > 0 else 0.0)
    r = hn.T @ hn.conj() / len(hn)
    r = 0.5 * (r + r.conj().T)
    return DecompositionResult(D_H=d_h, in_span_term=float(np.mean(term)),
                               d_p=projection_distortion(w, r))


# ------------------------------------------------------------------ zero forcing

def zf_precoder(h_hat):
    """Zero-forcing directions for the rows ``h_hat_u^H`` of ``h_hat`` (U x N_t).

    Returns ``Z`` (N_t x U) with unit-norm columns and ``h_hat Z`` diagonal.

    Raises
    ------
    DegenerateBasisError
        If ``h_hat`` is numerically rank deficient; ``column`` names the first user
        whose direction depends on the previous ones.
    """
    h_hat = np.asarray(h_hat, dtype=complex)
    u, n = h_hat.shape
    if u > n:
        raise DegenerateBasisError(f"{u} users exceed {n} antennas", column=n)
    orthonormalize(h_hat.conj().T)
    z = np.linalg.solve((h_hat @ h_hat.conj().T).T, h_hat.conj()).T
    z = z / np.linalg.norm(z, axis=0)
    cross = h_hat @ z
    off = cross - np.diag(np.diag(cross))
    if np.max(np.abs(off), initial=0.0) > TOL_NULLING:
        raise InvariantViolation("zf_nulling", f"residual {np.max(np.abs(off)):.3e}")
    return z


def sinr(h_true, z, power_per_user, noise):
    """Per-user SINR with true channels ``h_true`` (rows are ``h_u^H``)."""
    g = np.abs(np.asarray(h_true) @ z) ** 2 * power_per_user
    sig = np.diag(g)
    interf = g.sum(axis=1) - sig
    return sig / (noise + interf)


@dataclass(frozen=True)
class ZFConfig:
    users: int = 4
    snr_grid_db: tuple = (0.0, 10.0, 20.0)
    power: float = 1.0
    drops: int = 100

    def __post_init__(self):
        if self.users < 1 or self.drops < 1 or self.power <= 0:
            raise ValueError("users, drops and power must be positive")


def _unit_mean_power(h):
    return h / np.sqrt(np.mean(np.sum(np.abs(h) ** 2, axis=1)))


def _drop_users(n_users, zf, seed, drop):
    rng = user_rng(seed, 2 ** 31 + drop)
    return np.sort(rng.choice(n_users, size=zf.users, replace=False))


def spectral_efficiency(channels, h_hats, zf, seed, label=""):
    """Mean per-user rate ``log2(1 + SINR)`` for each SNR of the grid.

    ``h_hats[i]`` holds the quantized directions (S x N_t) of ``channels[i]``; pass
    ``None`` for perfect CSI. Each drop serves ``zf.users`` users drawn from the pool
    with a per-drop stream; users whose direction is linearly dependent on already
    admitted users are dropped from that subband (rate 0) and logged.
    """
    n_users = len(channels)
    if zf.users > n_users or zf.users > channels[0].n_t:
        raise ValueError("more users per drop than available users or antennas")
    snr = 10.0 ** (np.asarray(zf.snr_grid_db, dtype=float) / 10.0)
    p_user = zf.power / zf.users
    noise = p_user / snr
    true = [_unit_mean_power(c.subbands) for c in channels]
    est = [None if h_hats is None else np.asarray(h_hats[i]) for i in range(n_users)]
    total = np.zeros(len(snr))
    count = 0
    dropped = 0
    for d in range(zf.drops):
        sel = _drop_users(n_users, zf, seed, d)
        for s in range(channels[0].n_subbands):
            rows_true = np.array([true[u][s].conj() for u in sel])
            if est[0] is None:
                rows_hat = np.array([true[u][s].conj() / np.linalg.norm(true[u][s]) for u in sel])
            else:
                rows_hat = np.array([est[u][s].conj() for u in sel])
            keep = []
            for i in range(len(sel)):
                try:
                    orthonormalize(rows_hat[keep + [i]].conj().T)
                    keep.append(i)
                except DegenerateBasisError:
                    dropped += 1
            z = zf_precoder(rows_hat[keep])
            for j, nz in enumerate(noise):
                g = sinr(rows_true[keep], z, p_user, nz)
                total[j] += np.sum(np.log2(1.0 + g))
            count += len(sel)
    if dropped:
        logger.info("%s: %d user-subband slots dropped for rank deficiency", label, dropped)
    se = total / count
    if np.any(np.diff(se) < -1e-12):
        raise InvariantViolation("se_monotone", f"{label}: {se}")
    return se


# ------------------------------------------------------------------ statistical checks

def random_covariance(n, rank, rng, noise=0.05, decay=0.5):
    """Low-rank-plus-noise trace-one covariance with geometrically decaying powers."""
    g = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    q, _ = np.linalg.qr(g)
    p = decay ** np.arange(rank)
    r = (q * p) @ q.conj().T + noise * np.eye(n) / n
    r = 0.5 * (r + r.conj().T)
    return r / np.trace(r).real


@dataclass(frozen=True)
class OrderingResult:
    owp: np.ndarray
    swp: np.ndarray
    wins: int
    losses: int
    p_value: float

    @property
    def mean_owp(self):
        return float(np.mean(self.owp))

    @property
    def mean_swp(self):
        return float(np.mean(self.swp))


def swp_vs_owp(codebook, k, n_cov, seed, rank=None, noise=0.05):
    """Projection distortions of SWP and OWP on random covariances plus a one-sided
    paired sign test of ``d_p(SWP) < d_p(OWP)`` (ties discarded)."""
    n = codebook.dim
    rng = np.random.default_rng(seed)
    rank = rank or k + 1
    res_o, res_s = [], []
    for _ in range(n_cov):
        r = random_covariance(n, rank, rng, noise=noise)
        u = eigh_topk(r, k).vectors
        _, wo = owp(u, codebook, on_degenerate="next")
        _, ws = swp(r, k, codebook)
        res_o.append(projection_distortion(wo, r))
        res_s.append(projection_distortion(ws, r))
    res_o, res_s = np.array(res_o), np.array(res_s)
    diff = res_o - res_s
    wins = int(np.sum(diff > 1e-12))
    losses = int(np.sum(diff < -1e-12))
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    return OrderingResult(owp=res_o, swp=res_s, wins=wins, losses=losses, p_value=float(p))


def covering_radius_estimate(codebook, n_samples, seed):
    """Largest quantization error over random unit vectors (a lower bound on the
    covering radius), refined by a few steps of local ascent."""
    rng = np.random.default_rng(seed)
    n = codebook.dim
    u = rng.standard_normal((n_samples, n)) + 1j * rng.standard_normal((n_samples, n))
    u /= np.linalg.norm(u, axis=1)[:, None]
    _, dist = quantize_rows(u, codebook)
    worst = u[np.argsort(-dist)[:20]]
    best = float(dist.max())
    for x in worst:
        step = 0.1
        cur = quantize_line(x, codebook).distortion
        for _ in range(300):
            y = x + step * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
            y /= np.linalg.norm(y)
            dy = quantize_line(y, codebook).distortion
            if dy > cur:
                x, cur = y, dy
            else:
                step *= 0.97
        best = max(best, cur)
    return best


def radial_alignment(codebook, m, n_samples, seed):
    """Mean direction of projected quantization outcomes versus the projected source.

    A fixed unit vector ``u`` is quantized after independent Haar rotations ``Q_i``
    (``v_i = Q_i^H q(Q_i u)``), which makes the error distribution rotationally
    invariant about ``u``. Each ``v_i`` is projected onto a fixed ``m``-dimensional
    subspace and normalized; the principal eigenvector of the mean outer product is
    compared with the normalized projection of ``u``. Returns their chordal distance.
    """
    rng = np.random.default_rng(seed)
    n = codebook.dim
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    u /= np.linalg.norm(u)
    basis, _ = np.linalg.qr(rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m)))
    acc = np.zeros((m, m), dtype=complex)
    for _ in range(n_samples):
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        q, rr = np.linalg.qr(g)
        q = q * (np.diag(rr) / np.abs(np.diag(rr)))
        v = q.conj().T @ codebook.words[quantize_line(q @ u, codebook).index]
        vs = basis.conj().T @ v
        nv = np.linalg.norm(vs)
        if nv > 0:
            vs /= nv
            acc += np.outer(vs, vs.conj())
    acc /= n_samples
    mean_dir = eigh_topk(acc, 1).vectors[:, 0]
    return chordal_distance(mean_dir, basis.conj().T @ u)
