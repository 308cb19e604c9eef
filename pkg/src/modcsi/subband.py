"""
Subband feedback: quantization of the K-dimensional effective channel of each subband
in the wideband basis ``W``.

With ``b = W^H h`` and ``c = S^-1 b`` (``S = diag(sigma_hat)``), a quantized ``c_hat``
is judged by the weighted metric ``d^2(S c, S c_hat)``; the base station reconstructs
``h_hat = W S c_hat / |W S c_hat|``. Coordinates with ``sigma_hat = 0`` are pruned:
they carry ``c = 0`` and reconstruct to zero.

Scalar schemes
--------------
EXT2 ranks coordinates by ``sigma_hat`` (descending, stable). The first is the phase
reference (amplitude 1, phase 0, no bits); the next ``m`` get one amplitude bit
(levels 1 and 1/sqrt(2)) and ``B_l`` phase bits; the rest have amplitude 1/sqrt(2) and
``B_s`` phase bits.

INT5 sends one amplitude bit per coordinate (levels ``s`` and ``sqrt(5) s``) and ranks
coordinates by ``alpha = sigma_hat * a_hat``. The top one is the phase reference, the
next ``m`` get ``B_l`` phase bits, the rest ``B_s``. The base station recomputes the
ranking from ``sigma_hat`` and the amplitude bits, so the reference index costs nothing.

By default both encoders return the record of minimum weighted distortion within their
format: every amplitude pattern is tried, and for each the phases are optimized jointly
and exactly (see :func:`_best_phases`). ``rule="nearest"`` instead rounds amplitudes
and phases coordinate by coordinate.

Payload layouts (MSB first)
---------------------------
EXT2   for each of the m strong slots in rank order: amplitude bit, B_l phase bits;
       then B_s phase bits for each weak slot in rank order.
INT5   K amplitude bits in coordinate order; then B_l phase bits per strong slot and
       B_s phase bits per weak slot, in rank order.
PCB    blocks fields of N_b component-index bits, then (blocks - 1) phase fields.
"""
import enum
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .bits import BitReader, BitWriter, index_bits
from .codebook import ProductCodebook, pcb_quantize
from .errors import DomainError

logger = logging.getLogger(__name__)

EXT2_LEVELS = np.array([1.0, 1.0 / np.sqrt(2.0)])
INT5_RATIO = np.sqrt(5.0)


class SubbandScheme(enum.Enum):
    EXACT = "exact"
    EXT2 = "ext2"
    INT5 = "int5"
    PCB = "pcb"


@dataclass(frozen=True)
class BitAllocationParams:
    """Phase/amplitude bit allocation of the scalar schemes."""

    m: int
    b_l: int
    b_s: int
    eta: float

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if not self.b_l > self.b_s >= 1:
            raise ValueError("need B_l > B_s >= 1")
        if not self.eta > 1:
            raise ValueError("eta must exceed 1")

    def check_k(self, k):
        if self.m > k - 1:
            raise ValueError(f"m = {self.m} exceeds K - 1 = {k - 1}")


def int5_levels(k):
    """Amplitude levels ``(s, sqrt(5) s)`` with equal-usage mean energy ``1/K``."""
    s = np.sqrt(2.0 / (k * (1.0 + INT5_RATIO ** 2)))
    return np.array([s, INT5_RATIO * s])


def bit_count(scheme, k, params, explicit_reference=False):
    """Subband payload size in bits.

    ``params`` is a BitAllocationParams for EXT2/INT5 and a ProductCodebook for PCB.
    ``explicit_reference`` adds ``ceil(log2 K)`` bits to INT5 for an accounting that
    transmits the reference index instead of deriving it.
    """
    scheme = SubbandScheme(scheme)
    if scheme is SubbandScheme.EXACT:
        return 0
    if scheme is SubbandScheme.PCB:
        if not isinstance(params, ProductCodebook) or params.dim != k:
            raise ValueError("PCB needs a ProductCodebook of dimension K")
        return params.bits
    params.check_k(k)
    m, bl, bs = params.m, params.b_l, params.b_s
    if scheme is SubbandScheme.EXT2:
        return (bl + 1) * m + bs * (k - m - 1)
    extra = index_bits(k) if explicit_reference else 0
    return k + bl * m + bs * (k - m - 1) + extra


@dataclass(frozen=True, eq=False)
class SubbandFeedback:
    """Quantized effective channel of one subband.

    ``order`` lists coordinates in rank order (reference first) for the scalar schemes.
    ``amp_codes`` and ``phase_codes`` are per coordinate. ``c_hat`` is the decoded
    coordinate vector; ``distortion`` is ``d^2(S c, S c_hat)``.
    """

    scheme: SubbandScheme
    k: int
    params: object
    c_hat: np.ndarray
    distortion: float
    order: tuple = ()
    amp_codes: tuple = ()
    phase_codes: tuple = ()
    pcb_index: tuple = ()

    @property
    def ref_index(self):
        return self.order[0] if self.order else None

    @property
    def bit_count(self):
        return bit_count(self.scheme, self.k, self.params)

    def payload(self):
        bw = BitWriter()
        if self.scheme is SubbandScheme.EXT2:
            m = self.params.m
            for rank, j in enumerate(self.order[1:]):
                if rank < m:
                    bw.write(self.amp_codes[j], 1)
                    bw.write(self.phase_codes[j], self.params.b_l)
                else:
                    bw.write(self.phase_codes[j], self.params.b_s)
        elif self.scheme is SubbandScheme.INT5:
            for code in self.amp_codes:
                bw.write(code, 1)
            for rank, j in enumerate(self.order[1:]):
                width = self.params.b_l if rank < self.params.m else self.params.b_s
                bw.write(self.phase_codes[j], width)
        elif self.scheme is SubbandScheme.PCB:
            idx, ph = self.pcb_index
            for i in idx:
                bw.write(i, self.params.component_bits)
            for p in ph[1:]:
                bw.write(p, self.params.phase_bits)
        return bw.getvalue()


# --------------------------------------------------------------- effective channels

def effective_channels(w, sigma_hat, h, pinv=False):
    """Coordinates ``b`` of ``h`` in the basis and ``c = b / sigma_hat``.

    ``b = W^H h`` by default; ``pinv=True`` uses the least-squares coefficients
    ``W^+ h`` instead (meaningful for a non-orthogonal IND basis). Pruned coordinates
    (``sigma_hat = 0``) get ``c = 0``.
    """
    w = np.asarray(w, dtype=complex)
    s = np.asarray(sigma_hat, dtype=float)
    h = np.asarray(h, dtype=complex)
    b = np.linalg.pinv(w) @ h if pinv else w.conj().T @ h
    active = s > 0
    c = np.zeros_like(b)
    c[active] = b[active] / s[active]
    if np.any(~active & (np.abs(b) > 1e-12 * max(np.linalg.norm(b), 1e-300))):
        logger.debug("pruned coordinates %s carry channel energy", np.flatnonzero(~active))
    return b, c


def _weighted_d2(c, c_hat, s):
    x = s * c
    y = s * c_hat
    nx = np.vdot(x, x).real
    ny = np.vdot(y, y).real
    if nx == 0.0 or ny == 0.0:
        return 1.0
    return float(max(0.0, 1.0 - abs(np.vdot(x, y)) ** 2 / (nx * ny)))


# ---------------------------------------------------------------- phase optimizer

def _best_phases(t_ref, t, q):
    """Jointly optimal phase codes maximizing ``|t_ref + sum_j t_j exp(2j pi k_j / q_j)|``.

    Vectorized over a leading pattern axis: ``t_ref`` (P,), ``t`` (P, n), ``q`` (n,).
    For a fixed rotation ``psi`` of the sum, each code is the grid point nearest to
    ``psi - arg t_j``. That choice is constant between the breakpoints
    ``arg t_j + (k + 1/2) 2 pi / q_j``, and the optimum is attained by the choice made
    on one of these arcs, so evaluating every arc is exact. Sweeping ``psi`` once
    around the circle, each breakpoint advances one code by one step, so the arc sums
    are cumulative sums of the per-breakpoint increments.

    Returns ``(codes (P, n), |sum| (P,))``.
    """
    p, n = t.shape
    if n == 0:
        return np.zeros((p, 0), dtype=int), np.abs(t_ref)
    q = np.asarray(q, dtype=int)
    two_pi = 2.0 * np.pi
    arg = np.angle(t)
    owner = np.repeat(np.arange(n), q)
    step = np.concatenate([np.arange(qj) for qj in q])
    half = (step + 0.5) * two_pi / q[owner]
    bp = np.mod(arg[:, owner] + half[None, :], two_pi)            # (P, M)
    srt = np.argsort(bp, axis=1)
    bp_sorted = np.take_along_axis(bp, srt, axis=1)
    psi0 = 0.5 * (bp_sorted[:, 0] + bp_sorted[:, -1] - two_pi)   # strictly before all
    codes0 = np.mod(np.rint((psi0[:, None] - arg) * (q / two_pi)[None, :]), q[None, :])
    roots = np.exp(1j * two_pi * codes0 / q[None, :])
    s0 = t_ref + np.sum(t * roots, axis=1)
    # crossing breakpoint (j, k) moves code k -> k + 1 of coordinate j
    omega = np.exp(1j * two_pi * step / q[owner])
    delta = t[:, owner] * (omega * (np.exp(1j * two_pi / q[owner]) - 1.0))[None, :]
    sums = np.concatenate([s0[:, None],
                           s0[:, None] + np.cumsum(np.take_along_axis(delta, srt, axis=1),
                                                   axis=1)[:, :-1]], axis=1)
    mag = np.abs(sums)
    best = np.argmax(mag, axis=1)
    rows = np.arange(p)
    crossed = np.arange(bp.shape[1])[None, :] < best[:, None]            # (P, M)
    owner_sorted = owner[srt]
    counts = np.sum((owner_sorted[:, :, None] == np.arange(n)[None, None, :])
                    & crossed[:, :, None], axis=1)
    codes = np.mod(codes0.astype(int) + counts, q[None, :])
    return codes, mag[rows, best]


def _round_phase(z, q):
    if z == 0:
        return 0
    return int(np.mod(np.rint(np.angle(z) * q / (2.0 * np.pi)), q))


# ------------------------------------------------------------------ scalar schemes

def _validate(c, sigma_hat):
    c = np.asarray(c, dtype=complex)
    s = np.asarray(sigma_hat, dtype=float)
    if c.ndim != 1 or c.shape != s.shape:
        raise ValueError("c and sigma_hat must be vectors of equal length")
    if np.any(s < 0):
        raise DomainError("sigma_hat must be non-negative")
    c = np.where(s > 0, c, 0)
    return c, s


def _ext2_c_hat(order, amp_codes, phase_codes, s, params):
    k = len(s)
    c_hat = np.zeros(k, dtype=complex)
    for rank, j in enumerate(order):
        if s[j] == 0:
            continue
        if rank == 0:
            c_hat[j] = 1.0
            continue
        strong = rank - 1 < params.m
        amp = EXT2_LEVELS[amp_codes[j]] if strong else EXT2_LEVELS[1]
        qj = 2 ** (params.b_l if strong else params.b_s)
        c_hat[j] = amp * np.exp(2j * np.pi * phase_codes[j] / qj)
    return c_hat


def _int5_order(s, amp_codes, k):
    alpha = s * int5_levels(k)[np.asarray(amp_codes, dtype=int)]
    return tuple(int(i) for i in np.argsort(-alpha, kind="stable"))


def _int5_c_hat(order, amp_codes, phase_codes, s, params):
    k = len(s)
    levels = int5_levels(k)
    c_hat = np.zeros(k, dtype=complex)
    for rank, j in enumerate(order):
        if s[j] == 0:
            continue
        qj = 1 if rank == 0 else 2 ** (params.b_l if rank - 1 < params.m else params.b_s)
        c_hat[j] = levels[amp_codes[j]] * np.exp(2j * np.pi * phase_codes[j] / qj)
    return c_hat


def _phase_grid(k, params):
    return np.array([2 ** params.b_l] * params.m + [2 ** params.b_s] * (k - 1 - params.m))


def quantize_ext2(c, sigma_hat, params, rule="exact"):
    """EXT2 quantization of the normalized effective channel ``c``."""
    c, s = _validate(c, sigma_hat)
    k = len(c)
    params.check_k(k)
    if not np.isclose(params.eta, 2.0):
        raise ValueError("EXT2 requires eta = 2")
    order = tuple(int(i) for i in np.argsort(-s, kind="stable"))
    ref, rest = order[0], list(order[1:])
    m = params.m
    q = _phase_grid(k, params)
    amp_codes = [0] * k
    phase_codes = [0] * k
    x = s * c
    if rule == "nearest":
        cref = c[ref]
        for rank, j in enumerate(rest):
            if rank < m and cref != 0:
                ratio = abs(c[j]) / abs(cref)
                amp_codes[j] = 0 if abs(ratio - 1.0) <= abs(ratio - EXT2_LEVELS[1]) else 1
            phase_codes[j] = _round_phase(c[j] * np.conj(cref), q[rank])
    elif rule == "exact":
        if np.any(x != 0):
            patterns = np.array(list(itertools.product((0, 1), repeat=m)), dtype=int) \
                .reshape(2 ** m, m)
            amps = np.empty((len(patterns), k - 1))
            amps[:, :m] = EXT2_LEVELS[patterns]
            amps[:, m:] = EXT2_LEVELS[1]
            srest = s[rest]
            t = np.conj(x[rest])[None, :] * srest[None, :] * amps
            t_ref = np.full(len(patterns), np.conj(x[ref]) * s[ref], dtype=complex)
            codes, mag = _best_phases(t_ref, t, q)
            energy = s[ref] ** 2 + np.sum((srest[None, :] * amps) ** 2, axis=1)
            best = int(np.argmax(mag ** 2 / energy))
            for rank, j in enumerate(rest):
                if rank < m:
                    amp_codes[j] = int(patterns[best, rank])
                phase_codes[j] = int(codes[best, rank]) if s[j] > 0 else 0
    else:
        raise ValueError(f"unknown rule {rule!r}")
    for j in range(k):
        if s[j] == 0:
            amp_codes[j] = phase_codes[j] = 0
    c_hat = _ext2_c_hat(order, amp_codes, phase_codes, s, params)
    return SubbandFeedback(scheme=SubbandScheme.EXT2, k=k, params=params, c_hat=c_hat,
                           distortion=_weighted_d2(c, c_hat, s), order=order,
                           amp_codes=tuple(amp_codes), phase_codes=tuple(phase_codes))


def quantize_int5(c, sigma_hat, params, rule="exact"):
    """INT5 quantization of the normalized effective channel ``c``."""
    c, s = _validate(c, sigma_hat)
    k = len(c)
    params.check_k(k)
    if not np.isclose(params.eta, 5.0):
        raise ValueError("INT5 requires eta = 5")
    levels = int5_levels(k)
    q = _phase_grid(k, params)
    active = np.flatnonzero(s > 0)
    x = s * c
    if rule == "nearest":
        nrm = np.linalg.norm(c)
        cn = c / nrm if nrm > 0 else c
        thr = 0.5 * (levels[0] + levels[1])
        amp_codes = [int(abs(cn[j]) >= thr) if s[j] > 0 else 0 for j in range(k)]
        order = _int5_order(s, amp_codes, k)
        ref = order[0]
        phase_codes = [0] * k
        for rank, j in enumerate(order[1:]):
            phase_codes[j] = _round_phase(c[j] * np.conj(c[ref]), q[rank]) if s[j] > 0 else 0
    elif rule == "exact":
        pats = np.zeros((2 ** len(active), k), dtype=int)
        if len(active):
            pats[:, active] = np.array(list(itertools.product((0, 1), repeat=len(active))))
        alpha = s[None, :] * levels[pats]
        orders = np.argsort(-alpha, axis=1, kind="stable")
        rows = np.arange(len(pats))[:, None]
        amps = levels[pats][rows, orders] * s[orders]               # sigma * a in rank order
        t_all = np.conj(x[orders]) * amps
        codes, mag = _best_phases(t_all[:, 0], t_all[:, 1:], q)
        energy = np.sum(amps ** 2, axis=1)
        best = int(np.argmax(mag ** 2 / energy)) if np.any(x != 0) else 0
        amp_codes = [int(a) for a in pats[best]]
        order = tuple(int(i) for i in orders[best])
        phase_codes = [0] * k
        if np.any(x != 0):
            for rank, j in enumerate(order[1:]):
                phase_codes[j] = int(codes[best, rank]) if s[j] > 0 else 0
    else:
        raise ValueError(f"unknown rule {rule!r}")
    order = _int5_order(s, amp_codes, k)
    c_hat = _int5_c_hat(order, amp_codes, phase_codes, s, params)
    return SubbandFeedback(scheme=SubbandScheme.INT5, k=k, params=params, c_hat=c_hat,
                           distortion=_weighted_d2(c, c_hat, s), order=order,
                           amp_codes=tuple(amp_codes), phase_codes=tuple(phase_codes))


def quantize_pcb_subband(b, sigma_hat, pcb):
    """Product-codebook quantization of ``b`` under the ``sigma_hat``-weighted metric."""
    b = np.asarray(b, dtype=complex)
    s = np.asarray(sigma_hat, dtype=float)
    k = len(b)
    if pcb.dim != k:
        raise ValueError(f"product codebook dimension {pcb.dim} != K = {k}")
    x = np.where(s > 0, b, 0)
    if not np.any(s * x != 0):
        idx, ph = (0,) * pcb.blocks, (0,) * pcb.blocks
        c_hat = pcb.word(idx, ph)
        return SubbandFeedback(scheme=SubbandScheme.PCB, k=k, params=pcb, c_hat=c_hat,
                               distortion=1.0, pcb_index=(idx, ph))
    res = pcb_quantize(x, s, pcb)
    c = np.zeros(k, dtype=complex)
    c[s > 0] = x[s > 0] / s[s > 0]
    return SubbandFeedback(scheme=SubbandScheme.PCB, k=k, params=pcb, c_hat=res.word,
                           distortion=_weighted_d2(c, res.word, s), pcb_index=res.index)


def quantize_exact(b, sigma_hat=None):
    """Lossless reference quantizer: ``b_hat = b`` (stored in ``c_hat``)."""
    b = np.asarray(b, dtype=complex)
    return SubbandFeedback(scheme=SubbandScheme.EXACT, k=len(b), params=None,
                           c_hat=b.copy(), distortion=0.0)


def quantize_subband(scheme, b, c, sigma_hat, params, rule="exact"):
    scheme = SubbandScheme(scheme)
    if scheme is SubbandScheme.EXT2:
        return quantize_ext2(c, sigma_hat, params, rule=rule)
    if scheme is SubbandScheme.INT5:
        return quantize_int5(c, sigma_hat, params, rule=rule)
    if scheme is SubbandScheme.PCB:
        return quantize_pcb_subband(b, sigma_hat, params)
    return quantize_exact(b, sigma_hat)


# -------------------------------------------------------------- reconstruction

def weighted_reconstruction(sigma_hat, fb):
    """``b_hat = S c_hat`` (not normalized); for EXACT the stored ``b``."""
    if fb.scheme is SubbandScheme.EXACT:
        return fb.c_hat.copy()
    return np.asarray(sigma_hat, dtype=float) * fb.c_hat


def reconstruct(w, sigma_hat, fb):
    """Unit-norm channel direction ``W S c_hat / |W S c_hat|``."""
    h = np.asarray(w, dtype=complex) @ weighted_reconstruction(sigma_hat, fb)
    nrm = np.linalg.norm(h)
    if nrm == 0.0:
        raise DomainError("reconstruction is the zero vector")
    return h / nrm


def decode_subband(payload, scheme, sigma_hat, params):
    """Base-station side: rebuild a subband record from its payload bits."""
    scheme = SubbandScheme(scheme)
    s = np.asarray(sigma_hat, dtype=float)
    k = len(s)
    reader = BitReader(payload)
    if scheme is SubbandScheme.PCB:
        idx = tuple(reader.read(params.component_bits) for _ in range(params.blocks))
        ph = (0,) + tuple(reader.read(params.phase_bits) for _ in range(params.blocks - 1))
        if not reader.done():
            raise ValueError("trailing bits in subband payload")
        return SubbandFeedback(scheme=scheme, k=k, params=params, c_hat=params.word(idx, ph),
                               distortion=float("nan"), pcb_index=(idx, ph))
    if scheme not in (SubbandScheme.EXT2, SubbandScheme.INT5):
        raise ValueError(f"scheme {scheme} has no payload")
    params.check_k(k)
    amp_codes = [0] * k
    phase_codes = [0] * k
    if scheme is SubbandScheme.EXT2:
        order = tuple(int(i) for i in np.argsort(-s, kind="stable"))
        for rank, j in enumerate(order[1:]):
            if rank < params.m:
                amp_codes[j] = reader.read(1)
                phase_codes[j] = reader.read(params.b_l)
            else:
                phase_codes[j] = reader.read(params.b_s)
        build = _ext2_c_hat
    else:
        amp_codes = [reader.read(1) for _ in range(k)]
        order = _int5_order(s, amp_codes, k)
        for rank, j in enumerate(order[1:]):
            phase_codes[j] = reader.read(params.b_l if rank < params.m else params.b_s)
        build = _int5_c_hat
    if not reader.done():
        raise ValueError("trailing bits in subband payload")
    c_hat = build(order, amp_codes, phase_codes, s, params)
    return SubbandFeedback(scheme=scheme, k=k, params=params, c_hat=c_hat,
                           distortion=float("nan"), order=order,
                           amp_codes=tuple(amp_codes), phase_codes=tuple(phase_codes))
