"""
Line codebooks: construction, training, search and serialization.

A line codebook is a finite set of unit-norm complex vectors, each standing for the
line it spans. Search uses the chordal distance, so word phases are irrelevant; words
are stored phase-normalized.

Codebook file format (little endian)::

    bytes 0..7   magic b"MCSICB01"
    u32          length L of the JSON header
    L bytes      UTF-8 JSON: {"label", "dim", "size", "descriptor", "has_words"}
    f64 * 2*size*dim   words, interleaved (re, im), row-major, present iff has_words

Parametric constructions (``dft``, ``chirp2``, ``tensor`` of those) may be written
without words; the loader rebuilds them from the descriptor.
"""
import json
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial import ConvexHull, QhullError

from .errors import DomainError
from .linalg import phase_normalize

logger = logging.getLogger(__name__)

MAX_CODEBOOK_SIZE = 2 ** 20
_MAGIC = b"MCSICB01"


@dataclass(frozen=True, eq=False)
class LineCodebook:
    """Finite set of unit-norm lines in ``C^dim``; ``words`` has shape ``(size, dim)``."""

    words: np.ndarray
    label: str = ""
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.words, dtype=complex))
        if w.ndim != 2 or w.shape[0] < 1:
            raise ValueError("codebook needs at least one word")
        if w.shape[0] > MAX_CODEBOOK_SIZE:
            raise ValueError(f"codebook size {w.shape[0]} exceeds cap {MAX_CODEBOOK_SIZE}")
        norms = np.linalg.norm(w, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("codebook words must have unit norm")
        _check_distinct(w)
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    @property
    def size(self):
        return self.words.shape[0]

    @property
    def dim(self):
        return self.words.shape[1]

    @property
    def bits(self):
        return math.ceil(math.log2(self.size)) if self.size > 1 else 0

    def __len__(self):
        return self.size


def _check_distinct(w):
    m = w.shape[0]
    if m == 1:
        return
    chunk = 2048
    for start in range(0, m, chunk):
        blk = w[start:start + chunk]
        corr = np.abs(blk.conj() @ w.T) ** 2
        rows = np.arange(blk.shape[0])
        corr[rows, start + rows] = 0.0
        dup = corr > 1.0 - 1e-14
        if np.any(dup):
            i, j = np.argwhere(dup)[0]
            raise ValueError(f"duplicate codewords {start + i} and {j}")


@dataclass(frozen=True)
class QuantizeResult:
    """Outcome of a codebook search.

    ``index`` is an int for line codebooks and ``(block_indices, phase_indices)`` for
    product codebooks. ``word`` is reconstructible from ``index`` and the codebook.
    """

    index: object
    word: np.ndarray
    distortion: float


def dft_oversampled(n, oversampling=1):
    """``n * oversampling`` beams ``exp(2j pi k m / (n O)) / sqrt(n)``, ``k = 0..n-1``."""
    if n < 1 or oversampling < 1:
        raise ValueError("n and oversampling must be >= 1")
    size = n * oversampling
    k = np.arange(n)
    m = np.arange(size)
    words = np.exp(2j * np.pi * np.outer(m, k) / size) / np.sqrt(n)
    return LineCodebook(words=words, label=f"dft{n}x{oversampling}",
                        descriptor={"type": "dft", "n": int(n), "oversampling": int(oversampling)})


def binary_chirp_2d():
    """The four QPSK-phase lines ``(1, j^k)/sqrt(2)`` in C^2 (2-bit chirp codebook)."""
    words = np.array([[1, 1], [1, -1], [1, 1j], [1, -1j]], dtype=complex) / np.sqrt(2)
    return LineCodebook(words=words, label="chirp2", descriptor={"type": "chirp2"})


def tensored(parts, cap=MAX_CODEBOOK_SIZE):
    """All Kronecker products of one word from each part (first part varies slowest)."""
    parts = list(parts)
    if not parts:
        raise ValueError("need at least one codebook")
    size = math.prod(p.size for p in parts)
    if size > cap:
        raise ValueError(f"tensored codebook would have {size} words (cap {cap})")
    words = parts[0].words
    for p in parts[1:]:
        words = np.einsum("ai,bj->abij", words, p.words).reshape(words.shape[0] * p.size, -1)
    return LineCodebook(words=phase_normalize(words.T).T,
                        label="(x)".join(p.label for p in parts),
                        descriptor={"type": "tensor", "parts": [p.descriptor for p in parts]})


def tsodft(geom_dims, oversampling, chirp=True):
    """Tensored oversampled DFT codebook for a (pol x) horizontal x vertical array.

    ``geom_dims`` is ``(n_h, n_v)`` and ``oversampling`` is ``(o_h, o_v)``. With
    ``chirp`` the 2-bit chirp codebook quantizes the polarization factor in front.
    """
    (n_h, n_v), (o_h, o_v) = geom_dims, oversampling
    parts = [dft_oversampled(n_h, o_h), dft_oversampled(n_v, o_v)]
    if chirp:
        parts.insert(0, binary_chirp_2d())
    return tensored(parts)


def from_descriptor(desc):
    kind = desc.get("type")
    if kind == "dft":
        return dft_oversampled(desc["n"], desc["oversampling"])
    if kind == "chirp2":
        return binary_chirp_2d()
    if kind == "tensor":
        return tensored([from_descriptor(d) for d in desc["parts"]])
    raise ValueError(f"codebook descriptor {desc!r} is not parametric")


def is_parametric(desc):
    kind = desc.get("type")
    if kind in ("dft", "chirp2"):
        return True
    return kind == "tensor" and all(is_parametric(d) for d in desc["parts"])


def save_codebook(path, cb, params_only=False):
    if params_only and not is_parametric(cb.descriptor):
        raise ValueError("only parametric codebooks can be saved without words")
    header = json.dumps({"label": cb.label, "dim": cb.dim, "size": cb.size,
                         "descriptor": cb.descriptor, "has_words": not params_only},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        if not params_only:
            fh.write(cb.words.astype("<c16").tobytes())


def load_codebook(path):
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a codebook file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if not header["has_words"]:
            cb = from_descriptor(header["descriptor"])
            return LineCodebook(cb.words, label=header["label"], descriptor=header["descriptor"])
        raw = fh.read(16 * header["size"] * header["dim"])
    words = np.frombuffer(raw, dtype="<c16").reshape(header["size"], header["dim"])
    return LineCodebook(words.astype(complex), label=header["label"],
                        descriptor=header["descriptor"])


# --------------------------------------------------------------------------- search

def _corr(u, cb):
    u = np.asarray(u, dtype=complex)
    if u.shape[-1] != cb.dim:
        raise ValueError(f"dimension mismatch: vector {u.shape[-1]} vs codebook {cb.dim}")
    nu = np.linalg.norm(u)
    if nu == 0.0:
        raise DomainError("cannot quantize the zero vector")
    return np.abs(cb.words.conj() @ u) ** 2 / nu ** 2


def quantize_line(u, cb):
    """Exhaustive chordal-distance search; ties go to the lowest index.

    ``distortion`` is the chordal distance ``d(u, word)``.
    """
    corr = _corr(u, cb)
    idx = int(np.argmax(corr))
    return QuantizeResult(index=idx, word=cb.words[idx],
                          distortion=float(np.sqrt(max(0.0, 1.0 - corr[idx]))))


def ranked_indices(u, cb, count):
    """Indices of the ``count`` nearest words, nearest first (stable on ties)."""
    corr = _corr(u, cb)
    return np.argsort(-corr, kind="stable")[:count]


def quantize_rows(vectors, cb):
    """Quantize every row of ``vectors``; returns ``(indices, chordal distances)``."""
    v = np.asarray(vectors, dtype=complex)
    if v.shape[1] != cb.dim:
        raise ValueError("dimension mismatch")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("cannot quantize the zero vector")
    corr = np.abs(v @ cb.words.conj().T) ** 2 / norms[:, None] ** 2
    idx = np.argmax(corr, axis=1)
    best = corr[np.arange(len(idx)), idx]
    return idx, np.sqrt(np.clip(1.0 - best, 0.0, None))


# ------------------------------------------------------------------------- training

def lloyd_train(samples, size, iters=50, seed=0, return_trace=False, label=None):
    """Train a line codebook with the Lloyd algorithm under the chordal distance.

    Initialization picks seeds k-means++ style (probability proportional to the squared
    chordal distance to the nearest seed). Each iteration assigns samples to the nearest
    word and replaces each word by the principal eigenvector of its cell's scatter
    matrix. Empty cells are re-seeded with the worst-quantized samples. The mean squared
    chordal distortion is non-increasing; the trace of its values is checked.
    """
    x = np.asarray(samples, dtype=complex)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array")
    n = x.shape[0]
    if size < 1 or size > n:
        raise ValueError(f"codebook size {size} must be in [1, {n}] (number of samples)")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("zero training sample")
    x = x / norms[:, None]
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    d2 = 1.0 - np.abs(x @ x[chosen[0]].conj()) ** 2
    while len(chosen) < size:
        d2 = np.clip(d2, 0.0, None)
        total = d2.sum()
        if total <= (1e-9) ** 2 * n:
            raise ValueError(f"samples span fewer than {size} distinct lines")
        pick = int(rng.choice(n, p=d2 / total))
        chosen.append(pick)
        d2 = np.minimum(d2, 1.0 - np.abs(x @ x[pick].conj()) ** 2)
    words = x[chosen].copy()

    trace = []
    prev_assign = None
    for it in range(iters + 1):
        corr = np.abs(x @ words.conj().T) ** 2
        assign = np.argmax(corr, axis=1)
        best = corr[np.arange(n), assign]
        trace.append(float(np.mean(np.clip(1.0 - best, 0.0, None))))
        if len(trace) > 1 and trace[-1] > trace[-2] + 1e-12:
            raise AssertionError(f"Lloyd distortion increased at iteration {it}: {trace[-2:]}")
        if it == iters or (prev_assign is not None and np.array_equal(assign, prev_assign)):
            break
        prev_assign = assign
        worst = np.argsort(-(1.0 - best), kind="stable")
        used = set()
        for j in range(size):
            cell = x[assign == j]
            if len(cell):
                scatter = cell.T @ cell.conj()
                vals, vecs = np.linalg.eigh(scatter)
                words[j] = vecs[:, -1]
        for j in range(size):
            if np.any(assign == j):
                continue
            for cand in worst:
                if cand in used:
                    continue
                used.add(int(cand))
                words[j] = x[cand]
                break
    words = phase_normalize(words.T).T
    cb = LineCodebook(words=words, label=label or f"lloyd{size}",
                      descriptor={"type": "lloyd", "size": int(size), "iters": int(iters),
                                  "seed": int(seed)})
    return (cb, trace) if return_trace else cb


# ----------------------------------------------------------------- product codebooks

@dataclass(frozen=True, eq=False)
class VectorCodebook:
    """Finite set of distinct nonzero vectors in ``C^dim`` (amplitude matters)."""

    words: np.ndarray
    label: str = ""
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.words, dtype=complex))
        if w.ndim != 2 or w.shape[0] < 1:
            raise ValueError("codebook needs at least one word")
        if np.any(np.linalg.norm(w, axis=1) == 0):
            raise ValueError("vector codewords must be nonzero")
        d = np.linalg.norm(w[:, None, :] - w[None, :, :], axis=2) if w.shape[0] <= 4096 else None
        if d is not None and np.any(d[np.triu_indices(w.shape[0], 1)] < 1e-12):
            raise ValueError("duplicate vector codewords")
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    size = LineCodebook.size
    dim = LineCodebook.dim
    bits = LineCodebook.bits
    __len__ = LineCodebook.__len__


def vector_lloyd_train(dim, size, n_samples=20000, iters=100, seed=0):
    """Euclidean k-means codebook for i.i.d. unit-variance complex Gaussian vectors.

    Uses k-means++ seeding; the result is deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    g = (rng.standard_normal((n_samples, dim)) + 1j * rng.standard_normal((n_samples, dim)))
    g /= np.sqrt(2.0)
    real = np.concatenate([g.real, g.imag], axis=1)
    centroids, _ = kmeans2(real, size, iter=iters, minit="++", seed=rng)
    words = centroids[:, :dim] + 1j * centroids[:, dim:]
    order = np.lexsort((np.angle(words[:, 0]), -np.linalg.norm(words, axis=1)))
    return VectorCodebook(words=words[order], label=f"gvq{dim}x{size}",
                          descriptor={"type": "gaussian_vq", "dim": int(dim), "size": int(size),
                                      "n_samples": int(n_samples), "iters": int(iters),
                                      "seed": int(seed)})


@dataclass(frozen=True)
class ProductCodebook:
    """Blockwise product of a component codebook with quantized junction phases.

    A word is ``[c_{i_1}; e^{j phi_2} c_{i_2}; ...]``, normalized to unit norm, with
    phases from a uniform ``2**phase_bits`` alphabet and the first block phase fixed
    to zero. The component is a LineCodebook (equal block energies) or a
    VectorCodebook (block amplitudes carried by the component words).
    """

    component: object
    blocks: int
    phase_bits: int

    def __post_init__(self):
        if self.blocks < 1 or self.phase_bits < 0:
            raise ValueError("blocks must be >= 1 and phase_bits >= 0")

    @property
    def dim(self):
        return self.blocks * self.component.dim

    @property
    def n_phases(self):
        return 2 ** self.phase_bits

    @property
    def component_bits(self):
        return self.component.bits

    @property
    def bits(self):
        return self.blocks * self.component_bits + (self.blocks - 1) * self.phase_bits

    def word(self, indices, phases):
        nl = self.component.dim
        out = np.zeros(self.dim, dtype=complex)
        for k, (i, p) in enumerate(zip(indices, phases)):
            out[k * nl:(k + 1) * nl] = np.exp(2j * np.pi * p / self.n_phases) * self.component.words[i]
        return out / np.linalg.norm(out)


def _extreme_points(points, lower_only=True):
    """Indices of a superset-safe set of extreme points of a finite point set in R^3.

    With ``lower_only`` only vertices of facets whose outward normal has a negative (or
    numerically zero) last coordinate are kept. Flat or collinear sets are handled in
    their own affine hull; returning extra points is always allowed.
    """
    n = points.shape[0]
    if n <= 4:
        return np.arange(n)
    try:
        hull = ConvexHull(points)
    except QhullError:
        return _flat_extreme_points(points)
    if not lower_only:
        return np.sort(hull.vertices)
    keep = hull.equations[:, 2] < 1e-9
    return np.unique(hull.simplices[keep].ravel())


def _flat_extreme_points(points):
    center = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - center, full_matrices=False)
    scale = max(1.0, float(np.max(np.abs(points))))
    rank = int(np.sum(s > 1e-11 * scale))
    if rank == 0:
        return np.arange(1)
    if rank == 1:
        t = (points - center) @ vt[0]
        return np.unique([np.argmin(t), np.argmax(t)])
    if rank == 2:
        try:
            return np.sort(ConvexHull((points - center) @ vt[:2].T).vertices)
        except QhullError:
            pass
    return np.arange(points.shape[0])


def pcb_quantize(x, weights, pcb):
    """Search a product codebook under the weighted chordal metric.

    Finds the word ``c`` minimizing ``d^2(x, diag(weights) c)``. For ``x = S c_s`` this
    is ``weighted_chordal(c_s, c, weights)``, the subband metric with the deformed
    codebook.

    The objective ``|sum_k z_k|^2 / sum_k q_k`` (``z_k`` the weighted block inner
    product with phase, ``q_k`` the weighted block energy) is convex in the stacked
    ``(z, q)``, so its maximum over all block choices is attained at a vertex of the
    Minkowski sum of the per-block candidate clouds. The search runs stage by stage
    over the blocks, keeping only hull vertices of the partial sums (the trellis
    survivors), which is exact.

    Returns
    -------
    QuantizeResult
        ``index = (block_indices, phase_indices)`` with ``phase_indices[0] == 0``,
        ``word`` the unit-norm product codeword, ``distortion`` the squared weighted
        chordal distance.
    """
    x = np.asarray(x, dtype=complex)
    w = np.asarray(weights, dtype=float)
    nl = pcb.component.dim
    if x.shape != (pcb.dim,) or w.shape != (pcb.dim,):
        raise ValueError(f"vector and weights must have length {pcb.dim} "
                         f"({pcb.blocks} blocks of {nl})")
    if np.any(w < 0):
        raise DomainError("weights must be non-negative")
    comp = pcb.component.words
    q_ph = pcb.n_phases
    rot = np.exp(2j * np.pi * np.arange(q_ph) / q_ph)

    state_pts = None   # (m, 3) partial sums (Re S, Im S, Q)
    state_choice = None  # (m, k) flattened candidate ids per block
    for k in range(pcb.blocks):
        xs = x[k * nl:(k + 1) * nl]
        ws = w[k * nl:(k + 1) * nl]
        p = (comp * ws[None, :]) @ xs.conj()        # <x_k, W_k c_i>^* ordering irrelevant
        q = np.sum(np.abs(comp * ws[None, :]) ** 2, axis=1)
        z = (p[:, None] * rot[None, :]).ravel()    # candidate id = i * q_ph + phase
        qq = np.repeat(q, q_ph)
        cand = np.column_stack([z.real, z.imag, qq])
        keep = _extreme_points(cand)
        cand, ids = cand[keep], keep
        if state_pts is None:
            state_pts, state_choice = cand, ids[:, None]
        else:
            summed = (state_pts[:, None, :] + cand[None, :, :]).reshape(-1, 3)
            choice = np.concatenate([
                np.repeat(state_choice, len(ids), axis=0),
                np.tile(ids, len(state_choice))[:, None]], axis=1)
            keep = _extreme_points(summed) if k < pcb.blocks - 1 else np.arange(len(summed))
            state_pts, state_choice = summed[keep], choice[keep]

    qtot = state_pts[:, 2]
    if np.all(qtot <= 0.0):
        raise DomainError("all weighted codewords vanish")
    s2 = state_pts[:, 0] ** 2 + state_pts[:, 1] ** 2
    ratio = np.where(qtot > 0.0, s2 / np.where(qtot > 0.0, qtot, 1.0), -1.0)
    best = int(np.argmax(ratio))
    choice = state_choice[best]
    indices = tuple(int(c // q_ph) for c in choice)
    phases = [int(c % q_ph) for c in choice]
    phases = tuple((ph - phases[0]) % q_ph for ph in phases)
    word = pcb.word(indices, phases)
    xn = np.linalg.norm(x)
    if xn == 0.0:
        raise DomainError("cannot quantize the zero vector")
    wc = w * word
    dist = 1.0 - abs(np.vdot(x, wc)) ** 2 / (xn ** 2 * np.vdot(wc, wc).real)
    dist = float(max(0.0, dist))

    base = []
    for k in range(pcb.blocks):
        wc = comp * w[None, k * nl:(k + 1) * nl]
        energy = np.sum(np.abs(wc) ** 2, axis=1)
        score = np.abs(wc @ x[k * nl:(k + 1) * nl].conj()) ** 2 / np.where(energy > 0, energy, 1.0)
        base.append(int(np.argmax(score)))
    bw = w * pcb.word(base, (0,) * pcb.blocks)
    if np.vdot(bw, bw).real > 0:
        base_dist = 1.0 - abs(np.vdot(x, bw)) ** 2 / (xn ** 2 * np.vdot(bw, bw).real)
        assert dist <= base_dist + 1e-12, "product search worse than blockwise baseline"
    return QuantizeResult(index=(indices, phases), word=word, distortion=dist)


def random_line_codebook(dim, size, seed, label=None):
    """``size`` isotropically distributed lines in ``C^dim`` from a fixed seed."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((size, dim)) + 1j * rng.standard_normal((size, dim))
    g /= np.linalg.norm(g, axis=1)[:, None]
    return LineCodebook(words=phase_normalize(g.T).T, label=label or f"iso{dim}x{size}",
                        descriptor={"type": "random", "dim": int(dim), "size": int(size),
                                    "seed": int(seed)})
