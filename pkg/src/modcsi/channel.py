"""
Synthetic frequency-selective channels for a dual-polarized uniform planar array.

Antenna ordering is polarization-major: a channel vector is ``[h_plus; h_minus]`` and
within each polarization the horizontal index varies slowest, i.e. the steering vector
is ``h_p (x) h_h (x) h_v``. The two ``N_t/2`` polarization blocks of a covariance are
therefore contiguous.

Channel dump format (little endian)::

    bytes 0..7    magic b"MCSICH01"
    u32           N_t
    u32           S (subbands per user)
    u32           U (number of users)
    u64           master seed
    u32 * U       user ids
    f64 * 2*U*S*N_t  channel entries, interleaved (re, im), ordered user, subband, antenna
"""
import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .linalg import check_hermitian


class PolarizationMode(enum.Enum):
    FULL = "full"
    BPLUS_BMINUS = "bplus_bminus"
    B00B = "b00b"


@dataclass(frozen=True)
class ArrayGeometry:
    n_h: int = 8
    n_v: int = 2
    n_p: int = 2
    spacing: float = 0.5

    def __post_init__(self):
        for name in ("n_h", "n_v", "n_p"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_p not in (1, 2):
            raise ValueError("n_p must be 1 or 2")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @property
    def n_t(self):
        return self.n_h * self.n_v * self.n_p


@dataclass(frozen=True)
class ClusterModelConfig:
    """Geometric cluster/ray model parameters.

    Cluster centres are uniform over the sector in azimuth and Gaussian in elevation;
    rays scatter around their cluster centre with Laplacian offsets whose standard
    deviation is ``angle_spread_deg`` (half of it in elevation). Cluster delays are
    exponential with mean ``delay_spread_s`` and cluster powers decay exponentially
    with delay, with 3 dB log-normal shadowing. ``indoor_attenuation`` is a power loss
    fraction applied to the whole user channel; it does not change channel directions.
    """

    n_clusters: int = 8
    rays_per_cluster: int = 10
    angle_spread_deg: float = 4.0
    delay_spread_s: float = 300e-9
    bandwidth_hz: float = 18e6
    n_subbands: int = 30
    indoor_attenuation: float = 0.0
    sector_deg: float = 120.0
    elevation_spread_deg: float = 6.0

    def __post_init__(self):
        if self.n_clusters < 1 or self.rays_per_cluster < 1 or self.n_subbands < 1:
            raise ValueError("cluster, ray and subband counts must be >= 1")
        if self.angle_spread_deg < 0 or self.delay_spread_s < 0 or self.elevation_spread_deg < 0:
            raise ValueError("spreads must be non-negative")
        if self.bandwidth_hz <= 0 or self.sector_deg <= 0:
            raise ValueError("bandwidth and sector width must be positive")
        if not 0.0 <= self.indoor_attenuation < 1.0:
            raise ValueError("indoor_attenuation must be in [0, 1)")


@dataclass(frozen=True)
class ChannelSet:
    """Subband channels of one user, shape ``(S, N_t)``."""

    subbands: np.ndarray
    user_id: int = 0
    seed: int = 0

    def __post_init__(self):
        h = np.asarray(self.subbands, dtype=complex)
        if h.ndim != 2 or h.shape[0] < 1:
            raise ValueError("subbands must be a non-empty (S, N_t) array")
        if np.any(np.linalg.norm(h, axis=1) == 0.0):
            raise DomainError("zero subband channel")
        object.__setattr__(self, "subbands", h)

    @property
    def n_subbands(self):
        return self.subbands.shape[0]

    @property
    def n_t(self):
        return self.subbands.shape[1]


def upa_steering(geom, azimuth, elevation, pol_phase=0.0):
    """Unit-norm UPA response ``h_p (x) h_h (x) h_v`` (angles in radians)."""
    kh = np.arange(geom.n_h)
    kv = np.arange(geom.n_v)
    hh = np.exp(2j * np.pi * geom.spacing * kh * np.sin(azimuth) * np.cos(elevation))
    hv = np.exp(2j * np.pi * geom.spacing * kv * np.sin(elevation))
    if geom.n_p == 2:
        hp = np.array([1.0, np.exp(1j * pol_phase)])
    else:
        hp = np.array([1.0 + 0j])
    a = np.kron(hp, np.kron(hh, hv))
    return a / np.linalg.norm(a)


def user_rng(seed, user_id):
    """Independent counter-based stream for one user of one master seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(user_id),))
    return np.random.Generator(np.random.Philox(ss))


def generate_user_channels(geom, cfg, seed, user_id=0):
    """Draw the subband channels of one user.

    ``h_s = sum_r g_r exp(-2j pi f_s tau_r) a(theta_r, phi_r)`` with ``f_s = s B / S``.
    The result is a pure function of ``(geom, cfg, seed, user_id)``.
    """
    rng = user_rng(seed, user_id)
    nc, nr = cfg.n_clusters, cfg.rays_per_cluster
    half = np.deg2rad(cfg.sector_deg) / 2.0
    az_c = rng.uniform(-half, half, nc)
    el_c = rng.normal(0.0, np.deg2rad(cfg.elevation_spread_deg), nc)
    if cfg.delay_spread_s > 0:
        tau_c = np.sort(rng.exponential(cfg.delay_spread_s, nc))
        tau_c -= tau_c[0]
        power = np.exp(-tau_c / cfg.delay_spread_s)
    else:
        tau_c = np.zeros(nc)
        power = np.ones(nc)
    power = power * 10.0 ** (rng.normal(0.0, 3.0, nc) / 10.0)
    power /= power.sum()

    spread = np.deg2rad(cfg.angle_spread_deg) / np.sqrt(2.0)  # Laplace std = sqrt(2) * scale
    az = az_c[:, None] + rng.laplace(0.0, spread, (nc, nr))
    el = el_c[:, None] + rng.laplace(0.0, spread / 2.0, (nc, nr))
    jitter = rng.exponential(cfg.delay_spread_s / 10.0, (nc, nr)) if cfg.delay_spread_s > 0 \
        else np.zeros((nc, nr))
    tau = tau_c[:, None] + jitter
    pol = rng.uniform(0.0, 2.0 * np.pi, (nc, nr))
    gains = np.sqrt(power[:, None] / (2.0 * nr)) * (
        rng.standard_normal((nc, nr)) + 1j * rng.standard_normal((nc, nr)))

    steer = np.array([upa_steering(geom, a, e, p)
                      for a, e, p in zip(az.ravel(), el.ravel(), pol.ravel())])
    freqs = np.arange(cfg.n_subbands) * (cfg.bandwidth_hz / cfg.n_subbands)
    phase = np.exp(-2j * np.pi * np.outer(freqs, tau.ravel()))
    h = (phase * gains.ravel()[None, :]) @ steer
    h *= np.sqrt(1.0 - cfg.indoor_attenuation) * np.sqrt(geom.n_t)
    return ChannelSet(subbands=h, user_id=int(user_id), seed=int(seed))


def generate_channels(geom, cfg, seed, n_users, first_user=0):
    return [generate_user_channels(geom, cfg, seed, u)
            for u in range(first_user, first_user + n_users)]


def normalized_sample_covariance(ch):
    """``(1/S) sum_s h~_s h~_s^H`` with ``h~_s = h_s / |h_s|``; trace one."""
    h = ch.subbands if isinstance(ch, ChannelSet) else np.asarray(ch, dtype=complex)
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("zero subband channel")
    hn = h / norms[:, None]
    r = hn.T @ hn.conj() / h.shape[0]
    return 0.5 * (r + r.conj().T)


def polarization_blocks(r, mode):
    """Covariance blocks used for wideband quantization under a polarization structure.

    Returns a tuple: ``(R,)`` for FULL, ``(B_plus, B_minus)`` for BPLUS_BMINUS and
    ``(B,)`` with ``B = (B_plus + B_minus) / 2`` for B00B.
    """
    mode = PolarizationMode(mode)
    r = check_hermitian(r, tol=1e-9)
    if mode is PolarizationMode.FULL:
        return (r.copy(),)
    n = r.shape[0]
    if n % 2:
        raise ValueError(f"polarization blocks need an even dimension, got {n}")
    h = n // 2
    bp, bm = r[:h, :h].copy(), r[h:, h:].copy()
    if mode is PolarizationMode.BPLUS_BMINUS:
        return (bp, bm)
    return (0.5 * (bp + bm),)


def block_diagonal(blocks, mode):
    """Reassemble the structured full covariance from the output of polarization_blocks."""
    mode = PolarizationMode(mode)
    if mode is PolarizationMode.FULL:
        return blocks[0].copy()
    bp, bm = (blocks[0], blocks[0]) if mode is PolarizationMode.B00B else blocks
    h = bp.shape[0]
    out = np.zeros((2 * h, 2 * h), dtype=complex)
    out[:h, :h] = bp
    out[h:, h:] = bm
    return out


_MAGIC = b"MCSICH01"


def write_channels(path, channel_sets, seed):
    sets = list(channel_sets)
    if not sets:
        raise ValueError("no channels to write")
    s, n_t = sets[0].subbands.shape
    if any(c.subbands.shape != (s, n_t) for c in sets):
        raise ValueError("all users must share (S, N_t)")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIQ", n_t, s, len(sets), int(seed)))
        fh.write(np.array([c.user_id for c in sets], dtype="<u4").tobytes())
        fh.write(np.stack([c.subbands for c in sets]).astype("<c16").tobytes())


def read_channels(path):
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a channel dump")
        n_t, s, n_users, seed = struct.unpack("<IIIQ", fh.read(20))
        ids = np.frombuffer(fh.read(4 * n_users), dtype="<u4")
        data = np.frombuffer(fh.read(16 * n_users * s * n_t), dtype="<c16")
    data = data.reshape(n_users, s, n_t)
    return [ChannelSet(subbands=data[i].astype(complex), user_id=int(ids[i]), seed=int(seed))
            for i in range(n_users)]
