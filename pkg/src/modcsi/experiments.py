"""
Experiment runners. Each runner turns a validated ExperimentConfig into report rows
(dicts keyed by :data:`COLUMNS`) and records the hard invariants it checked.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (ArrayGeometry, ClusterModelConfig, PolarizationMode, generate_channels,
                      normalized_sample_covariance, polarization_blocks)
from .codebook import (ProductCodebook, lloyd_train, quantize_rows, random_line_codebook,
                       tsodft, vector_lloyd_train)
from .config import all_pipelines, expand, oversampling_split
from .errors import InvariantViolation
from .evaluate import (TOL_IDENTITY, Pipeline, ZFConfig, distortion_report, run_pipeline,
                       spectral_efficiency)
from .linalg import eigh_topk
from .subband import BitAllocationParams, SubbandScheme
from .wideband import WidebandScheme, projection_distortion, wideband_feedback

COLUMNS = ("experiment", "wideband", "pol_mode", "codebook", "codebook_bits", "subband",
           "subband_params", "wideband_bits", "subband_bits", "n_users", "D_W", "D_H", "D_B",
           "d_p", "lower_gap", "upper_gap", "decomposition_residual", "snr_db", "se")

# Training users come from ids far above any evaluation id, so the sets never overlap.
TRAIN_USER_OFFSET = 10 ** 6
ETA = {"ext2": 2.0, "int5": 5.0}


@dataclass
class InvariantLog:
    """Named hard invariants with the number of checks and the worst observed margin."""

    checks: dict = field(default_factory=dict)

    def check(self, name, ok, margin, detail=""):
        entry = self.checks.setdefault(name, {"checked": 0, "worst_margin": math.inf})
        entry["checked"] += 1
        entry["worst_margin"] = min(entry["worst_margin"], float(margin))
        if not ok:
            raise InvariantViolation(name, detail)

    def as_dict(self):
        return {k: dict(v) for k, v in sorted(self.checks.items())}


@dataclass
class RunResult:
    rows: list
    invariants: InvariantLog
    records: dict


def geometry(cfg):
    a = cfg.array
    return ArrayGeometry(n_h=a.n_h, n_v=a.n_v, n_p=a.n_p, spacing=a.spacing)


def channel_model(cfg):
    return ClusterModelConfig(**cfg.channel.model_dump())


def block_k(k, pol):
    return k if PolarizationMode(pol) is PolarizationMode.FULL else k // 2


def codebook_label(cb):
    return f"tsodft{cb.oversampling}" if cb.kind == "tsodft" else f"lloyd{cb.bits}"


class CodebookFactory:
    """Builds (and caches) basis and product codebooks for one experiment."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.geom = geometry(cfg)
        self._basis = {}
        self._pcb = {}

    def basis(self, spec, pol):
        pol = PolarizationMode(pol)
        key = (spec.model_dump_json(), pol)
        if key not in self._basis:
            self._basis[key] = self._build_basis(spec, pol)
        return self._basis[key]

    def _build_basis(self, spec, pol):
        a = self.cfg.array
        full = pol is PolarizationMode.FULL
        if spec.kind == "tsodft":
            o = oversampling_split(spec.oversampling, spec.o_h, spec.o_v, (a.n_h, a.n_v))
            return tsodft((a.n_h, a.n_v), o, chirp=full and a.n_p == 2)
        train = generate_channels(self.geom, channel_model(self.cfg), spec.train_seed,
                                  spec.train_users, first_user=TRAIN_USER_OFFSET)
        kb = block_k(self.cfg.k, pol)
        samples = []
        for ch in train:
            for block in polarization_blocks(normalized_sample_covariance(ch), pol):
                samples.append(eigh_topk(block, kb).vectors.T)
        return lloyd_train(np.concatenate(samples), 2 ** spec.bits, iters=spec.iters,
                           seed=spec.train_seed, label=f"lloyd{spec.bits}-{pol.value}")

    def subband_params(self, q):
        if q.scheme in ETA:
            return BitAllocationParams(m=q.m, b_l=q.b_l, b_s=q.b_s, eta=ETA[q.scheme])
        if q.scheme == "pcb":
            key = (q.n_l, q.n_b, q.component, q.component_seed)
            if key not in self._pcb:
                if q.component == "vector":
                    comp = vector_lloyd_train(q.n_l, 2 ** q.n_b, seed=q.component_seed)
                else:
                    comp = random_line_codebook(q.n_l, 2 ** q.n_b, q.component_seed)
                self._pcb[key] = comp
            return ProductCodebook(component=self._pcb[key], blocks=self.cfg.k // q.n_l,
                                   phase_bits=q.phase_bits)
        return None


def subband_label(q):
    if q.scheme in ETA:
        return f"m={q.m};b_l={q.b_l};b_s={q.b_s}"
    if q.scheme == "pcb":
        return f"n_l={q.n_l};n_b={q.n_b};phase_bits={q.phase_bits};component={q.component}"
    return ""


def make_pipeline(cfg, spec, factory):
    pol = PolarizationMode(spec.pol_mode)
    return Pipeline(wideband=WidebandScheme(spec.wideband),
                    subband=SubbandScheme(spec.subband.scheme), k=cfg.k, pol_mode=pol,
                    basis_codebook=factory.basis(spec.codebook, pol),
                    subband_params=factory.subband_params(spec.subband),
                    pinv=cfg.wideband.pinv, on_degenerate=cfg.wideband.on_degenerate,
                    rule=spec.subband.rule)


def base_row(cfg, spec=None, cb=None):
    row = {c: "" for c in COLUMNS}
    row["experiment"] = cfg.experiment
    row["n_users"] = cfg.users
    if spec is not None:
        row.update(wideband=spec.wideband, pol_mode=spec.pol_mode,
                   codebook=codebook_label(spec.codebook), subband=spec.subband.scheme,
                   subband_params=subband_label(spec.subband))
    if cb is not None:
        row["codebook_bits"] = cb.bits
    return row


def _single(values, name):
    vals = set(values)
    if len(vals) != 1:
        raise InvariantViolation("bit_count", f"{name} varies across users: {sorted(vals)}")
    return vals.pop()


# ------------------------------------------------------------------ runners

def run_wideband_vector(cfg, channels, factory, threads, log):
    """Mean squared chordal error of quantizing the dominant eigenvectors."""
    rows = []
    covs = [normalized_sample_covariance(ch) for ch in channels]
    for pol in cfg.wideband.pol_modes:
        kb = block_k(cfg.k, pol)
        for cbs in cfg.wideband.codebooks:
            for cb_spec in expand(cbs):
                cb = factory.basis(cb_spec, pol)
                vecs = np.concatenate([eigh_topk(b, kb).vectors.T for r in covs
                                       for b in polarization_blocks(r, pol)])
                _, dist = quantize_rows(vecs, cb)
                row = base_row(cfg, cb=cb)
                row.update(pol_mode=pol, codebook=codebook_label(cb_spec),
                           D_W=float(np.mean(dist ** 2)))
                rows.append(row)
    return rows


def run_projection(cfg, channels, factory, threads, log):
    """Projection distortion of each wideband scheme, polarization mode and codebook."""
    rows = []
    covs = [normalized_sample_covariance(ch) for ch in channels]
    seen = set()
    for spec in all_pipelines(cfg):
        key = (spec.wideband, spec.pol_mode, spec.codebook.model_dump_json())
        if key in seen:
            continue
        seen.add(key)
        pol = PolarizationMode(spec.pol_mode)
        cb = factory.basis(spec.codebook, pol)
        d_p, bits = [], set()
        for r in covs:
            fb = wideband_feedback(r, cfg.k, cb, spec.wideband, pol,
                                   on_degenerate=cfg.wideband.on_degenerate)
            bits.add(len(fb.payload()))
            if len(fb.payload()) != fb.bit_count:
                raise InvariantViolation("bit_count", "wideband payload length")
            if spec.wideband == "ind":
                u, s, _ = np.linalg.svd(fb.W, full_matrices=False)
                q = u[:, s > 1e-10 * s[0]]
                d_p.append(float(np.clip(1.0 - np.trace(q.conj().T @ r @ q).real, 0.0, 1.0)))
            else:
                gram_err = float(np.max(np.abs(fb.W.conj().T @ fb.W - np.eye(cfg.k))))
                log.check("orthonormality", gram_err <= 1e-10, 1e-10 - gram_err,
                          f"{spec.wideband}: |W^H W - I| = {gram_err:.3e}")
                d_p.append(projection_distortion(fb.W, r))
        row = base_row(cfg, cb=cb)
        row.update(wideband=spec.wideband, pol_mode=spec.pol_mode,
                   codebook=codebook_label(spec.codebook),
                   wideband_bits=_single(bits, "wideband bits"), d_p=float(np.mean(d_p)))
        rows.append(row)
    return rows


def _pipeline_rows(cfg, channels, factory, threads, log, records):
    rows = []
    for spec in all_pipelines(cfg):
        pipe = make_pipeline(cfg, spec, factory)
        results = run_pipeline(channels, pipe, threads)
        rep = distortion_report(results)
        orthonormal = pipe.orthonormal
        if orthonormal:
            res = rep.decomposition_residual
            log.check("decomposition_identity", res <= TOL_IDENTITY, TOL_IDENTITY - res,
                      f"{spec.wideband}/{spec.subband.scheme}: residual {res:.3e}")
            for r in results:
                lo = float(r.d2_h.mean() - r.d_p)
                hi = float(r.d2_b.mean() + r.d_p - r.d2_h.mean())
                log.check("distortion_bounds", min(lo, hi) >= -TOL_IDENTITY,
                          min(lo, hi) + TOL_IDENTITY,
                          f"{spec.wideband}/{spec.subband.scheme} user {r.user_id}: "
                          f"gaps {lo:.3e}, {hi:.3e}")
        else:
            viol = []
            for r in results:
                hi = float(r.d2_b.mean() + r.d_p - r.d2_h.mean())
                if hi < 0:
                    viol.append({"user_id": r.user_id, "seed": cfg.seed, "upper_gap": hi})
            key = f"{spec.wideband}/{spec.pol_mode}/{codebook_label(spec.codebook)}/" \
                  f"{spec.subband.scheme}[{subband_label(spec.subband)}]"
            records.setdefault("upper_bound_violations", {})[key] = {
                "pooled_upper_gap": rep.upper_gap, "users": viol}
        row = base_row(cfg, spec, pipe.basis_codebook)
        row.update(wideband_bits=_single([r.wideband_bits for r in results], "wideband bits"),
                   subband_bits=_single([r.subband_bits for r in results], "subband bits"),
                   D_H=rep.D_H, D_B=rep.D_B, d_p=rep.d_p, lower_gap=rep.lower_gap,
                   upper_gap=rep.upper_gap, decomposition_residual=rep.decomposition_residual)
        rows.append((row, results))
    return rows


def run_distortion(cfg, channels, factory, threads, log, records):
    return [row for row, _ in _pipeline_rows(cfg, channels, factory, threads, log, records)]


def run_spectral_efficiency(cfg, channels, factory, threads, log, records):
    zf = ZFConfig(users=cfg.zf.users, snr_grid_db=tuple(cfg.zf.snr_db), power=cfg.zf.power,
                  drops=cfg.zf.drops)
    curves = []
    if cfg.perfect_csi:
        se = spectral_efficiency(channels, None, zf, cfg.seed, label="perfect")
        row = base_row(cfg)
        row.update(wideband="perfect", subband="perfect")
        curves.append((row, se, True))
    for row, results in _pipeline_rows(cfg, channels, factory, threads, log, records):
        se = spectral_efficiency(channels, [r.h_hat for r in results], zf, cfg.seed,
                                 label=row["wideband"])
        curves.append((row, se, False))
    if cfg.perfect_csi:
        ref = curves[0][1]
        for row, se, _ in curves[1:]:
            margin = float(np.min(ref - se))
            log.check("perfect_csi_dominance", margin >= -1e-12, margin,
                      f"{row['wideband']}/{row['subband']}: {se} vs perfect {ref}")
    rows = []
    for row, se, _ in curves:
        for snr, val in zip(cfg.zf.snr_db, se):
            r = dict(row)
            r.update(snr_db=float(snr), se=float(val))
            rows.append(r)
    return rows


def run_experiment(cfg, threads=1):
    """Run the experiment described by ``cfg``; raises InvariantViolation on failure."""
    channels = generate_channels(geometry(cfg), channel_model(cfg), cfg.seed, cfg.users)
    factory = CodebookFactory(cfg)
    log = InvariantLog()
    records = {}
    exp = cfg.experiment
    if exp == "wideband_vector":
        rows = run_wideband_vector(cfg, channels, factory, threads, log)
    elif exp == "projection":
        rows = run_projection(cfg, channels, factory, threads, log)
    elif exp == "spectral_efficiency":
        rows = run_spectral_efficiency(cfg, channels, factory, threads, log, records)
    else:
        rows = run_distortion(cfg, channels, factory, threads, log, records)
    return RunResult(rows=rows, invariants=log, records=records)
