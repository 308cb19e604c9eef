"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import functools
import time

import numpy as np
import pytest

from conftest import crandn
from oracles import (ext2_brute_force, int5_brute_force, line_brute_force, pcb_brute_force,
                     weighted_d2)
from modcsi.channel import ArrayGeometry, ClusterModelConfig, generate_user_channels
from modcsi.cli import render_csv
from modcsi.codebook import (LineCodebook, ProductCodebook, pcb_quantize, quantize_line,
                             random_line_codebook, tsodft, vector_lloyd_train)
from modcsi.config import load_config, oversampling_split, preset_names
from modcsi.errors import InvariantViolation
from modcsi.evaluate import (covering_radius_estimate, decomposition_check, radial_alignment,
                             swp_vs_owp)
from modcsi.experiments import run_experiment
from modcsi.linalg import chordal_distance, eigh_topk, orthonormalize
from modcsi.subband import BitAllocationParams, bit_count, quantize_ext2, quantize_int5

# Regression values of the 200-user presets (seed 7), recorded on the first run.
SUBBAND_D_B = {
    ("ideal", "ext2"): 0.09470926869311608,
    ("ideal", "int5"): 0.058797220646486605,
    ("ideal", "pcb"): 0.05277475301346758,
    ("owp", "ext2"): 0.10964244739149734,
    ("owp", "int5"): 0.07768695620360805,
    ("owp", "pcb"): 0.071117822461672,
}
SPECTRAL_EFFICIENCY = {
    "perfect": (0.8476412592360524, 3.1422809173830157, 6.3018168952434355),
    "ind": (0.6529946227489482, 2.3607829432793213, 3.797335448846971),
    "owp": (0.6801227788347775, 2.4654407249832886, 4.01084140270122),
    "swp": (0.6976393460653331, 2.5275734711966007, 4.132011211591729),
}
REGRESSION_RTOL = 1e-6


def verdict(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


@functools.lru_cache(maxsize=None)
def preset_run(name):
    cfg, _ = load_config(name)
    t0 = time.perf_counter()
    try:
        result = run_experiment(cfg)
    except InvariantViolation as err:
        return cfg, None, time.perf_counter() - t0, err
    return cfg, result, time.perf_counter() - t0, None


def test_criterion_1_decomposition_identity():
    t0 = time.perf_counter()
    geom = ArrayGeometry(n_h=4, n_v=2, n_p=1)
    model = ClusterModelConfig(n_subbands=16)
    rng = np.random.default_rng(2024)
    worst, n = 0.0, 60
    for i in range(n):
        ch = generate_user_channels(geom, model, seed=100 + i)
        h = ch.subbands
        k = int(rng.integers(2, 6))
        if i % 2:
            r = h.T @ h.conj()
            w = eigh_topk(0.5 * (r + r.conj().T), k).vectors
        else:
            w = orthonormalize(crandn(rng, geom.n_t, k))
        coeffs = crandn(rng, int(rng.integers(2, 40)), k)
        words = coeffs @ w.T
        cb = LineCodebook(words / np.linalg.norm(words, axis=1)[:, None])
        worst = max(worst, decomposition_check(ch, w, cb).residual)
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-9 and elapsed < 30,
            f"{n} triples, worst residual {worst:.2e} (<= 1e-9), {elapsed:.1f} s (< 30 s)")


def _bound_rows():
    checked, problems, violations = 0, [], []
    for name in preset_names():
        cfg, result, _, err = preset_run(name)
        if err is not None:
            problems.append(f"{name}: {err.name}")
            continue
        for row in result.rows:
            if row["D_H"] == "" or row["wideband"] not in ("owp", "swp", "ind"):
                continue
            d_h, d_b, d_p = row["D_H"], row["D_B"], row["d_p"]
            if row["wideband"] == "ind":
                if d_b + d_p - d_h < 0:
                    violations.append((name, row["subband"], cfg.seed, d_b + d_p - d_h))
                continue
            checked += 1
            if not d_p - 1e-9 <= d_h <= d_b + d_p + 1e-9:
                problems.append(f"{name}/{row['wideband']}/{row['subband']}")
        for key, rec in result.records.get("upper_bound_violations", {}).items():
            violations.extend((name, key, cfg.seed, u["upper_gap"]) for u in rec["users"])
    return checked, problems, violations


def test_criterion_2_distortion_bounds():
    checked, problems, violations = _bound_rows()
    detail = (f"{checked} OWP/SWP pipeline rows in bounds, problems {problems}; "
              f"{len(violations)} IND upper-bound violations recorded")
    if violations:
        detail += f" (e.g. {violations[0][0]} {violations[0][1]} seed {violations[0][2]}, " \
                  f"gap {violations[0][3]:.3e})"
    verdict(2, checked > 0 and not problems and bool(violations), detail)


def test_criterion_3_isometry():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10_000):
        k = int(rng.integers(1, 9))
        n = int(rng.integers(k, 33))
        w = orthonormalize(crandn(rng, n, k))
        x, y = crandn(rng, k), crandn(rng, k)
        worst = max(worst, abs(chordal_distance(w @ x, w @ y) - chordal_distance(x, y)))
    v = np.array([[1, 0], [0.9, 0.2], [0, 0]], dtype=complex)
    x, y = np.array([1, 1j]), np.array([1, -1j])
    gap = abs(chordal_distance(v @ x, v @ y) - chordal_distance(x, y))
    verdict(3, worst <= 1e-10 and gap > 1e-3,
            f"10^4 pairs worst isometry error {worst:.2e} (<= 1e-10); "
            f"non-orthogonal gap {gap:.3f} (> 1e-3)")


def test_criterion_4_swp_beats_owp():
    cb = random_line_codebook(4, 256, seed=11)
    radius = covering_radius_estimate(cb, 20_000, seed=1)
    res = swp_vs_owp(cb, 2, 200, seed=5)
    reports = []
    ok_tsodft = True
    for omega in (4, 16):
        t = swp_vs_owp(tsodft((2, 2), oversampling_split(omega), chirp=False), 2, 200, seed=5)
        ok_tsodft &= t.mean_swp < t.mean_owp
        reports.append(f"TSODFT w={omega}: SWP {t.mean_swp:.4f} OWP {t.mean_owp:.4f} "
                       f"p {t.p_value:.1e}")
    ok = radius <= 1 / np.sqrt(2) and res.mean_swp < res.mean_owp and res.p_value < 0.01
    verdict(4, ok and ok_tsodft,
            f"random 256-word codebook, max error {radius:.3f} (<= 0.707), 200 covariances: "
            f"SWP {res.mean_swp:.4f} < OWP {res.mean_owp:.4f}, sign test p {res.p_value:.1e}; "
            + "; ".join(reports))


def test_criterion_5_bit_counts():
    ext2 = [bit_count("ext2", 8, BitAllocationParams(m=m, b_l=3, b_s=2, eta=2.0)) for m in (5, 6, 7)]
    int5 = [bit_count("int5", 8, BitAllocationParams(m=m, b_l=3, b_s=2, eta=5.0)) for m in (2, 6)]
    verdict(5, ext2 == [24, 26, 28] and int5 == [24, 28],
            f"EXT2 m=5,6,7 -> {ext2}; INT5 m=2,6 -> {int5}")


def test_criterion_6_optimality_oracles():
    rng = np.random.default_rng(6)
    mism = dict.fromkeys(("line", "pcb", "ext2", "int5"), 0)
    line_cb = random_line_codebook(6, 128, seed=2)
    pcbs = [ProductCodebook(random_line_codebook(2, 8, seed=3), blocks=2, phase_bits=2),
            ProductCodebook(random_line_codebook(2, 4, seed=4), blocks=3, phase_bits=2),
            ProductCodebook(vector_lloyd_train(2, 16, n_samples=2000, iters=10, seed=5),
                            blocks=3, phase_bits=0)]
    for i in range(100):
        u = crandn(rng, 6)
        res = quantize_line(u, line_cb)
        idx, d2 = line_brute_force(u, line_cb.words)
        mism["line"] += res.index != idx or abs(res.distortion ** 2 - d2) > 1e-12

        pcb = pcbs[i % len(pcbs)]
        x, wts = crandn(rng, pcb.dim), rng.uniform(0.1, 1.0, pcb.dim)
        oracle, _ = pcb_brute_force(x, wts, pcb)
        mism["pcb"] += abs(pcb_quantize(x, wts, pcb).distortion - oracle) > 1e-12

        c, s = crandn(rng, 2), rng.uniform(0.05, 1.0, 2)
        m = i % 2
        fb = quantize_ext2(c, s, BitAllocationParams(m=m, b_l=3, b_s=2, eta=2.0))
        mism["ext2"] += abs(fb.distortion - ext2_brute_force(c, s, m, 3, 2)) > 1e-12
        mism["ext2"] += abs(fb.distortion - weighted_d2(c, fb.c_hat, s)) > 1e-12
        fb = quantize_int5(c, s, BitAllocationParams(m=m, b_l=3, b_s=2, eta=5.0))
        mism["int5"] += abs(fb.distortion - int5_brute_force(c, s, m, 3, 2)) > 1e-12
    verdict(6, not any(mism.values()),
            f"100 instances each, mismatches vs brute force {({k: int(v) for k, v in mism.items()})}")


def test_criterion_7_scheme_orderings():
    _, sub, t_sub, err_sub = preset_run("subband")
    _, se, t_se, err_se = preset_run("spectral_efficiency")
    if err_sub or err_se:
        verdict(7, False, f"invariant violated: {err_sub or err_se}")
    d_b = {(r["wideband"], r["subband"]): r["D_B"] for r in sub.rows}
    curves = {}
    for r in se.rows:
        curves.setdefault(r["wideband"], []).append(r["se"])
    order_db = all(d_b[(w, "pcb")] <= d_b[(w, "int5")] <= d_b[(w, "ext2")]
                   for w in ("ideal", "owp"))
    order_se = all(a >= b >= c for a, b, c in zip(curves["swp"], curves["owp"], curves["ind"]))
    perfect = all(p >= x for name in ("swp", "owp", "ind")
                  for p, x in zip(curves["perfect"], curves[name]))
    regress = all(np.isclose(d_b[key], val, rtol=REGRESSION_RTOL, atol=0)
                  for key, val in SUBBAND_D_B.items()) and \
        all(np.allclose(curves[key], val, rtol=REGRESSION_RTOL, atol=0)
            for key, val in SPECTRAL_EFFICIENCY.items())
    elapsed = t_sub + t_se
    fmt = ", ".join(f"{w}/{q} {v:.4f}" for (w, q), v in sorted(d_b.items()))
    se_fmt = "; ".join(f"{k} " + "/".join(f"{v:.3f}" for v in curves[k])
                       for k in ("perfect", "swp", "owp", "ind"))
    verdict(7, order_db and order_se and perfect and regress and elapsed < 600,
            f"D_B PCB<=INT5<=EXT2 {order_db} ({fmt}); SE SWP>=OWP>=IND {order_se}, "
            f"perfect dominates {perfect} ({se_fmt} at 0/10/20 dB); "
            f"regression match {regress}; {elapsed:.0f} s (< 600 s)")


def test_criterion_8_radial_errors():
    cb = random_line_codebook(4, 64, seed=1)
    dist = radial_alignment(cb, 2, 10_000, seed=1)
    verdict(8, dist <= 0.05, f"alignment chordal distance {dist:.4f} (<= 0.05) at 10^4 samples")


def _reduced(cfg):
    update = {"users": min(cfg.users, 12)}
    if cfg.experiment == "spectral_efficiency":
        update["zf"] = cfg.zf.model_copy(update={"drops": 10})
    return cfg.model_copy(update=update)


@pytest.mark.parametrize("threads", [2, 4])
def test_criterion_9_determinism(threads):
    same, names = [], preset_names()
    for name in names:
        cfg, _ = load_config(name)
        if name != "minimal":
            cfg = _reduced(cfg)
        one = render_csv(cfg, run_experiment(cfg, threads=1).rows).encode()
        many = render_csv(cfg, run_experiment(cfg, threads=threads).rows).encode()
        same.append(one == many)
    verdict(9, all(same), f"threads 1 vs {threads}: byte-identical CSV for "
            f"{sum(same)}/{len(names)} presets (minimal at full size, others at 12 users)")
