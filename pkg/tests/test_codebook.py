import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn
from oracles import pcb_brute_force
from modcsi.codebook import (MAX_CODEBOOK_SIZE, LineCodebook, ProductCodebook, VectorCodebook,
                             binary_chirp_2d, dft_oversampled, is_parametric, load_codebook,
                             lloyd_train, pcb_quantize, quantize_line, quantize_rows,
                             random_line_codebook, ranked_indices, save_codebook, tensored,
                             tsodft, vector_lloyd_train)
from modcsi.errors import DomainError
from modcsi.linalg import chordal_distance, weighted_chordal

seeds = st.integers(0, 2 ** 32 - 1)


def same_lines(a, b):
    return all(min(chordal_distance(x, y) for y in b) < 1e-12 for x in a)


def test_dft_examples():
    cb = dft_oversampled(2, 1)
    assert same_lines(cb.words, np.array([[1, 1], [1, -1]]) / np.sqrt(2))
    cb = dft_oversampled(2, 2)
    assert cb.size == 4
    assert same_lines(np.array([[1, 1j], [1, -1j]]) / np.sqrt(2), cb.words)
    for n, o in [(1, 1), (3, 4), (8, 4)]:
        assert dft_oversampled(n, o).size == n * o


def test_dft_entries():
    cb = dft_oversampled(4, 2)
    m, k = 3, np.arange(4)
    expected = np.exp(2j * np.pi * k * m / 8) / 2
    assert chordal_distance(cb.words[3], expected) < 1e-12


def test_chirp():
    cb = binary_chirp_2d()
    assert (cb.size, cb.dim, cb.bits) == (4, 2, 2)
    g = np.abs(cb.words.conj() @ cb.words.T) ** 2
    off = g[~np.eye(4, dtype=bool)]
    assert off.max() == pytest.approx(0.5)
    assert np.all(np.isclose(off, 0.5) | np.isclose(off, 0.0))


def test_chirp_quantization_brute_force():
    cb = binary_chirp_2d()
    u = np.array([1, np.exp(1j * np.pi / 4)]) / np.sqrt(2)
    res = quantize_line(u, cb)
    oracle = [1 - abs(np.vdot(w, u)) ** 2 for w in cb.words]
    assert res.distortion ** 2 == pytest.approx(min(oracle), abs=1e-14)
    assert res.index == int(np.argmin(oracle))


def test_tensored_counts():
    full = tsodft((8, 2), (4, 4))
    assert full.dim == 32 and full.size == 4 * 16 * 16
    parts = [dft_oversampled(8, 2), dft_oversampled(2, 2), binary_chirp_2d()]
    assert np.log2(tensored(parts).size) == sum(np.log2(p.size) for p in parts)
    assert tensored(parts).bits == 4 + 2 + 2


def test_tensored_size_8_2_2_is_32_256():
    parts = [dft_oversampled(8, 2), dft_oversampled(2, 2),
             LineCodebook(np.array([[1, 1], [1, -1], [1, 1j], [1, -1j]]) / np.sqrt(2))]
    assert [p.size for p in parts] == [16, 4, 4]
    cb = tensored(parts)
    assert (cb.dim, cb.size) == (32, 256)


def test_tensored_trivial_part_and_factors():
    a = dft_oversampled(3, 2)
    one = LineCodebook(np.array([[1.0 + 0j]]))
    t = tensored([a, one])
    assert t.size == a.size and same_lines(t.words, a.words)
    b = binary_chirp_2d()
    t = tensored([a, b])
    for i in range(a.size):
        for j in range(b.size):
            m = t.words[i * b.size + j].reshape(3, 2)
            assert np.linalg.matrix_rank(m, tol=1e-10) == 1
            assert chordal_distance(m[:, 0] if abs(m[0, 0]) > 0 else m[:, 1], a.words[i]) < 1e-7


def test_tensored_cap():
    with pytest.raises(ValueError):
        tensored([dft_oversampled(8, 16)] * 3, cap=1000)
    assert MAX_CODEBOOK_SIZE == 2 ** 20


def test_codebook_invariants():
    with pytest.raises(ValueError):
        LineCodebook(np.array([[1, 1]], dtype=complex))
    with pytest.raises(ValueError):
        LineCodebook(np.array([[1, 0], [1j, 0]], dtype=complex))
    cb = tsodft((4, 2), (2, 2))
    assert np.allclose(np.linalg.norm(cb.words, axis=1), 1, atol=1e-12)


def test_quantize_line_examples():
    cb = dft_oversampled(2, 1)
    res = quantize_line([1, 0], cb)
    assert res.index == 0 and res.distortion == pytest.approx(1 / np.sqrt(2))
    w = cb.words[1]
    res = quantize_line(w * 1j, cb)
    assert res.index == 1 and res.distortion == pytest.approx(0, abs=1e-7)
    with pytest.raises(ValueError):
        quantize_line([1, 0, 0], cb)
    with pytest.raises(DomainError):
        quantize_line([0, 0], cb)


@given(seeds)
def test_quantize_line_scan_oracle(seed):
    rng = np.random.default_rng(seed)
    cb = random_line_codebook(4, 16, seed=seed % 1000)
    u = crandn(rng, 4)
    res = quantize_line(u, cb)
    scan = [chordal_distance(u, w) for w in cb.words]
    assert res.index == int(np.argmin(scan))
    assert res.distortion == pytest.approx(min(scan), abs=1e-12)
    assert all(res.distortion <= d + 1e-12 for d in scan)
    idx, dist = quantize_rows(u[None, :], cb)
    assert idx[0] == res.index and dist[0] == pytest.approx(res.distortion, abs=1e-12)
    ranked = ranked_indices(u, cb, 3)
    assert ranked[0] == res.index
    assert scan[ranked[1]] >= scan[ranked[0]] - 1e-15


def test_lloyd_trivial_cases():
    x = np.array([1, 1j, 0]) / np.sqrt(2)
    samples = np.array([x * np.exp(1j * t) for t in range(5)])
    cb = lloyd_train(samples, 1, iters=5)
    assert chordal_distance(cb.words[0], x) < 1e-12
    distinct = random_line_codebook(3, 6, seed=1).words
    cb, trace = lloyd_train(distinct, 6, iters=5, return_trace=True)
    assert trace[-1] == pytest.approx(0, abs=1e-12)
    with pytest.raises(ValueError):
        lloyd_train(distinct, 7)


def test_lloyd_monotone_on_clusters():
    rng = np.random.default_rng(3)
    centers = random_line_codebook(4, 4, seed=9).words
    samples = np.concatenate([c + 0.15 * crandn(rng, 16, 4) for c in centers])
    cb, trace = lloyd_train(samples, 4, iters=30, seed=2, return_trace=True)
    assert len(trace) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert trace[-1] <= trace[0]
    again = lloyd_train(samples, 4, iters=30, seed=2)
    assert np.array_equal(cb.words, again.words)


@given(seeds)
def test_serialization_round_trip(seed):
    cb = random_line_codebook(3, 5, seed=seed % 10000)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "cb.bin"
        save_codebook(path, cb)
        back = load_codebook(path)
    assert np.array_equal(back.words, cb.words)
    assert back.label == cb.label and back.descriptor == cb.descriptor


def test_parametric_serialization(tmp_path):
    cb = tsodft((4, 2), (2, 2))
    assert is_parametric(cb.descriptor)
    save_codebook(tmp_path / "p.bin", cb, params_only=True)
    back = load_codebook(tmp_path / "p.bin")
    assert np.array_equal(back.words, cb.words)
    with pytest.raises(ValueError):
        save_codebook(tmp_path / "x.bin", random_line_codebook(2, 3, 0), params_only=True)


def test_pcb_single_block_is_exhaustive():
    comp = random_line_codebook(2, 8, seed=4)
    pcb = ProductCodebook(comp, blocks=1, phase_bits=2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, w = crandn(rng, 2), rng.uniform(0.2, 1, 2)
        res = pcb_quantize(x, w, pcb)
        oracle = min(1 - abs(np.vdot(w * c, x)) ** 2 / (np.vdot(w * c, w * c).real
                                                        * np.vdot(x, x).real)
                     for c in comp.words)
        assert res.distortion == pytest.approx(oracle, abs=1e-12)


def test_pcb_exact_representability():
    comp = random_line_codebook(2, 8, seed=5)
    pcb = ProductCodebook(comp, blocks=2, phase_bits=3)
    x = np.concatenate([comp.words[3], np.exp(2j * np.pi * 5 / 8) * comp.words[6]])
    res = pcb_quantize(x, np.ones(4), pcb)
    assert res.distortion == pytest.approx(0, abs=1e-12)
    assert res.index == ((3, 6), (0, 5))


@pytest.mark.parametrize("component", ["line", "vector"])
def test_pcb_matches_exhaustive_k4(component):
    comp = random_line_codebook(2, 8, seed=6) if component == "line" \
        else vector_lloyd_train(2, 8, n_samples=2000, iters=20, seed=1)
    pcb = ProductCodebook(comp, blocks=2, phase_bits=3)
    rng = np.random.default_rng(7)
    for _ in range(25):
        x, w = crandn(rng, 4), rng.uniform(0.1, 1, 4)
        res = pcb_quantize(x, w, pcb)
        oracle, _ = pcb_brute_force(x, w, pcb)
        assert res.distortion == pytest.approx(oracle, abs=1e-12)
        c = w * res.word
        assert res.distortion == pytest.approx(chordal_distance(x, c) ** 2, abs=1e-12)


def test_pcb_bits_and_word():
    comp = vector_lloyd_train(2, 64, n_samples=4000, iters=20, seed=1)
    pcb = ProductCodebook(comp, blocks=4, phase_bits=3)
    assert pcb.bits == 4 * 6 + 3 * 3 == 33
    assert pcb.dim == 8
    w = pcb.word((0, 1, 2, 3), (0, 1, 2, 3))
    assert np.linalg.norm(w) == pytest.approx(1)


def test_pcb_weighted_metric_matches_weighted_chordal():
    comp = random_line_codebook(2, 4, seed=2)
    pcb = ProductCodebook(comp, blocks=2, phase_bits=2)
    rng = np.random.default_rng(1)
    c, s = crandn(rng, 4), rng.uniform(0.2, 1, 4)
    res = pcb_quantize(s * c, s, pcb)
    assert res.distortion == pytest.approx(weighted_chordal(c, res.word, s), abs=1e-12)


def test_vector_codebook_checks():
    with pytest.raises(ValueError):
        VectorCodebook(np.zeros((1, 2), dtype=complex))
    with pytest.raises(ValueError):
        VectorCodebook(np.array([[1, 0], [1, 0]], dtype=complex))
    a = vector_lloyd_train(2, 16, n_samples=3000, iters=20, seed=3)
    b = vector_lloyd_train(2, 16, n_samples=3000, iters=20, seed=3)
    assert np.array_equal(a.words, b.words) and a.bits == 4
