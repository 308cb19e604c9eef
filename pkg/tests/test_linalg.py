import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn, random_psd
from modcsi.errors import DegenerateBasisError, DomainError
from modcsi.linalg import (chordal_distance, eigh_topk, is_orthonormal, jacobi_eigh,
                           orthonormalize, phase_normalize, principal_eigenvector, projector,
                           top_eigenvector, weighted_chordal)

seeds = st.integers(0, 2 ** 32 - 1)


def test_chordal_examples():
    e1, e2 = np.array([1, 0]), np.array([0, 1])
    assert chordal_distance(e1, e1 * np.exp(1j * np.pi / 3)) == pytest.approx(0, abs=1e-12)
    assert chordal_distance(e1, e2) == pytest.approx(1.0)
    assert chordal_distance([1, 0], np.array([1, 1]) / np.sqrt(2)) == pytest.approx(1 / np.sqrt(2))


def test_chordal_zero_vector():
    with pytest.raises(DomainError):
        chordal_distance([0, 0], [1, 0])


@given(seeds)
def test_chordal_scale_phase_invariance(seed):
    rng = np.random.default_rng(seed)
    x, y = crandn(rng, 5), crandn(rng, 5)
    a, b = crandn(rng, 1)[0], crandn(rng, 1)[0]
    d = chordal_distance(x, y)
    assert 0.0 <= d <= 1.0
    assert chordal_distance(a * x, b * y) == pytest.approx(d, abs=1e-12)
    assert chordal_distance(y, x) == pytest.approx(d, abs=1e-15)


def test_weighted_chordal_hand_value():
    c = np.array([1, 1]) / np.sqrt(2)
    assert weighted_chordal(c, [1, 0], [2, 1]) == pytest.approx(0.2, abs=1e-12)
    # brute-force oracle: direct formula on the weighted vectors
    x, y = np.array([2, 1]) * c, np.array([2, 0])
    oracle = 1 - abs(np.vdot(x, y)) ** 2 / (np.vdot(x, x).real * np.vdot(y, y).real)
    assert weighted_chordal(c, [1, 0], [2, 1]) == pytest.approx(oracle, abs=1e-15)


@given(seeds)
def test_weighted_chordal_identity_weights(seed):
    rng = np.random.default_rng(seed)
    c, ch = crandn(rng, 4), crandn(rng, 4)
    assert weighted_chordal(c, ch, np.ones(4)) == pytest.approx(chordal_distance(c, ch) ** 2,
                                                                abs=1e-12)
    assert weighted_chordal(c, c, rng.uniform(0.1, 1, 4)) == pytest.approx(0, abs=1e-12)


def test_weighted_chordal_zero_vector():
    with pytest.raises(DomainError):
        weighted_chordal([1, 0], [1, 0], [0, 1])


def test_orthonormalize_examples():
    e1, e2 = np.eye(2)
    w = orthonormalize(np.column_stack([e1, (e1 + e2) / np.sqrt(2)]))
    assert np.allclose(w, np.eye(2), atol=1e-12)
    q, _ = np.linalg.qr(crandn(np.random.default_rng(0), 5, 3))
    assert np.allclose(orthonormalize(q), q, atol=1e-12)


def test_orthonormalize_degenerate_names_column():
    v = np.array([[1, 0, 1], [0, 1, 1], [0, 0, 0]], dtype=complex)
    with pytest.raises(DegenerateBasisError) as err:
        orthonormalize(v)
    assert err.value.column == 2


@given(seeds)
def test_orthonormalize_properties(seed):
    rng = np.random.default_rng(seed)
    v = crandn(rng, 6, 3)
    w = orthonormalize(v)
    assert np.allclose(w.conj().T @ w, np.eye(3), atol=1e-10)
    assert np.allclose(w @ (w.conj().T @ v), v, atol=1e-10)
    assert np.allclose(w[:, 0], v[:, 0] / np.linalg.norm(v[:, 0]), atol=1e-12)
    assert np.allclose(orthonormalize(w), w, atol=1e-12)
    # matches QR with positive diagonal
    q, r = np.linalg.qr(v)
    q = q * (np.diag(r) / np.abs(np.diag(r))).conj()[None, :] ** -1
    assert np.allclose(w, q, atol=1e-10)


def test_projector_examples():
    assert np.allclose(projector(np.array([[1], [0]])), np.diag([1, 0]))
    q, _ = np.linalg.qr(crandn(np.random.default_rng(1), 3, 3))
    assert np.allclose(projector(q), np.eye(3), atol=1e-12)


@given(seeds)
def test_projector_properties(seed):
    rng = np.random.default_rng(seed)
    v = crandn(rng, 6, 3)
    p = projector(v)
    assert np.allclose(p @ p, p, atol=1e-10)
    assert np.allclose(p, p.conj().T, atol=1e-12)
    assert np.trace(p).real == pytest.approx(3, abs=1e-10)
    assert np.allclose(p, projector(orthonormalize(v)), atol=1e-10)


def test_projector_rank_deficient():
    with pytest.raises(DegenerateBasisError):
        projector(np.array([[1, 2], [1, 2]], dtype=complex))


def test_eigh_topk_diagonal():
    eb = eigh_topk(np.diag([0.7, 0.2, 0.1]), 2)
    assert np.allclose(eb.values, [0.7, 0.2])
    assert np.allclose(np.abs(eb.vectors), np.eye(3)[:, :2])


def test_eigh_topk_degenerate_spectrum():
    r = np.eye(4) / 4
    eb = eigh_topk(r, 2)
    assert is_orthonormal(eb.vectors)
    assert np.linalg.norm(r @ eb.vectors - eb.vectors * eb.values) <= 1e-8


@given(seeds, st.sampled_from(["lapack", "jacobi"]))
def test_eigh_topk_against_jacobi_oracle(seed, method):
    rng = np.random.default_rng(seed)
    r = random_psd(rng, 8)
    eb = eigh_topk(r, 3, method=method)
    vals, vecs = jacobi_eigh(r)
    order = np.argsort(-vals)
    assert np.allclose(eb.values, vals[order[:3]], atol=1e-12)
    assert np.all(np.diff(eb.values) <= 0)
    assert eb.values.sum() <= np.trace(r).real + 1e-10
    lam_max = eb.values[0]
    for j in range(3):
        u = eb.vectors[:, j]
        assert np.linalg.norm(r @ u - eb.values[j] * u) <= 1e-8 * lam_max
        assert chordal_distance(u, vecs[:, order[j]]) <= 1e-6
        # phase convention: largest-magnitude entry real positive
        k = np.argmax(np.abs(u))
        assert abs(u[k].imag) < 1e-12 and u[k].real > 0


def test_eigh_topk_eckart_young(rng):
    r = random_psd(rng, 6)
    eb = eigh_topk(r, 2)
    approx = (eb.vectors * eb.values) @ eb.vectors.conj().T
    best = np.linalg.norm(r - approx)
    for _ in range(20):
        q = orthonormalize(crandn(rng, 6, 2))
        other = q @ (q.conj().T @ r @ q) @ q.conj().T
        assert best <= np.linalg.norm(r - other) + 1e-12


def test_principal_eigenvector_examples():
    e, lam = principal_eigenvector(np.diag([0.9, 0.1]))
    assert lam == pytest.approx(0.9)
    assert chordal_distance(e, [1, 0]) < 1e-8
    x = np.array([1, 2j, -1])
    e, lam = principal_eigenvector(np.outer(x, x.conj()))
    assert chordal_distance(e, x) < 1e-8
    assert lam == pytest.approx(np.vdot(x, x).real)


@given(seeds)
def test_principal_eigenvector_vs_eigh(seed):
    rng = np.random.default_rng(seed)
    r = random_psd(rng, 16)
    e, lam = top_eigenvector(r)
    ref = eigh_topk(r, 1)
    assert chordal_distance(e, ref.vectors[:, 0]) <= 1e-6
    assert lam == pytest.approx(ref.values[0], abs=1e-10)


def test_phase_normalize_first_peak():
    x = np.array([1j, -1j, 0.5]) / np.sqrt(2.25)
    y = phase_normalize(x)
    assert y[0].real > 0 and abs(y[0].imag) < 1e-15
