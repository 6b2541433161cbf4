import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonmimo.errors import RankDeficient
from anonmimo.numerics import (RngStream, column_projector, pseudo_inverse, projection_complement,
                               sample_cscg)
from conftest import crandn


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(0, 6))
def test_projectors_match_numpy(seed, cols, extra):
    rng = np.random.default_rng(seed)
    H = crandn(rng, cols + extra + (extra == 0), cols)
    P = column_projector(H)
    Q = projection_complement(H)
    ref = H @ np.linalg.pinv(H)
    assert np.allclose(P, ref, atol=1e-9)
    assert np.allclose(P @ P, P, atol=1e-9)
    assert np.allclose(P, P.conj().T)
    assert np.allclose(P + Q, np.eye(H.shape[0]))
    assert np.allclose(Q @ H, 0, atol=1e-9)


def test_pseudo_inverse_is_left_inverse(rng):
    H = crandn(rng, 12, 8)
    assert np.allclose(pseudo_inverse(H) @ H, np.eye(8), atol=1e-10)


def test_pseudo_inverse_ill_conditioned_uses_stable_path(rng):
    U, _ = np.linalg.qr(crandn(rng, 6, 3))
    V, _ = np.linalg.qr(crandn(rng, 3, 3))
    H = U @ np.diag([1.0, 1e-4, 1e-7]) @ V.conj().T
    assert np.allclose(pseudo_inverse(H) @ H, np.eye(3), atol=1e-6)


@pytest.mark.parametrize("H", [np.zeros((4, 2)), np.ones((4, 2)), np.ones((2, 3))])
def test_rank_deficient(H):
    with pytest.raises(RankDeficient):
        pseudo_inverse(H)


def test_stream_determinism_and_independence():
    a = RngStream(7).substream("x", 1.5, 3).generator().standard_normal(5)
    b = RngStream(7).substream("x", 1.5, 3).generator().standard_normal(5)
    c = RngStream(7).substream("x", 1.5, 4).generator().standard_normal(5)
    d = RngStream(8).substream("x", 1.5, 3).generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_cscg_statistics():
    X = sample_cscg(RngStream(1), 400, 400, 2.5)
    assert abs(np.mean(np.abs(X) ** 2) - 2.5) < 0.03
    assert abs(np.mean(X.real ** 2) - np.mean(X.imag ** 2)) < 0.03
    assert abs(np.mean(X ** 2)) < 0.03  # circular symmetry
    with pytest.raises(ValueError):
        sample_cscg(RngStream(1), 2, 2, -1.0)
