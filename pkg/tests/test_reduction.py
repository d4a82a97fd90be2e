from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from romfbk.neural import identity_mlp, init_he
from romfbk.reduction import (PodBasis, Reducer, compute_pod, control_pod_componentwise, decode,
                              encode, minmax_normalization, pod_decode, pod_encode,
                              relative_error)

FAST = settings(max_examples=20, deadline=None)


def _decaying(rng, n=120, m=50, decay=0.8):
    U, _ = np.linalg.qr(rng.standard_normal((n, m)))
    V, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return U @ np.diag(decay ** np.arange(m)) @ V.T


# ---------------------------------------------------------------------------- POD

@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
@FAST
def test_exact_rank_reconstruction(seed, r):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, r)) @ rng.standard_normal((r, 30))
    b = compute_pod(X, r)
    assert np.max(np.abs(pod_decode(b, pod_encode(b, X.T)).T - X)) < 1e-10 * max(1, np.abs(X).max())


@given(st.integers(0, 2**32 - 1), st.integers(1, 49))
@FAST
def test_eckart_young_identity(seed, n):
    X = _decaying(np.random.default_rng(seed))
    b = compute_pod(X, n)
    R = pod_decode(b, pod_encode(b, X.T)).T
    mse = np.sum((X - R) ** 2) / X.shape[1]
    assert abs(mse - np.sum(b.singular_values[n:] ** 2) / X.shape[1]) < 1e-9


@given(st.integers(0, 2**32 - 1))
@FAST
def test_orthonormal_and_sorted(seed):
    b = compute_pod(_decaying(np.random.default_rng(seed)), 20)
    assert np.max(np.abs(b.modes.T @ b.modes - np.eye(20))) < 1e-10
    assert np.all(np.diff(b.singular_values) <= 0) and b.singular_values.min() >= 0


def test_error_monotone_in_modes():
    X = _decaying(np.random.default_rng(0))
    errs = []
    for n in (5, 10, 20, 40):
        b = compute_pod(X, n)
        errs.append(relative_error(X.T, pod_decode(b, pod_encode(b, X.T))))
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_energy_tolerance_picks_smallest_basis():
    X = _decaying(np.random.default_rng(1))
    b = compute_pod(X, energy_tol=1e-4)
    e = np.cumsum(b.singular_values**2) / np.sum(b.singular_values**2)
    assert e[b.n_modes - 1] >= 1 - 1e-4
    assert b.n_modes == 1 or e[b.n_modes - 2] < 1 - 1e-4


def test_pod_rejects_too_many_modes():
    with pytest.raises(ValueError):
        compute_pod(np.ones((10, 3)), 4)


def test_pod_projector_examples():
    rng = np.random.default_rng(2)
    b = compute_pod(_decaying(rng), 10)
    x = b.modes @ rng.standard_normal(10)
    assert np.max(np.abs(pod_decode(b, pod_encode(b, x)) - x)) < 1e-10
    assert not pod_encode(b, np.zeros(b.full_dim)).any()
    z = rng.standard_normal(10)
    assert np.max(np.abs(pod_encode(b, pod_decode(b, z)) - z)) < 1e-12
    with pytest.raises(ValueError):
        pod_encode(b, np.zeros(3))


def test_centered_pod_roundtrip():
    rng = np.random.default_rng(3)
    X = _decaying(rng) + 5.0
    b = compute_pod(X, 49, center=True)
    assert b.mean is not None
    assert np.allclose(pod_decode(b, pod_encode(b, X.T)).T, X, atol=1e-8)


def test_componentwise_control_pod():
    rng = np.random.default_rng(4)
    C = rng.standard_normal((100, 2, 90))
    b = control_pod_componentwise(C, 80)
    assert b.n_modes == 160 and b.full_dim == 180
    assert np.max(np.abs(b.modes.T @ b.modes - np.eye(160))) < 1e-10
    # block-diagonal: x-modes have no y support and vice versa
    assert not b.modes[90:, :80].any() and not b.modes[:90, 80:].any()
    u = C[0].copy()
    u[1] = 0.0
    coef = pod_encode(b, u.ravel())
    assert not coef[80:].any()


# ---------------------------------------------------------------------------- dispatch

def test_pod_reducer_dispatch_is_bitwise():
    rng = np.random.default_rng(5)
    b = compute_pod(_decaying(rng), 12)
    r = Reducer("POD", 0, pod=b)
    x = rng.standard_normal((4, b.full_dim))
    assert r.latent_dim == 12
    assert np.array_equal(encode(r, x), pod_encode(b, x))
    z = rng.standard_normal((4, 12))
    assert np.array_equal(decode(r, z), pod_decode(b, z))


def test_pod_ae_with_identity_networks_matches_pod():
    rng = np.random.default_rng(6)
    b = compute_pod(_decaying(rng), 10)
    r = Reducer("POD_AE", 10, pod=b, encoder=identity_mlp(10, 1), decoder=identity_mlp(10, 2),
                trained=True)
    x = rng.standard_normal((5, b.full_dim))
    assert np.max(np.abs(encode(r, x) - pod_encode(b, x))) < 1e-6
    z = rng.standard_normal((5, 10))
    assert np.max(np.abs(decode(r, z) - pod_decode(b, z))) < 1e-6


def test_reducer_invariants():
    b = compute_pod(_decaying(np.random.default_rng(7)), 10)
    with pytest.raises(ValueError):
        Reducer("POD", 10, pod=b, encoder=init_he([10, 3], 0))
    with pytest.raises(ValueError):
        Reducer("AE", 3, pod=b, encoder=init_he([10, 3], 0), decoder=init_he([3, 10], 1))
    with pytest.raises(ValueError):
        Reducer("POD_AE", 3, pod=b, encoder=init_he([9, 3], 0), decoder=init_he([3, 9], 1))
    with pytest.raises(ValueError):
        Reducer("PCA", 3, pod=b)


def test_untrained_network_use_raises():
    r = Reducer("AE", 3, encoder=init_he([10, 3], 0), decoder=init_he([3, 10], 1))
    with pytest.raises(RuntimeError):
        encode(r, np.zeros(10))


def test_latent_dims_follow_architecture():
    b = compute_pod(_decaying(np.random.default_rng(8)), 40)
    r = Reducer("POD_AE", 10, pod=b, encoder=init_he([40, 100, 10], 0),
                decoder=init_he([10, 100, 100, 40], 1), trained=True)
    assert encode(r, np.zeros((2, b.full_dim))).shape == (2, 10)


def test_minmax_normalization():
    d = np.array([[0.0, 5.0, 1.0], [2.0, 5.0, 3.0]])
    lo, sc = minmax_normalization(d)
    assert np.array_equal(lo, [0, 5, 1]) and np.array_equal(sc, [2, 1, 2])
    lo, sc = minmax_normalization(d, per_feature=False)
    assert np.all(lo == 0) and np.all(sc == 5)


# ---------------------------------------------------------------------------- errors

def test_relative_error_examples():
    x = np.random.default_rng(9).standard_normal((4, 7))
    assert relative_error(x, x) == 0.0
    assert relative_error(x, np.zeros_like(x)) == 1.0
    assert relative_error(x[0], 0.9 * x[0]) == pytest.approx(0.1, rel=1e-14)


def test_relative_error_skips_zero_rows(caplog):
    t = np.array([[1.0, 0.0], [0.0, 0.0]])
    with caplog.at_level(logging.WARNING):
        assert relative_error(t, np.zeros_like(t)) == 1.0
    assert "zero-norm" in caplog.text
    with pytest.raises(ValueError):
        relative_error(t, np.zeros((3, 2)))
