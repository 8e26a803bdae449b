import numpy as np
import pytest
from hypothesis import given, strategies as st

from kickwave import kernels, _pure

BACKENDS = ["pure"] + (["compiled"] if kernels.BACKEND == "compiled" else [])

# Published known-answer vectors for Philox4x32-10 (counter, key, output).
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("ctr,key,expect", KAT)
def test_philox_known_answers(backend, ctr, key, expect):
    out = kernels.philox4x32(*ctr, *key, backend=backend)
    assert tuple(int(v) for v in out[0]) == expect


def test_philox_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    c = rng.integers(0, 2**32, (6, 50), dtype=np.uint64).astype(np.uint32)
    batch = kernels.philox4x32(*c)
    for j in range(50):
        one = kernels.philox4x32(*(c[:, j:j + 1]))
        assert np.array_equal(one[0], batch[j])


@pytest.mark.parametrize("backend", BACKENDS)
def test_envelope_zero_input_is_identity(backend):
    U, arg = kernels.lower_envelope(np.zeros(64), 0.1, backend=backend)
    assert np.all(U == 0.0)
    assert np.array_equal(arg, np.arange(64))


@pytest.mark.parametrize("backend", BACKENDS)
def test_envelope_quadratic_infimal_convolution(backend):
    h = 2.0**-6
    x = np.arange(-256, 257) * h
    U, _ = kernels.lower_envelope(0.5 * x * x, h, backend=backend)
    inner = np.abs(x) < 2.0
    assert np.max(np.abs(U[inner] - 0.25 * x[inner] ** 2)) <= h * h


@pytest.mark.parametrize("backend", BACKENDS)
def test_envelope_ties_pick_rightmost(backend):
    # V = 0 at nodes 0 and 2, x = node 1 is equidistant
    V = np.array([0.0, 10.0, 0.0])
    _, arg = kernels.lower_envelope(V, 1.0, backend=backend)
    assert arg[1] == 2


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=120),
       st.sampled_from([2.0**-6, 0.1, 1.0]))
def test_envelope_matches_naive_scan(vals, h):
    V = np.array(vals)
    Un, an = kernels.naive_envelope(V, h)
    for b in BACKENDS:
        U, arg = kernels.lower_envelope(V, h, backend=b)
        assert np.all(np.abs(U - Un) <= 1e-12 * (1 + np.abs(Un)))
        assert np.all(np.diff(arg) >= 0)
        # argmin attains the minimum
        d = (np.arange(len(V)) - arg) * h
        assert np.all(np.abs(V[arg] + 0.5 * d * d - U) <= 1e-12 * (1 + np.abs(U)))


def test_naive_envelope_rightmost_tie():
    U, arg = kernels.naive_envelope(np.array([0.0, 10.0, 0.0]), 1.0)
    assert arg[1] == 2 and U[1] == 0.5


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 7, 128]))
def test_naive_pruning_matches_full_matrix(seed, block):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 400))
    V = rng.integers(-3, 4, n) * rng.choice([1e-3, 0.5, 40.0])  # plenty of ties
    h = 2.0**-4
    x = np.arange(n) * h
    C = V[None, :] + 0.5 * (x[:, None] - x[None, :]) ** 2
    arg_full = n - 1 - np.argmin(C[:, ::-1], axis=1)
    U, arg = kernels.naive_envelope(V, h, block=block)
    assert np.array_equal(U, C.min(axis=1))
    assert np.array_equal(arg, arg_full)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled kernels not built")
def test_backends_agree_bitwise():
    rng = np.random.default_rng(5)
    V = rng.normal(size=3000).cumsum()
    a = kernels.lower_envelope(V, 2.0**-6, backend="pure")
    b = kernels.lower_envelope(V, 2.0**-6, backend="compiled")
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    xs = np.arange(-200, 200) * 2.0**-6
    eta = rng.uniform(-3, 3, 20)
    xi = rng.uniform(-1, 1, 20)
    kap = rng.uniform(0.05, 1, 20)
    for order in (0, 1, 2):
        pa = kernels.splat_bumps(xs, 2.0**-6, eta, xi, kap, order, backend="pure")
        pb = kernels.splat_bumps(xs, 2.0**-6, eta, xi, kap, order, backend="compiled")
        for u, v in zip(pa, pb):
            assert (u is None and v is None) or np.array_equal(u, v)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.backend_module("gpu")


def test_pure_module_is_importable_standalone():
    assert callable(_pure.lower_envelope)
