import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safempc import neural_cost as nc

ARCH = nc.NetArchitecture((4, 7, 1))
X_D = np.array([np.pi, np.pi, 0.0, 0.0])
U_D = np.array([0.0])


def reference_forward(theta, sizes, x):
    """Second, independently written forward pass used as an oracle."""
    pos = 0
    z = np.asarray(x, dtype=float)
    n_layers = len(sizes) - 1
    for li in range(n_layers):
        n_in, n_out = sizes[li], sizes[li + 1]
        w = np.array(theta[pos:pos + n_in * n_out]).reshape(n_out, n_in)
        pos += n_in * n_out
        b = np.array(theta[pos:pos + n_out])
        pos += n_out
        z = w @ z + b
        if li < n_layers - 1:
            z = np.tanh(z)
    return z[0]


@pytest.fixture
def qc():
    return nc.QuadraticCost(np.diag([10, 10, 0.1, 0.1]), [[0.01]], X_D, U_D)


class TestParamCount:
    def test_default_architecture(self):
        assert nc.param_count(ARCH) == 43

    def test_single_affine_layer(self):
        assert nc.param_count(nc.NetArchitecture((1, 1))) == 2

    def test_two_hidden_layers(self):
        assert nc.param_count(nc.NetArchitecture((4, 7, 7, 1))) == 99

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            nc.NetArchitecture((4,))
        with pytest.raises(ValueError):
            nc.NetArchitecture((4, 0, 1))


class TestPackUnpack:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        theta = rng.normal(size=43)
        assert np.array_equal(nc.pack(nc.unpack(theta, ARCH), ARCH), theta)

    def test_zero_vector(self):
        layers = nc.unpack(np.zeros(43), ARCH)
        assert all(np.all(w == 0) and np.all(b == 0) for w, b in layers)

    def test_declared_layout(self):
        theta = np.arange(1.0, 44.0)
        (w1, b1), (w2, b2) = nc.unpack(theta, ARCH)
        assert w1[0][0] == 1.0
        assert b1[0] == 29.0
        assert w2[0][0] == 36.0
        assert b2[0] == 43.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nc.unpack(np.zeros(42), ARCH)


class TestForward:
    def test_zero_network(self):
        assert nc.nn_forward(ARCH, np.zeros(43), np.array([1.0, 2, 3, 4])) == 0.0

    def test_single_affine_layer(self):
        arch = nc.NetArchitecture((1, 1))
        assert nc.nn_forward(arch, np.array([2.0, 1.0]), np.array([3.0])) == 7.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_reference_oracle(self, seed):
        rng = np.random.default_rng(seed)
        sizes = (4, 7, 1) if seed % 2 else (4, 5, 3, 1)
        arch = nc.NetArchitecture(sizes)
        theta = rng.normal(size=nc.param_count(arch))
        x = rng.normal(size=4)
        assert nc.nn_forward(arch, theta, x) == pytest.approx(
            reference_forward(theta, sizes, x), rel=1e-12, abs=1e-12)

    def test_bounded_slope(self):
        rng = np.random.default_rng(3)
        theta = rng.normal(size=43)
        c = nc.lipschitz_bound(ARCH, theta)
        for _ in range(50):
            xa, xb = rng.normal(size=4), rng.normal(size=4)
            gap = abs(nc.nn_forward(ARCH, theta, xa) - nc.nn_forward(ARCH, theta, xb))
            assert gap <= c * np.linalg.norm(xa - xb) + 1e-12


class TestNnCost:
    def test_zero_at_setpoint(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            theta = rng.normal(size=43)
            assert nc.nn_cost(ARCH, theta, X_D, X_D) == 0.0

    def test_zero_theta(self):
        assert nc.nn_cost(ARCH, np.zeros(43), np.ones(4), X_D) == 0.0

    def test_compositional_identity(self):
        rng = np.random.default_rng(2)
        theta = rng.normal(size=43)
        x = rng.normal(size=4)
        want = nc.nn_forward(ARCH, theta, x) - nc.nn_forward(ARCH, theta, X_D)
        assert nc.nn_cost(ARCH, theta, x, X_D) == pytest.approx(want, abs=1e-14)


class TestStageCost:
    def test_setpoint_nullity_random_theta(self, qc):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            theta = rng.normal(scale=2.0, size=43)
            assert abs(nc.stage_cost(qc, ARCH, theta, X_D, U_D)) <= 1e-12

    def test_pure_quadratic(self):
        qc = nc.QuadraticCost(np.eye(4), np.eye(1), X_D, U_D)
        x = X_D + np.array([1.0, 0, 0, 0])
        assert nc.stage_cost(qc, ARCH, np.zeros(43), x, U_D) == pytest.approx(1.0)

    def test_reduces_to_quadratic_for_zero_theta(self, qc):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.normal(size=4)
            u = rng.normal(size=1)
            dx, du = x - X_D, u - U_D
            want = dx @ qc.q @ dx + du @ qc.r @ du
            got = nc.stage_cost(qc, ARCH, np.zeros(43), x, u)
            assert got == pytest.approx(want, rel=1e-12)

    def test_r_must_be_positive_definite(self):
        with pytest.raises(np.linalg.LinAlgError):
            nc.QuadraticCost(np.eye(4), [[-1.0]], X_D, U_D)


class TestStageCostGrad:
    def test_quadratic_gradient(self, qc):
        x = X_D + np.array([0.2, -0.3, 0.1, 0.4])
        gx, gu = nc.stage_cost_grad(qc, ARCH, np.zeros(43), x, U_D + 0.5)
        assert np.allclose(gx, 2 * qc.q @ (x - X_D), atol=1e-12)
        assert np.allclose(gu, 2 * qc.r @ np.array([0.5]), atol=1e-12)

    def test_matches_finite_differences(self, qc):
        rng = np.random.default_rng(6)
        h = 1e-5
        for _ in range(100):
            theta = rng.normal(size=43)
            x = rng.normal(size=4)
            u = rng.normal(size=1)
            gx, gu = nc.stage_cost_grad(qc, ARCH, theta, x, u)
            fd = np.empty(5)
            for j in range(4):
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fd[j] = (nc.stage_cost(qc, ARCH, theta, xp, u)
                         - nc.stage_cost(qc, ARCH, theta, xm, u)) / (2 * h)
            fd[4] = (nc.stage_cost(qc, ARCH, theta, x, u + h)
                     - nc.stage_cost(qc, ARCH, theta, x, u - h)) / (2 * h)
            grad = np.concatenate([gx, gu])
            scale = max(np.max(np.abs(fd)), 1.0)
            assert np.max(np.abs(grad - fd)) / scale <= 1e-5

    def test_stationary_along_line(self, qc):
        # restrict the cost to a line through a numerically located minimum
        rng = np.random.default_rng(8)
        theta = rng.normal(scale=0.5, size=43)
        direction = rng.normal(size=4)
        direction /= np.linalg.norm(direction)

        def f(t):
            return nc.stage_cost(qc, ARCH, theta, X_D + t * direction, U_D)

        from scipy.optimize import minimize_scalar
        res = minimize_scalar(f, bounds=(-1.0, 1.0), method="bounded",
                              options={"xatol": 1e-12})
        gx, _ = nc.stage_cost_grad(qc, ARCH, theta, X_D + res.x * direction, U_D)
        assert abs(gx @ direction) <= 1e-6
