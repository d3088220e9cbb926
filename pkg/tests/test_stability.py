import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safempc import stability as stab


def brute_force_margin(states, rho, chi, nu, x_d):
    """Scalar-loop oracle: recompute the margin term by term."""
    d0 = math.sqrt(sum((s - d) ** 2 for s, d in zip(states[0], x_d)))
    worst = math.inf
    for k, xk in enumerate(states):
        err = math.sqrt(sum((s - d) ** 2 for s, d in zip(xk, x_d)))
        bound = max(rho * chi ** k * d0, nu)
        worst = min(worst, bound - err)
    return worst


class TestEnvelope:
    def test_initial_value(self):
        env = stab.StabilityEnvelope(2.0, 0.9, 0.1)
        assert stab.envelope(env, 3.0, 0) == pytest.approx(6.0)

    def test_geometric_decay(self):
        env = stab.StabilityEnvelope(2.0, 0.5, 1e-9)
        assert stab.envelope(env, 1.0, 3) == pytest.approx(0.25)

    def test_floor_takes_over(self):
        env = stab.StabilityEnvelope(2.0, 0.5, 0.3)
        assert stab.envelope(env, 1.0, 50) == pytest.approx(0.3)

    def test_vectorized_ks(self):
        env = stab.StabilityEnvelope(1.5, 0.8, 0.2)
        ks = np.arange(5)
        got = stab.envelope(env, 2.0, ks)
        want = np.maximum(1.5 * 0.8 ** ks * 2.0, 0.2)
        assert np.allclose(got, want)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            stab.StabilityEnvelope(rho=0.0)
        with pytest.raises(ValueError):
            stab.StabilityEnvelope(chi=1.0)
        with pytest.raises(ValueError):
            stab.StabilityEnvelope(nu=0.0)


class TestMargin:
    def test_single_known_violation(self):
        # envelope at k=1 is max(2*0.5*1, 0.1) = 1.0; error there is 1.3
        env = stab.StabilityEnvelope(2.0, 0.5, 0.1)
        states = np.array([[1.0, 0.0], [1.3, 0.0]])
        m = stab.stability_margin(states, env, np.zeros(2))
        assert m == pytest.approx(-0.3)
        assert not stab.is_stable(states, env, np.zeros(2))

    def test_at_setpoint_margin_is_floor(self):
        env = stab.StabilityEnvelope(2.0, 0.9, 0.25)
        states = np.tile(np.array([1.0, 2.0]), (10, 1))
        m = stab.stability_margin(states, env, np.array([1.0, 2.0]))
        assert m == pytest.approx(0.25)

    def test_boundary_counts_as_stable(self):
        env = stab.StabilityEnvelope(2.0, 0.5, 0.1)
        # error exactly on the envelope at k=1
        states = np.array([[1.0, 0.0], [1.0, 0.0]])
        m = stab.stability_margin(states, env, np.zeros(2))
        assert m == pytest.approx(0.0)
        assert stab.is_stable(states, env, np.zeros(2))

    def test_tighter_envelope_smaller_margin(self):
        rng = np.random.default_rng(0)
        states = rng.normal(size=(20, 4))
        loose = stab.StabilityEnvelope(3.0, 0.99, 0.5)
        tight = stab.StabilityEnvelope(1.5, 0.9, 0.1)
        x_d = np.zeros(4)
        assert (stab.stability_margin(states, tight, x_d)
                <= stab.stability_margin(states, loose, x_d))

    def test_margin_independent_of_inputs(self):
        # the verdict is a function of states only; extra columns rejected
        env = stab.StabilityEnvelope()
        states = np.zeros((5, 4))
        states[0] = [0.1, 0.0, 0.0, 0.0]
        m1 = stab.stability_margin(states, env, np.zeros(4))
        m2 = stab.stability_margin(states.copy(), env, np.zeros(4))
        assert m1 == m2

    def test_exploded_flag(self):
        env = stab.StabilityEnvelope()
        states = np.zeros((3, 4))
        assert stab.stability_margin(states, env, np.zeros(4),
                                     exploded=True) == stab.EXPLODED_MARGIN

    def test_nonfinite_states_exploded(self):
        env = stab.StabilityEnvelope()
        states = np.zeros((3, 4))
        states[2, 1] = np.nan
        assert stab.stability_margin(states, env,
                                     np.zeros(4)) == stab.EXPLODED_MARGIN
        assert not stab.is_stable(states, env, np.zeros(4))

    def test_empty_trajectory_rejected(self):
        with pytest.raises(ValueError):
            stab.stability_margin(np.empty((0, 4)), stab.StabilityEnvelope(),
                                  np.zeros(4))

    def test_matches_oracle_on_random_batch(self):
        rng = np.random.default_rng(1)
        env = stab.StabilityEnvelope(2.5, 0.985, 0.2)
        x_d = np.array([np.pi, np.pi, 0.0, 0.0])
        for _ in range(50):
            n = rng.integers(1, 40)
            states = x_d + rng.normal(scale=2.0, size=(n, 4))
            got = stab.stability_margin(states, env, x_d)
            want = brute_force_margin(states, 2.5, 0.985, 0.2, x_d)
            assert got == pytest.approx(want, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=1, max_value=30),
    st.floats(min_value=0.5, max_value=4.0),
    st.floats(min_value=0.5, max_value=0.999),
    st.floats(min_value=0.01, max_value=1.0),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_margin_property_matches_oracle(n, rho, chi, nu, seed):
    rng = np.random.default_rng(seed)
    states = rng.normal(scale=3.0, size=(n, 4))
    x_d = rng.normal(size=4)
    env = stab.StabilityEnvelope(rho, chi, nu)
    got = stab.stability_margin(states, env, x_d)
    want = brute_force_margin(states, rho, chi, nu, x_d)
    assert got == pytest.approx(want, abs=1e-12)
