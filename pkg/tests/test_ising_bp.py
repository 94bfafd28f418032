import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from mimo_lab.ising_bp import (
    CavityPopulation,
    ChainFactorization,
    ConvergenceError,
    backward_cavity,
    ber_from_populations,
    brute_force_moments,
    cavity_marginals,
    chain_moments,
    cholesky_chain,
    exact_chain_marginals,
    factor_weight,
    forward_cavity,
    gauge_chain,
    logz_open,
    logz_ring,
    mmse_from_populations,
    open_chain_cholesky,
    population_dynamics,
)
from mimo_lab.replica import mmse_bpsk


def two_spin_forward(h, tb, eta, chi, fact):
    w = {s: sum(np.exp(h * t) * factor_weight(t, s, tb, eta, chi, fact) for t in (1, -1)) for s in (1, -1)}
    return 0.5 * np.log(w[1] / w[-1])


def two_spin_backward(h, tb, eta, chi, fact):
    w = {s: sum(np.exp(h * t) * factor_weight(s, t, tb, eta, chi, fact) for t in (1, -1)) for s in (1, -1)}
    return 0.5 * np.log(w[1] / w[-1])


class TestCholesky:
    def test_examples(self):
        f = cholesky_chain(0.0)
        assert (f.l0, f.l1) == (1.0, 0.0)
        f = cholesky_chain(0.5)
        assert f.l0 == pytest.approx(np.sqrt(0.5), abs=1e-15) and f.l1 == pytest.approx(np.sqrt(0.5), abs=1e-15)
        f = cholesky_chain(0.2)
        # roots of l0^4 - l0^2 + rho^2 = 0 for rho = 0.2, solved by hand and frozen
        assert f.l0 == pytest.approx(0.978906312930703, abs=1e-14)
        assert f.l1 == pytest.approx(0.204309643689220, abs=1e-14)

    def test_identities_on_grid(self):
        for rho in np.linspace(-0.5, 0.5, 100):
            f = cholesky_chain(rho)
            assert abs(f.l0**2 + f.l1**2 - 1) < 1e-14
            assert abs(f.l0 * f.l1 - rho) < 1e-14
            assert f.l0 >= abs(f.l1)

    def test_rejects(self):
        with pytest.raises(ValueError):
            cholesky_chain(0.51)

    def test_bidiagonal_reconstruction(self):
        K, rho = 9, 0.3
        lam = cholesky_chain(rho).bidiagonal(K)
        target = np.eye(K) + rho * (np.eye(K, k=1) + np.eye(K, k=-1))
        # the bulk factor reproduces every entry except the top-left corner
        diff = lam @ lam.T - target
        diff[0, 0] = 0.0
        assert np.max(np.abs(diff)) < 1e-12

    @pytest.mark.parametrize("rho", [-0.4, 0.2, 0.5])
    def test_open_chain_exact(self, rho):
        K = 12
        l0, l1 = open_chain_cholesky(rho, K)
        lam = np.diag(l0) + np.diag(l1[:-1], -1)
        target = np.eye(K) + rho * (np.eye(K, k=1) + np.eye(K, k=-1))
        assert np.max(np.abs(lam @ lam.T - target)) < 1e-12


class TestFactor:
    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from((1.0, -1.0)), st.floats(-3, 3), st.floats(0.01, 5), st.floats(-0.5, 0.5))
    def test_aligned_spins(self, tb, eta, chi, rho):
        f = cholesky_chain(rho)
        w = factor_weight(1.0, 1.0, tb, eta, chi, f)
        assert w == pytest.approx(0.5 * np.exp(np.sqrt(chi) * eta * (f.l0 + f.l1 * tb)), rel=1e-12)

    def test_uncoupled_factorizes(self):
        f = cholesky_chain(0.0)
        for t0, t1 in itertools.product((1.0, -1.0), repeat=2):
            assert factor_weight(t0, t1, -1.0, 0.4, 2.0, f) == pytest.approx(
                factor_weight(t0, 1.0, -1.0, 0.4, 2.0, f), rel=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_gauge_sum_matches_symbol_space(self, seed):
        rng = np.random.default_rng(seed)
        K, chi, rho = 3, 1.3, 0.3
        fact = cholesky_chain(rho)
        last = ChainFactorization(fact.l0, 0.0, 0.0)
        bbar = rng.choice((-1.0, 1.0), K)
        noise = rng.standard_normal(K)
        lamT = fact.bidiagonal(K).T
        y = np.sqrt(chi) * lamT @ bbar + noise
        # symbol-space posterior normalizer relative to the true symbols
        B = np.array(list(itertools.product((1.0, -1.0), repeat=K)))
        z_b = np.mean(np.exp(-0.5 * np.sum((y - np.sqrt(chi) * B @ lamT.T) ** 2, 1) + 0.5 * noise @ noise))
        z_b *= np.exp(np.sqrt(chi) * noise @ lamT @ bbar)
        tb = bbar * np.roll(bbar, -1)
        eta = bbar * noise
        z_tau = 0.0
        for tau in B:
            w = 1.0
            for k in range(K - 1):
                w *= factor_weight(tau[k], tau[k + 1], tb[k], eta[k], chi, fact)
            w *= factor_weight(tau[K - 1], 1.0, 1.0, eta[K - 1], chi, last)
            z_tau += w
        assert z_tau == pytest.approx(z_b, rel=1e-12)


class TestCavity:
    def test_against_two_spin_trace(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            h, eta = rng.normal(0, 2, 2)
            tb = rng.choice((-1.0, 1.0))
            chi = rng.uniform(0.05, 4)
            fact = cholesky_chain(rng.uniform(-0.5, 0.5))
            assert forward_cavity(h, tb, eta, chi, fact) == pytest.approx(
                two_spin_forward(h, tb, eta, chi, fact), abs=1e-12)
            assert backward_cavity(h, tb, eta, chi, fact) == pytest.approx(
                two_spin_backward(h, tb, eta, chi, fact), abs=1e-12)

    def test_printed_forward_form(self):
        chi, rho, h, tb, eta = 1.7, 0.3, 0.4, -1.0, 0.8
        f = cholesky_chain(rho)
        ref = (chi * f.l1**2 + chi * rho * tb + np.sqrt(chi) * f.l1 * tb * eta
               - tb * np.arctanh(np.tanh(rho * chi) * np.tanh(h + chi * f.l0**2 + chi * rho * tb
                                                                + np.sqrt(chi) * f.l0 * eta)))
        assert forward_cavity(h, tb, eta, chi, f) == pytest.approx(ref, abs=1e-12)

    def test_uncoupled_ignores_input(self):
        f = cholesky_chain(0.0)
        for fn in (forward_cavity, backward_cavity):
            assert fn(-3.0, 1.0, 0.2, 2.0, f) == fn(5.0, 1.0, 0.2, 2.0, f)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.sampled_from((1.0, -1.0)), st.floats(-3, 3), st.floats(0.01, 5),
           st.floats(-0.5, 0.5))
    def test_sign_symmetry(self, h, tb, eta, chi, rho):
        # rho -> -rho is absorbed by flipping the bond sign
        for fn in (forward_cavity, backward_cavity):
            assert fn(h, tb, eta, chi, cholesky_chain(rho)) == pytest.approx(
                fn(h, -tb, eta, chi, cholesky_chain(-rho)), abs=1e-12)

    def test_large_fields_finite(self):
        f = cholesky_chain(0.4)
        assert np.isfinite(forward_cavity(1e6, 1.0, 30.0, 500.0, f))


class TestMarginals:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 12), st.floats(0.01, 6), st.floats(-0.5, 0.5), st.integers(0, 2**31))
    def test_bp_exact(self, K, chi, rho, seed):
        rng = np.random.default_rng(seed)
        tb = rng.choice((-1.0, 1.0), K)
        eta = rng.standard_normal(K)
        fact = cholesky_chain(rho)
        assert np.max(np.abs(cavity_marginals(chi, fact, tb, eta)
                             - exact_chain_marginals(chi, fact, tb, eta))) < 1e-10

    def test_single_site(self):
        eta = np.array([0.3])
        m = exact_chain_marginals(2.0, cholesky_chain(0.0), np.ones(1), eta)
        assert m[0] == pytest.approx(np.tanh(2.0 + np.sqrt(2.0) * 0.3), rel=1e-14)

    def test_uncoupled_product(self):
        eta = np.array([0.3, -1.2, 0.5, 2.0])
        m = exact_chain_marginals(1.5, cholesky_chain(0.0), np.array([1.0, -1, -1, 1]), eta)
        assert np.allclose(m, np.tanh(1.5 + np.sqrt(1.5) * eta), atol=1e-14)

    def test_rejects_long_chain(self):
        with pytest.raises(ValueError):
            exact_chain_marginals(1.0, cholesky_chain(0.1), np.ones(17), np.zeros(17))

    @pytest.mark.parametrize("K", [2, 5, 8])
    def test_gauge_invariance(self, K):
        rng = np.random.default_rng(K)
        chi, rho = 0.9, 0.35
        fact = cholesky_chain(rho)
        bbar = rng.choice((-1.0, 1.0), K)
        noise = rng.standard_normal(K)
        lamT = fact.bidiagonal(K).T
        y = np.sqrt(chi) * lamT @ bbar + noise
        B = np.array(list(itertools.product((1.0, -1.0), repeat=K)))
        e = -0.5 * np.sum((y - np.sqrt(chi) * B @ lamT.T) ** 2, 1)
        w = np.exp(e - e.max())
        m_b = (w @ B) / w.sum()
        m_tau = exact_chain_marginals(chi, fact, bbar * np.roll(bbar, -1), bbar * noise)
        assert np.max(np.abs(m_b - bbar * m_tau)) < 1e-12


class TestKernels:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**31), st.floats(0.1, 30))
    def test_against_enumeration(self, K, seed, scale):
        rng = np.random.default_rng(seed)
        f = rng.normal(0, scale, K)
        J = rng.normal(0, scale / 3, K)
        m_ref, pair_ref, lz_ref = brute_force_moments(f, J[:-1])
        m, pair = chain_moments(f, J[:-1])
        assert np.max(np.abs(m - m_ref)) < 1e-12
        assert np.max(np.abs(pair - pair_ref)) < 1e-12
        assert logz_open(f[None], J[None, :-1])[0] == pytest.approx(lz_ref, rel=1e-13, abs=1e-12)
        if K >= 3:
            lz_ring = brute_force_moments(f, J, ring=True)[2]
            assert logz_ring(f[None], J[None])[0] == pytest.approx(lz_ring, rel=1e-13, abs=1e-12)

    def test_gauge_chain_matches_marginals(self):
        rng = np.random.default_rng(3)
        K, chi = 10, 1.1
        l0, l1 = open_chain_cholesky(0.3, K)
        tb, eta = rng.choice((-1.0, 1.0), K), rng.standard_normal(K)
        f, J, _ = gauge_chain(chi, l0, l1, tb, eta)
        m, _ = chain_moments(f, J)
        spins = np.array(list(itertools.product((1.0, -1.0), repeat=K)))
        logw = np.zeros(len(spins))
        for k in range(K):
            nxt = spins[:, k + 1] if k < K - 1 else 1.0
            fk = ChainFactorization(l0[k], l1[k], l0[k] * l1[k])
            logw += np.log(factor_weight(spins[:, k], nxt, tb[k], eta[k], chi, fk))
        w = np.exp(logw - logw.max())
        assert np.max(np.abs(m - (w @ spins) / w.sum())) < 1e-12


class TestPopulation:
    def test_uncoupled_ber(self):
        chi = 1.5
        fwd, bwd = population_dynamics(chi, 0.0, 100_000, rng=np.random.default_rng(0))
        p = ndtr(-np.sqrt(chi))
        assert abs(ber_from_populations(fwd, bwd) - p) < 3 * np.sqrt(p * (1 - p) / 100_000)
        m = mmse_from_populations(fwd, bwd, chi, 0.0)
        assert m == pytest.approx(mmse_bpsk(chi), abs=0.01)

    def test_deterministic(self):
        a = population_dynamics(1.0, 0.3, 5000, rng=np.random.default_rng(4))
        b = population_dynamics(1.0, 0.3, 5000, rng=np.random.default_rng(4))
        assert a[0].samples.tobytes() == b[0].samples.tobytes()
        assert a[1].samples.tobytes() == b[1].samples.tobytes()

    def test_weak_coupling_matches_long_chain(self):
        chi, rho, K, n_chains = 1.0, 0.05, 1000, 40
        fwd, bwd = population_dynamics(chi, rho, 100_000, rng=np.random.default_rng(1))
        p_pop = ber_from_populations(fwd, bwd)
        rng = np.random.default_rng(2)
        l0, l1 = open_chain_cholesky(rho, K)
        errors = []
        for _ in range(n_chains):
            bbar = rng.choice((-1.0, 1.0), K)
            tb = bbar * np.roll(bbar, -1)
            f, J, _ = gauge_chain(chi, l0, l1, tb, rng.standard_normal(K))
            m, _ = chain_moments(f, J)
            errors.append(np.mean(m < 0))
        errors = np.array(errors)
        se = errors.std(ddof=1) / np.sqrt(n_chains)
        assert abs(errors.mean() - p_pop) < 3 * np.hypot(se, np.sqrt(p_pop * (1 - p_pop) / 100_000))

    def test_ber_cases(self):
        assert ber_from_populations(np.ones(10), np.ones(7)) == 0.0
        v = np.random.default_rng(0).standard_normal(50)
        x = np.concatenate([-v, v, [0.0]])
        assert ber_from_populations(x, x) == 0.5
        assert ber_from_populations(np.array([0.0]), np.array([0.0])) == 0.5
        with pytest.raises(ValueError):
            ber_from_populations(np.array([]), x)

    def test_ber_nonincreasing_in_chi(self):
        n = 20_000
        bers = []
        for chi in (0.25, 0.5, 1.0, 2.0, 4.0):
            fwd, bwd = population_dynamics(chi, 0.3, n, rng=np.random.default_rng(5))
            bers.append(ber_from_populations(fwd, bwd))
        for a, b in zip(bers, bers[1:]):
            assert b <= a + 3 * np.sqrt(a * (1 - a) / n)

    def test_errors(self):
        with pytest.raises(ValueError):
            population_dynamics(1.0, 0.2, 100)
        with pytest.raises(ConvergenceError) as err:
            population_dynamics(1.0, 0.2, 2000, n_sweeps=3, rng=np.random.default_rng(0))
        assert len(err.value.trace) == 3
        with pytest.raises(ValueError):
            CavityPopulation(np.array([0.0, np.nan]), "forward", 1.0, 0.2)
