"""Tests for the IBP restaurant process, the cascade, and width-chain math."""

import math

import numpy as np
import pytest
from scipy.stats import chisquare, poisson

from cibpnet.prior import (
    EdgeMatrix,
    HyperParameters,
    IbpParams,
    ibp_log_prob,
    drift,
    expected_out_degree,
    poisson_rate,
    sample_cibp,
    sample_ibp,
    simulate_width_chain,
    structure_from_text,
    structure_to_text,
)


def harmonic(n):
    return sum(1.0 / j for j in range(1, n + 1))


class TestPoissonRate:
    def test_empty_sum(self):
        assert poisson_rate(0, IbpParams(3, 1)) == 0.0

    def test_single_term_is_alpha(self):
        assert poisson_rate(1, IbpParams(3, 7)) == pytest.approx(3.0, abs=1e-12)

    def test_harmonic_case(self):
        # alpha=3, beta=1 reduces to 3 * H_3 = 5.5
        assert poisson_rate(3, IbpParams(3, 1)) == pytest.approx(5.5, abs=1e-12)

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            IbpParams(0.0, 1.0)
        with pytest.raises(ValueError):
            IbpParams(1.0, -2.0)
        with pytest.raises(ValueError):
            poisson_rate(-1, IbpParams(1, 1))


class TestDrift:
    def test_sign_change_alpha3_beta1(self):
        p = IbpParams(3, 1)
        assert drift(8, p) == pytest.approx(3 * harmonic(8) - 8, abs=1e-12)
        assert drift(8, p) == pytest.approx(0.15357, abs=1e-5)
        assert drift(9, p) == pytest.approx(-0.51310, abs=1e-5)

    def test_zero_at_k1_alpha1_beta1(self):
        assert drift(1, IbpParams(1, 1)) == 0.0

    def test_negative_through_large_widths(self):
        # lambda grows logarithmically, so the drift stays negative above 8
        p = IbpParams(3, 1)
        for k in [9, 10, 20, 100, 1000, 10**6]:
            assert drift(k, p) < 0
        for k in range(1, 9):
            assert drift(k, p) > 0

    def test_rejects_absorbing_state(self):
        with pytest.raises(ValueError):
            drift(0, IbpParams(1, 1))


class TestExpectedOutDegree:
    def test_single_unit(self):
        assert expected_out_degree(1, 0.37) == pytest.approx(1.0, abs=1e-12)
        assert expected_out_degree(1, 12.0) == pytest.approx(1.0, abs=1e-12)

    def test_three_units_beta1(self):
        assert expected_out_degree(3, 1.0) == pytest.approx(3 / harmonic(3), abs=1e-12)

    def test_matches_monte_carlo(self):
        # pooled-ratio estimate of (total edges) / (total dishes) over draws
        rng = np.random.default_rng(11)
        p = IbpParams(3, 1)
        total_edges = total_cols = 0
        n = 3000
        for _ in range(n):
            m = sample_ibp(50, p, rng)
            total_edges += int(m.z.sum())
            total_cols += m.cols
        est = total_edges / total_cols
        want = expected_out_degree(50, 1.0)
        # delta-method scale for the ratio; 4 sigma margin
        se = want * math.sqrt(2.0 / (total_cols / poisson_rate(50, p)))
        assert abs(est - want) < 4 * se


class TestSampleIbp:
    def test_first_customer_poisson(self):
        rng = np.random.default_rng(0)
        alpha = 2.0
        n = 10**5
        counts = np.array(
            [sample_ibp(1, IbpParams(alpha, 5.0), rng).cols for _ in range(n)]
        )
        assert abs(counts.mean() - alpha) < 3 * math.sqrt(alpha / n)

    def test_tiny_alpha_gives_empty_matrix(self):
        rng = np.random.default_rng(1)
        m = sample_ibp(4, IbpParams(1e-12, 1.0), rng)
        assert m.cols == 0
        assert m.rows == 4

    def test_total_columns_mean_matches_rate(self):
        rng = np.random.default_rng(2)
        p = IbpParams(1, 1)
        n = 10**5
        cols = np.array([sample_ibp(5, p, rng).cols for _ in range(n)])
        lam = poisson_rate(5, p)
        assert lam == pytest.approx(harmonic(5), abs=1e-12)
        assert abs(cols.mean() - lam) < 3 * math.sqrt(lam / n)

    @pytest.mark.parametrize("alpha,beta", [(0.5, 1.0), (2.0, 0.5), (1.0, 3.0)])
    def test_mean_in_degree_is_alpha(self, alpha, beta):
        rng = np.random.default_rng(3)
        n = 20000
        rows = 6
        total = 0
        for _ in range(n):
            total += int(sample_ibp(rows, IbpParams(alpha, beta), rng).z.sum())
        mean = total / (n * rows)
        se = math.sqrt(alpha / (n * rows))  # Poisson-scale upper bound on row-sum var
        assert abs(mean - alpha) < 4 * se

    def test_matrices_are_compact_left_ordered(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            m = sample_ibp(8, IbpParams(2, 0.7), rng)
            assert m.is_compact()
            assert m == m.left_ordered()


class TestEdgeMatrix:
    def test_active_columns_counts_nonzero(self):
        z = np.array([[1, 0, 0], [0, 0, 1]], dtype=np.uint8)
        m = EdgeMatrix(z)
        assert m.rows == 2 and m.cols == 3
        assert m.active_columns == 2
        assert not m.is_compact()

    def test_left_ordering_sorts_by_first_taster(self):
        z = np.array([[0, 1, 1], [1, 0, 1], [1, 0, 0]], dtype=np.uint8)
        got = EdgeMatrix(z).left_ordered()
        want = np.array([[1, 1, 0], [0, 1, 1], [0, 0, 1]], dtype=np.uint8)
        assert np.array_equal(got.z, want)

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            EdgeMatrix(np.array([[2]]))


class TestWidthChain:
    def test_absorbing_start(self):
        rng = np.random.default_rng(5)
        t = simulate_width_chain(0, IbpParams(3, 1), 100, rng)
        assert t.widths == [0]
        assert t.absorbed

    def test_one_step_mean(self):
        rng = np.random.default_rng(6)
        p = IbpParams(3, 1)
        lam = poisson_rate(8, p)
        assert lam == pytest.approx(8.1536, abs=1e-4)
        n = 10**5
        draws = rng.poisson(lam, size=n)
        first = np.array(
            [simulate_width_chain(8, p, 1, rng).widths[1] for _ in range(3000)]
        )
        assert abs(first.mean() - lam) < 3 * math.sqrt(lam / 3000)
        assert abs(draws.mean() - lam) < 3 * math.sqrt(lam / n)

    def test_poisson_transition_law(self):
        # empirical K(m+1) | K(m)=8 must pass a chi-squared GOF test
        rng = np.random.default_rng(7)
        p = IbpParams(3, 1)
        lam = poisson_rate(8, p)
        n = 10**5
        draws = np.array([simulate_width_chain(8, p, 1, rng).widths[1] for _ in range(n)])
        hi = int(poisson.ppf(0.9999, lam)) + 1
        edges = list(range(hi)) + [10**9]
        obs = np.histogram(draws, bins=[-0.5] + [e + 0.5 for e in edges])[0]
        probs = np.diff([0.0] + [poisson.cdf(e, lam) for e in edges])
        keep = probs * n >= 5
        stat, pval = chisquare(obs[keep], probs[keep] / probs[keep].sum() * obs[keep].sum())
        assert pval > 0.001

    def test_zero_never_followed_by_positive(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            t = simulate_width_chain(5, IbpParams(1, 1), 50, rng)
            w = np.array(t.widths)
            zeros = np.nonzero(w == 0)[0]
            if zeros.size:
                assert (w[zeros[0]:] == 0).all()
                assert t.absorbed

    def test_traces_decay_and_absorb(self):
        rng = np.random.default_rng(9)
        p = IbpParams(3, 1)
        traces = [simulate_width_chain(50, p, 10**5, rng) for _ in range(3)]
        for t in traces:
            assert t.absorbed
            # early widths fall from 50 toward the fixed point near 8
            assert t.widths[1] < 30


class TestSampleCibp:
    def test_tiny_alpha_terminates_immediately(self):
        rng = np.random.default_rng(10)
        s = sample_cibp(5, IbpParams(1e-12, 1.0), 10, rng)
        assert len(s.matrices) == 1
        assert s.matrices[0].cols == 0
        assert s.depth == 0
        assert not s.truncated

    def test_truncation_is_flagged(self):
        rng = np.random.default_rng(11)
        # depth cap 1 with alpha large enough that layer 1 is never empty
        s = sample_cibp(30, IbpParams(5, 1), 1, rng)
        assert s.truncated
        assert len(s.matrices) == 1

    def test_row_counts_chain(self):
        rng = np.random.default_rng(12)
        s = sample_cibp(6, IbpParams(1.5, 1), 100, rng)
        assert s.matrices[0].rows == 6
        for a, b in zip(s.matrices, s.matrices[1:]):
            assert b.rows == a.active_columns

    def test_termination_fraction_matches_width_chain_theory(self):
        # The layer widths of the cascade are Markov with Poisson transitions,
        # so the absorption-by-depth curve from the transition kernel is an
        # independent oracle for full structure sampling.
        p = IbpParams(1.5, 1.0)
        cap = 60
        kmax = 80
        probs = np.zeros(kmax + 1)
        probs[6] = 1.0
        lam = np.array([0.0] + [poisson_rate(k, p) for k in range(1, kmax + 1)])
        absorbed_theory = 0.0
        surv = []
        for _ in range(cap):
            nxt = np.zeros(kmax + 1)
            nxt[0] = probs[0]
            for k in range(1, kmax + 1):
                if probs[k] == 0:
                    continue
                pm = poisson.pmf(np.arange(kmax + 1), lam[k])
                pm[-1] += 1 - pm.sum()
                nxt += probs[k] * pm
            probs = nxt
            surv.append(probs[0])
        absorbed_theory = probs[0]
        rng = np.random.default_rng(13)
        n = 2000
        hits = sum(
            not sample_cibp(6, p, cap, rng).truncated for _ in range(n)
        )
        frac = hits / n
        se = math.sqrt(absorbed_theory * (1 - absorbed_theory) / n) + 1e-4
        assert abs(frac - absorbed_theory) < 4 * se

    def test_bounded_depth_varying_hypers_absorb(self):
        # arbitrary per-depth draws below finite caps absorb before the cap
        rng = np.random.default_rng(14)
        alpha_bar, beta_bar = 1.2, 1.5
        n_chains, cap = 1000, 500
        for _ in range(n_chains):
            seq = [
                IbpParams(rng.uniform(1e-3, alpha_bar), rng.uniform(1e-3, beta_bar))
                for _ in range(40)
            ]
            s = sample_cibp(8, seq, cap, rng)
            assert not s.truncated


class TestIbpLogProb:
    def test_single_customer_is_poisson(self):
        p = IbpParams(1.7, 2.3)
        for k in range(4):
            z = np.ones((1, k), dtype=np.uint8)
            got = ibp_log_prob(EdgeMatrix(z), p)
            assert got == pytest.approx(poisson.logpmf(k, p.alpha), abs=1e-12)

    def test_two_customer_shared_dish(self):
        # [1;1]: first customer creates one dish, second tastes it, adds none
        a, b = 1.3, 0.8
        p = IbpParams(a, b)
        got = ibp_log_prob(EdgeMatrix(np.array([[1], [1]], dtype=np.uint8)), p)
        want = (
            poisson.logpmf(1, a)
            + math.log(1 / (1 + b))
            + poisson.logpmf(0, a * b / (1 + b))
        )
        assert got == pytest.approx(want, abs=1e-12)

    def test_empty_matrix_is_termination_factor(self):
        p = IbpParams(2.0, 1.5)
        got = ibp_log_prob(EdgeMatrix(np.zeros((4, 0), dtype=np.uint8)), p)
        assert got == pytest.approx(-poisson_rate(4, p), abs=1e-12)

    def test_matches_empirical_frequency(self):
        rng = np.random.default_rng(15)
        p = IbpParams(0.9, 1.1)
        n = 200000
        target = EdgeMatrix(np.array([[1], [1], [0]], dtype=np.uint8))
        hits = sum(sample_ibp(3, p, rng) == target for _ in range(n))
        want = math.exp(ibp_log_prob(target, p))
        se = math.sqrt(want * (1 - want) / n)
        assert abs(hits / n - want) < 4 * se

    def test_rejects_zero_columns(self):
        with pytest.raises(ValueError):
            ibp_log_prob(EdgeMatrix(np.array([[0], [0]], dtype=np.uint8)), IbpParams(1, 1))


class TestHyperParameters:
    def test_validation(self):
        with pytest.raises(ValueError):
            HyperParameters(alphas=[25.0], betas=[1.0])
        with pytest.raises(ValueError):
            HyperParameters(alphas=[1.0], betas=[0.0])

    def test_ensure_and_truncate(self):
        rng = np.random.default_rng(16)
        h = HyperParameters.constant(1.0, 1.0, 2)
        h.ensure_depth(5, rng)
        assert len(h.alphas) == 5
        assert all(0 < a <= h.alpha_max for a in h.alphas)
        h.truncate_depth(3)
        assert len(h.betas) == 3

    def test_truncated_exponential_prior(self):
        rng = np.random.default_rng(17)
        h = HyperParameters()
        draws = np.array([h.sample_prior(rng, 20.0) for _ in range(20000)])
        assert draws.max() <= 20.0
        # mean of Exp(1) truncated at 20 is within float noise of 1
        assert abs(draws.mean() - 1.0) < 0.02


class TestStructureText:
    def test_round_trip(self):
        rng = np.random.default_rng(18)
        s = sample_cibp(5, IbpParams(1.5, 1.0), 50, rng)
        text = structure_to_text(s.matrices, 5)
        mats, vis = structure_from_text(text)
        assert vis == 5
        assert len(mats) == len(s.matrices)
        for a, b in zip(mats, s.matrices):
            assert a == b

    def test_header_format(self):
        z = EdgeMatrix(np.array([[1, 0], [1, 1]], dtype=np.uint8))
        text = structure_to_text([z], 2)
        assert text.splitlines()[0] == "layers 1 widths 2 2"
        assert "1 0 0" in text

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError):
            structure_from_text("nonsense 1 2 3\n")
