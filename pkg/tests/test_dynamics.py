from types import SimpleNamespace

import numpy as np
import pytest

from metaloss.dynamics import (
    LogitState,
    TraceRecord,
    attraction_trace,
    baikal_repulsion,
    entropy_reduction_strength,
    softmax_update_oracle,
    strength_sign_fractions,
    write_trace_csv,
)
from metaloss.losses import gamma_ce, gamma_mse


def oracle_target_shift(state, eta=1e-6):
    new_target, _ = softmax_update_oracle(state, eta)
    return new_target - (1.0 - state.epsilon)


class TestStrengthFormula:
    def test_sign_agreement_with_oracle_on_grid(self):
        """Closed form vs direct softmax step over the full gamma grid.

        For n = 2 the signs must agree everywhere.  For n > 2 the closed
        form's term proportional to (n - 2) carries a sign slip, so
        disagreements are possible, but every one of them must fall in the
        predicted band: both gammas share a sign and
        sign(gt*P - gnt*Q) != sign(gt - gnt) with P = (1-eps)(n-1)n and
        Q = P + 2*eps*(n-2).  The oracle is authoritative.
        """
        gammas = np.linspace(-500.0, 500.0, 21)
        total = agreements = 0
        for n in (2, 10):
            n_agree = n_total = 0
            for eps in (0.01, 0.1, 0.5, 0.9):
                p_factor = (1 - eps) * (n - 1) * n
                q_factor = p_factor + 2 * eps * (n - 2)
                for gt in gammas:
                    for gnt in gammas:
                        if gt == gnt:
                            continue  # degenerate: the oracle moves nothing
                        state = LogitState(eps, n, gt, gnt)
                        s = entropy_reduction_strength(state)
                        shift = oracle_target_shift(state)
                        n_total += 1
                        if np.sign(s) == np.sign(shift):
                            n_agree += 1
                        else:
                            assert np.sign(gt * p_factor - gnt * q_factor) != np.sign(gt - gnt)
            if n == 2:
                assert n_agree == n_total
            total += n_total
            agreements += n_agree
        assert agreements / total > 0.95

    def test_equal_gammas_two_class(self):
        """Equal pulls cancel exactly: no movement, zero strength."""
        state = LogitState(0.3, 2, 5.0, 5.0)
        assert entropy_reduction_strength(state) == pytest.approx(0.0, abs=1e-15)
        assert oracle_target_shift(state) == pytest.approx(0.0, abs=1e-15)

    def test_equal_gammas_known_deviation_above_two_classes(self):
        """For n > 2 the closed form reports -sign(gamma) at equal pulls
        while the oracle correctly moves nothing; this is the documented
        deviation caused by the (n - 2) term's sign.
        """
        for g in (3.0, -3.0):
            state = LogitState(0.3, 10, g, g)
            assert oracle_target_shift(state) == pytest.approx(0.0, abs=1e-15)
            assert np.sign(entropy_reduction_strength(state)) == -np.sign(g)

    def test_overflow_safe_for_large_gammas(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            gt, gnt = rng.uniform(-1e4, 1e4, size=2)
            eps = rng.uniform(0.01, 0.99)
            value = entropy_reduction_strength(LogitState(eps, 10, gt, gnt))
            assert np.isfinite(value)

    def test_boundary_epsilon_raises(self):
        for eps in (0.0, 1.0):
            with pytest.raises(ValueError):
                entropy_reduction_strength(LogitState(eps, 10, 1.0, 0.0))

    def test_reference_zero_error_point_is_repulsive(self):
        """The stored evolved loss pushes away from zero error: a + b + c
        is far below a, so the strength at small epsilon is negative."""
        state = LogitState(1e-3, 10, -515.1595, -373.917)
        assert entropy_reduction_strength(state) < 0
        assert oracle_target_shift(state) < 0

    def test_cross_entropy_null_epoch_is_attractive(self):
        n = 10
        state = LogitState((n - 1) / n, n, float(n), 0.0)
        assert entropy_reduction_strength(state) > 0

    def test_non_finite_gamma_rejected(self):
        with pytest.raises(ValueError):
            LogitState(0.5, 10, np.inf, 0.0)


class TestSoftmaxOracle:
    def test_zero_gammas_leave_logits_unchanged(self):
        state = LogitState(0.4, 5, 0.0, 0.0)
        new_target, new_nontarget = softmax_update_oracle(state, 1e-3)
        assert new_target == pytest.approx(0.6, abs=1e-15)
        assert new_nontarget == pytest.approx(0.1, abs=1e-15)

    def test_ce_null_epoch_raises_target(self):
        n = 10
        eps = (n - 1) / n
        state = LogitState(eps, n, float(n), 0.0)
        new_target, _ = softmax_update_oracle(state, 1e-6)
        assert new_target > 1 - eps

    def test_opposite_gammas_move_logits_oppositely(self):
        state = LogitState(0.3, 2, 2.0, -2.0)
        new_target, new_nontarget = softmax_update_oracle(state, 1e-6)
        assert new_target > 0.7
        assert new_nontarget < 0.3
        flipped = LogitState(0.3, 2, -2.0, 2.0)
        new_target, new_nontarget = softmax_update_oracle(flipped, 1e-6)
        assert new_target < 0.7
        assert new_nontarget > 0.3

    def test_outputs_stay_normalized(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            state = LogitState(rng.uniform(0.05, 0.95), 4, *rng.uniform(-50, 50, 2))
            new_target, new_nontarget = softmax_update_oracle(state, 1e-4)
            assert new_target + 3 * new_nontarget == pytest.approx(1.0, abs=1e-12)

    def test_bad_eta(self):
        with pytest.raises(ValueError):
            softmax_update_oracle(LogitState(0.5, 2, 1.0, 0.0), 0.0)


class TestBaikalRepulsion:
    def test_reference_points(self):
        nontarget, target = baikal_repulsion(0.1, 10)
        assert nontarget == pytest.approx(90.0)
        assert target == pytest.approx(1.9 / 0.81)
        nontarget, target = baikal_repulsion(0.5, 2)
        assert nontarget == pytest.approx(2.0)
        assert target == pytest.approx(6.0)

    def test_positive_coefficients(self):
        for eps in np.linspace(0.01, 0.5, 25):
            for n in (2, 3, 10, 50, 100):
                nontarget, target = baikal_repulsion(float(eps), n)
                assert nontarget > 0
                assert target > 0

    def test_nontarget_push_dominates_near_zero_error(self):
        for eps in (0.001, 0.01, 0.05, 0.1):
            for n in (3, 5, 10, 100):
                nontarget, target = baikal_repulsion(eps, n)
                assert nontarget > target

    def test_unbounded_as_epsilon_vanishes(self):
        assert baikal_repulsion(1e-9, 10)[0] > 1e9
        with pytest.raises(ValueError):
            baikal_repulsion(0.0, 10)


def fake_run_log(target_rows, n_classes):
    return SimpleNamespace(target_h=[np.asarray(row, dtype=float) for row in target_rows], n_classes=n_classes)


class TestAttractionTrace:
    def test_empty_log_gives_empty_trace(self):
        assert attraction_trace(fake_run_log([], 2), gamma_ce) == []

    def test_uniform_mse_record(self):
        """A uniform-output sample under MSE: both gamma values and a
        positive strength, matching the direct oracle's direction."""
        n = 4
        records = attraction_trace(fake_run_log([[1.0 / n]], n), gamma_mse)
        [rec] = records
        assert rec.gamma_t == pytest.approx(2.0 - 2.0 / n)
        assert rec.gamma_not_t == pytest.approx(-2.0 / n)
        assert rec.epsilon == pytest.approx((n - 1) / n)
        shift = oracle_target_shift(LogitState(rec.epsilon, n, rec.gamma_t, rec.gamma_not_t))
        assert np.sign(rec.strength) == np.sign(shift) == 1.0

    def test_boundary_records_flagged_and_excluded(self):
        records = attraction_trace(fake_run_log([[1.0, 0.5, 0.0]], 2), gamma_mse)
        assert [r.boundary for r in records] == [True, False, True]
        assert np.isnan(records[0].strength) and np.isnan(records[2].strength)
        fractions = strength_sign_fractions(records)
        assert fractions[0]["count"] == 1

    def test_determinism(self):
        log = fake_run_log([[0.4, 0.7], [0.8, 0.9]], 2)
        assert attraction_trace(log, gamma_ce) == attraction_trace(log, gamma_ce)

    def test_record_ordering(self):
        records = attraction_trace(fake_run_log([[0.4, 0.7], [0.8, 0.9]], 2), gamma_ce)
        assert [(r.epoch, r.sample_id) for r in records] == [(0, 0), (0, 1), (1, 0), (1, 1)]


class TestTraceCsv:
    def test_header_and_formatting(self, tmp_path):
        records = [
            TraceRecord(0, 0, 10.0, 0.0, 0.123456789123, 0.00123456789),
            TraceRecord(1, 3, -515.1595, -373.917, 0.5, float("nan"), boundary=True),
        ]
        path = tmp_path / "trace.csv"
        write_trace_csv(records, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,sample_id,gamma_t,gamma_not_t,epsilon,strength"
        assert lines[1] == "0,0,10,0,0.123456789,0.00123456789"
        assert lines[2].startswith("1,3,-515.1595,-373.917,0.5,nan")
        assert len(lines) == 3
