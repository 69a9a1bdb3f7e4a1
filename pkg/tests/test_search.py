import dataclasses
import logging
import math

import pytest

import tsaa.search as search
from tsaa.asha import Trial, TrialStatus, budget_bound
from tsaa.augment import OpSpec, PolicyDistribution, SubPolicy, TransformKind
from tsaa.forecast import Forecaster, ForecasterSpec, TrainingError, fine_tune
from tsaa.search import (
    TsaaConfig,
    finalize,
    prepare_search_data,
    run_tsaa,
    select_policy,
    shared_epoch,
    step1_shared_weights,
    step2_search,
)
from tsaa.synth import SynthSpec, gen_trend_shift

SPEC = ForecasterSpec("linear", lookback=24, horizon=12, channels=1, lr=0.05, batch_size=32, seed=0)


@pytest.fixture(scope="module")
def data():
    series = gen_trend_shift(SynthSpec(length=600, period=12, trend_slope=0.01, noise_sigma=0.05, seed=0))
    return prepare_search_data(series, 24, 12)


@pytest.fixture(scope="module")
def shared(data):
    return step1_shared_weights(SPEC, data, TsaaConfig())


def cfg(**kw):
    base = dict(T_max=8, seed=0)
    base.update(kw)
    return TsaaConfig(**base)


def dump(trials):
    return [t.to_dict() for t in trials]


class TestStep1:
    @pytest.mark.parametrize("beta,K,expected", [(0.5, 10, (5, 5)), (0.5, 8, (4, 4)), (0.0, 7, (0, 7)), (0.3, 7, (2, 5))])
    def test_shared_epoch(self, beta, K, expected):
        assert shared_epoch(beta, K) == expected

    def test_checkpoint_index(self, shared):
        assert shared.omega_share.epoch == math.floor(0.5 * shared.K)
        assert shared.R == shared.K - shared.omega_share.epoch
        assert shared.baseline_val == min(shared.report.val_losses)

    def test_beta_zero_shares_initialization(self, data, caplog):
        with caplog.at_level(logging.WARNING, logger="tsaa"):
            s = step1_shared_weights(SPEC, data, TsaaConfig(beta=0.0))
        assert s.omega_share.epoch == 0 and s.R == s.K
        assert any("initialization" in r.message for r in caplog.records)

    @pytest.mark.parametrize("bad", [dict(beta=1.0), dict(beta=-0.1), dict(T_max=0), dict(eta=1), dict(exploration_fraction=1.5)])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            TsaaConfig(**bad)


def done(i, loss, status=TrialStatus.COMPLETED):
    sp = SubPolicy((OpSpec(TransformKind.JITTER, 0.1 + 0.01 * i), OpSpec(TransformKind.FLIP, 0.5)))
    return Trial(i, sp, status=status, final_loss=loss, epochs_spent=1)


class TestSelectPolicy:
    def test_filter_and_sort(self):
        trials = [done(0, 0.9), done(1, 0.8), done(2, 0.7), done(3, 0.95)]
        p = select_policy(trials, 0.85, 3)
        assert p.subpolicies == [trials[2].subpolicy, trials[1].subpolicy]

    def test_all_worse(self):
        assert len(select_policy([done(0, 0.9), done(1, 1.0)], 0.5, 3)) == 0

    def test_top_k(self):
        trials = [done(i, 0.1 * (i + 1)) for i in range(5)]
        assert select_policy(trials, 1.0, 3).subpolicies == [t.subpolicy for t in trials[:3]]

    def test_pruned_and_failed_excluded(self):
        trials = [done(0, 0.1, TrialStatus.PRUNED), done(1, math.inf, TrialStatus.FAILED), done(2, 0.3)]
        assert select_policy(trials, 1.0, 3).subpolicies == [trials[2].subpolicy]

    def test_equal_to_baseline_excluded(self):
        assert len(select_policy([done(0, 0.5)], 0.5, 3)) == 0


class TestStep2:
    def test_startup_fraction(self, shared, data):
        trials = step2_search(shared, SPEC, data, cfg(T_max=10))
        assert [t.source for t in trials] == ["random"] * 3 + ["tpe"] * 7

    def test_budget_and_schedule(self, shared, data):
        c = cfg(T_max=12)
        trials = step2_search(shared, SPEC, data, c)
        assert sum(t.epochs_spent for t in trials) <= budget_bound(c.beta, shared.K, c.T_max)
        for t in trials:
            if t.status is TrialStatus.PRUNED:
                assert t.epochs_spent == t.pruned_at
            assert t.epochs_spent <= shared.R

    def test_single_epoch_resource(self, shared, data):
        trials = step2_search(dataclasses.replace(shared, R=1), SPEC, data, cfg())
        assert all(t.epochs_spent == 1 and t.status is TrialStatus.COMPLETED for t in trials)

    def test_deterministic(self, shared, data):
        assert dump(step2_search(shared, SPEC, data, cfg())) == dump(step2_search(shared, SPEC, data, cfg()))

    def test_random_mode_equals_full_exploration(self, shared, data):
        a = step2_search(shared, SPEC, data, cfg(), mode="random")
        b = step2_search(shared, SPEC, data, cfg(exploration_fraction=1.0))
        assert dump(a) == dump(b)

    def test_seed_isolation(self, shared, data):
        short = step2_search(shared, SPEC, data, cfg(T_max=6, n_startup=3))
        long = step2_search(shared, SPEC, data, cfg(T_max=10, n_startup=3))
        assert dump(long[:6]) == dump(short)

    def test_resume(self, shared, data):
        full = step2_search(shared, SPEC, data, cfg())
        resumed = step2_search(shared, SPEC, data, cfg(), previous=full[:4])
        assert dump(resumed) == dump(full)

    def test_failed_trial_continues(self, shared, data, monkeypatch):
        real = search.fine_tune

        def flaky(*args, **kw):
            if kw["aug_seed"] == search._seed(0, 2, 1):
                raise TrainingError("boom")
            return real(*args, **kw)

        monkeypatch.setattr(search, "fine_tune", flaky)
        trials = step2_search(shared, SPEC, data, cfg(T_max=5))
        assert trials[1].status is TrialStatus.FAILED and trials[1].final_loss == math.inf
        assert len(trials) == 5 and all(t.status is not TrialStatus.FAILED for t in trials if t.trial_id != 1)

    def test_workers(self, shared, data):
        c = cfg(workers=2)
        trials = step2_search(shared, SPEC, data, c)
        assert [t.trial_id for t in trials] == list(range(8))
        assert sum(t.epochs_spent for t in trials) <= budget_bound(c.beta, shared.K, c.T_max)

    def test_bad_mode(self, shared, data):
        with pytest.raises(ValueError):
            step2_search(shared, SPEC, data, cfg(), mode="grid")


class TestFinalize:
    def test_empty_policy_is_baseline(self, shared, data):
        res = finalize(shared, PolicyDistribution([], 2), SPEC, data, cfg())
        assert res.final_test_mse == shared.baseline_test["mse"]
        assert res.final_test_mae == shared.baseline_test["mae"]
        assert res.improvement_mse == 0.0

    def test_identity_policy_equals_plain_fine_tune(self, shared, data):
        identity = SubPolicy((OpSpec(TransformKind.IDENTITY, 0.5), OpSpec(TransformKind.IDENTITY, 0.5)))
        res = finalize(shared, PolicyDistribution([identity], 2), SPEC, data, cfg())
        plain = fine_tune(shared.omega_share, SPEC, data.train, data.val, epoch_budget=shared.R)
        assert res.final_val == plain.final_loss
        test = Forecaster.from_checkpoint(SPEC, plain.best_checkpoint).evaluate_all(data.test)
        assert res.final_test_mse == test["mse"]

    def test_end_to_end_invariants(self, shared, data):
        c = cfg(T_max=10)
        res = run_tsaa(SPEC, data, c, shared=shared)
        losses = {t.subpolicy: t.final_loss for t in res.trials if t.status is TrialStatus.COMPLETED}
        assert len(res.p_star) <= c.k
        assert all(losses[sp] < res.baseline_val for sp in res.p_star.subpolicies)
        d = res.to_dict(c.T_max, c.beta)
        assert d["epochs_spent"] <= d["budget_bound"]
        assert d["n_trials"] == 10

    def test_baseline_only_mode(self, shared, data):
        res = run_tsaa(SPEC, data, cfg(), mode="baseline-only", shared=shared)
        assert res.trials == [] and res.final_test_mse == shared.baseline_test["mse"]

    def test_unknown_mode(self, shared, data):
        with pytest.raises(ValueError):
            run_tsaa(SPEC, data, cfg(), mode="grid", shared=shared)
