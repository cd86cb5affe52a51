import json

import numpy as np
import pytest

from multirobust.attacks import AttackConfig, AttackOutcome, pgd_attack
from multirobust.geometry import INF, Lp, RotateTranslate
from multirobust.tensor_nn import mlp
from multirobust.training import (
    RiskReport,
    TrainConfig,
    evaluate_adversarial,
    opt_baselines,
    train,
)


@pytest.fixture
def data(rng):
    x = rng.uniform(size=(40, 6))
    y = (x[:, 0] > x[:, 1]).astype(int)
    return x, y


def linf(eps=0.1, **kw):
    return AttackConfig(Lp(INF, eps), steps=5, **kw)


def same_params(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.params, b.params))


class TestConfig:
    def test_strategy_counts(self):
        with pytest.raises(ValueError):
            TrainConfig(strategy="single", attacks=[])
        with pytest.raises(ValueError):
            TrainConfig(strategy="max", attacks=[linf()])
        with pytest.raises(ValueError):
            TrainConfig(strategy="bogus")
        with pytest.raises(ValueError):
            TrainConfig(q_range=(0.9, 0.8))

    def test_rejects_incompatible(self, data):
        m = mlp((6,), [4], 2)
        cfg = TrainConfig(strategy="single", attacks=[AttackConfig(RotateTranslate(1, 1, 5.0))])
        with pytest.raises(ValueError):
            train(m, data, cfg)
        with pytest.raises(ValueError):
            train(mlp((5,), [4], 2), data, TrainConfig())
        with pytest.raises(ValueError):
            train(m, (np.zeros((0, 6)), np.zeros(0, dtype=int)), TrainConfig())


class TestStrategies:
    def test_reproducible(self, data):
        cfg = TrainConfig(epochs=2, batch_size=10, strategy="max",
                          attacks=[linf(), AttackConfig(Lp(1, 1.0), steps=5, restarts=2)])
        a, la = train(mlp((6,), [4], 2, seed=1), data, cfg)
        b, lb = train(mlp((6,), [4], 2, seed=1), data, cfg)
        assert same_params(a, b) and la.to_jsonl() == lb.to_jsonl()

    def test_input_model_untouched(self, data):
        m = mlp((6,), [4], 2, seed=1)
        before = [p.copy() for p in m.params]
        train(m, data, TrainConfig(epochs=1, batch_size=10))
        assert all(np.array_equal(p, q) for p, q in zip(before, m.params))

    def test_max_of_duplicates_is_single(self, data):
        m = mlp((6,), [4], 2, seed=2)
        single, _ = train(m, data, TrainConfig(epochs=2, batch_size=10, strategy="single",
                                               attacks=[linf()]))
        mx, _ = train(m, data, TrainConfig(epochs=2, batch_size=10, strategy="max",
                                           attacks=[linf(), linf()]))
        assert same_params(single, mx)

    def test_avg_of_duplicates_is_single(self, data):
        m = mlp((6,), [4], 2, seed=2)
        single, _ = train(m, data, TrainConfig(epochs=2, batch_size=10, strategy="single",
                                               attacks=[linf()]))
        avg, _ = train(m, data, TrainConfig(epochs=2, batch_size=10, strategy="avg",
                                            attacks=[linf(), linf()]))
        assert same_params(single, avg)

    def test_max_logs_selected_loss(self, data):
        x, y = data
        m = mlp((6,), [4], 2, seed=3)
        a, b = linf(0.2), AttackConfig(Lp(2, 0.5), steps=5)
        cfg = TrainConfig(epochs=1, batch_size=len(x), strategy="max", attacks=[a, b],
                          optimizer={"kind": "sgd", "lr": 0.0}, shuffle=False)
        _, log = train(m, data, cfg)
        la = pgd_attack(m, x, y, a).loss
        lb = pgd_attack(m, x, y, b).loss
        assert log.records[0]["batch_losses"][0] == pytest.approx(np.maximum(la, lb).mean(),
                                                                  rel=1e-12)

    def test_warmup_budgets_logged(self, data):
        cfg = TrainConfig(epochs=2, batch_size=20, strategy="single", attacks=[linf(0.3)],
                          warmup_fraction=1 / 3)
        _, log = train(mlp((6,), [4], 2), data, cfg)
        assert log.records[0]["budgets"][0]["eps"] == pytest.approx(0.1)
        assert log.records[1]["budgets"][0]["eps"] == pytest.approx(0.3)
        assert log.records[0]["budgets"][0]["p"] == "inf"

    def test_log_records(self, data):
        cfg = TrainConfig(epochs=3, batch_size=10, strategy="single", attacks=[linf()],
                          lr_schedule={2: 1e-4})
        _, log = train(mlp((6,), [4], 2), data, cfg, probe=data)
        lines = log.to_jsonl().splitlines()
        assert len(lines) == 3
        recs = [json.loads(s) for s in lines]
        assert [r["epoch"] for r in recs] == [1, 2, 3]
        assert recs[2]["lr"] == 1e-4
        assert all(0 <= r["clean_acc"] <= 1 and len(r["adv_acc"]) == 1 for r in recs)

    def test_natural_training_learns(self, data):
        cfg = TrainConfig(epochs=30, batch_size=10, optimizer={"kind": "adam", "lr": 0.02})
        m, log = train(mlp((6,), [8], 2, seed=0), data, cfg)
        assert log.records[-1]["train_loss"] < log.records[0]["train_loss"]
        assert np.mean(m.predict(data[0]) == data[1]) > 0.8


class TestEvaluation:
    def _fixed(self, success):
        success = np.asarray(success, dtype=bool)

        def attack(model, x, y):
            return AttackOutcome(x, np.zeros(len(x)), success, np.zeros(len(x)))
        return attack

    def test_single_attack_union(self, data):
        m = mlp((6,), [4], 2)
        rep = evaluate_adversarial(m, data, [linf()])
        assert rep.union_accuracy == rep.per_attack_accuracy[0] == rep.average_accuracy

    def test_disjoint_halves(self, data):
        m = mlp((6,), [4], 2)
        n = len(data[1])
        half = np.arange(n) < n // 2
        rep = evaluate_adversarial(m, data, [self._fixed(half), self._fixed(~half)])
        assert rep.union_accuracy == 0.0
        assert rep.average_accuracy == 0.5

    def test_ordering_and_mean(self, data, rng):
        m = mlp((6,), [4], 2)
        n = len(data[1])
        fns = [self._fixed(rng.uniform(size=n) < p) for p in (0.2, 0.5, 0.7)]
        rep = evaluate_adversarial(m, data, fns)
        per = rep.per_attack_accuracy
        assert rep.union_accuracy <= min(per) <= rep.average_accuracy
        assert abs(rep.average_accuracy - np.mean(per)) <= 1e-12

    def test_groups(self, data):
        m = mlp((6,), [4], 2)
        n = len(data[1])
        a = np.arange(n) % 2 == 0
        b = np.arange(n) % 3 == 0
        rep = evaluate_adversarial(m, data, [self._fixed(a), self._fixed(b), self._fixed(~a)],
                                   names=["x", "y", "z"], groups=["g1", "g1", "g2"])
        assert rep.group_names() == ["g1", "g2"]
        assert rep.per_type_accuracy[0] == np.mean(~(a | b))

    def test_dict_round_trip(self, data, rng):
        m = mlp((6,), [4], 2)
        n = len(data[1])
        rep = evaluate_adversarial(m, data, [self._fixed(rng.uniform(size=n) < 0.4), linf()])
        d = json.loads(json.dumps(rep.to_dict()))
        back = RiskReport.from_dict(d)
        assert back.union_accuracy == rep.union_accuracy
        assert back.average_accuracy == rep.average_accuracy
        assert 0 < d["union_ci"] < 0.5

    def test_check_on_complementary_masks(self):
        rep = RiskReport(["a", "b"], ["a", "b"], np.array([[True, False], [False, True]]),
                         np.array([True, True]))
        assert rep.check() is rep
        assert (rep.union_accuracy, rep.average_accuracy) == (0.0, 0.5)


class TestBaselines:
    def test_examples(self):
        mx, avg = opt_baselines([0.086, 0.054])
        assert mx == 0.086 and avg == pytest.approx(0.070)
        assert opt_baselines([0.2, 0.2]) == (0.2, 0.2)
        assert opt_baselines([0.3]) == (0.3, 0.3)

    def test_validation(self):
        with pytest.raises(ValueError):
            opt_baselines([])
        with pytest.raises(ValueError):
            opt_baselines([1.2])
