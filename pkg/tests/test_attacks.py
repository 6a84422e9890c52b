import numpy as np
import pytest

from gll.attacks import (
    AttackConfig,
    GllAttackModel,
    SoftmaxAttackModel,
    attack_sweep,
    cw_attack,
    fgsm,
    ifgsm,
    pgd_train_step,
    run_attack,
)
from gll.nn import Mlp, TrainConfig, TrainStepModel, select_base


def softmax_toy(rng, in_dim=2, n_classes=2):
    encoder = Mlp.create([in_dim, 6, 4], rng)
    projection = Mlp.create([4, n_classes], rng)
    return SoftmaxAttackModel(encoder, projection)


def gll_toy(rng, n_anchor=10, in_dim=2, n_classes=2):
    encoder = Mlp.create([in_dim, 6, 2], rng)
    ax = rng.random((n_anchor, in_dim))
    ay = rng.integers(0, n_classes, n_anchor)
    ay[:n_classes] = np.arange(n_classes)  # every class anchored
    return GllAttackModel(encoder, ax, ay, n_classes, k=3, tau=0.1, bandwidth=1.0)


class TestFgsm:
    def test_eps_zero_is_identity(self):
        rng = np.random.default_rng(0)
        model = softmax_toy(rng)
        x = rng.random((5, 2))
        y = rng.integers(0, 2, 5)
        res = fgsm(model, x, y, eps=0.0)
        assert np.array_equal(res.adversarial, x)

    def test_zero_gradient_is_identity(self):
        encoder = Mlp([np.zeros((2, 3))], [np.zeros(3)], ["identity"])
        projection = Mlp([np.zeros((3, 2))], [np.zeros(2)], ["identity"])
        model = SoftmaxAttackModel(encoder, projection)
        x = np.random.default_rng(1).random((4, 2))
        res = fgsm(model, x, np.zeros(4, dtype=int), eps=0.1)
        assert np.array_equal(res.adversarial, x)  # sign(0) = 0

    def test_budget_and_range(self):
        rng = np.random.default_rng(2)
        model = softmax_toy(rng)
        x = rng.random((20, 2))
        y = rng.integers(0, 2, 20)
        for eps in (0.05, 0.3):
            res = fgsm(model, x, y, eps=eps)
            assert np.all(res.linf <= eps + 1e-12)
            assert res.adversarial.min() >= 0.0 and res.adversarial.max() <= 1.0

    def test_small_step_does_not_decrease_loss(self):
        rng = np.random.default_rng(3)
        model = softmax_toy(rng)
        x = rng.random((10, 2)) * 0.8 + 0.1  # keep away from clamp
        y = rng.integers(0, 2, 10)
        loss0, _ = model.loss_and_input_grad(x, y)
        res = fgsm(model, x, y, eps=1e-4)
        loss1, _ = model.loss_and_input_grad(res.adversarial, y)
        assert loss1 >= loss0 - 1e-12


class TestIfgsm:
    def test_single_large_step_equals_fgsm(self):
        rng = np.random.default_rng(4)
        model = softmax_toy(rng)
        x = rng.random((8, 2))
        y = rng.integers(0, 2, 8)
        eps = 0.1
        a = fgsm(model, x, y, eps=eps)
        b = ifgsm(model, x, y, eps=eps, alpha=eps, n_iter=1)
        assert np.allclose(a.adversarial, b.adversarial, atol=1e-15)

    def test_budget_and_range(self):
        rng = np.random.default_rng(5)
        model = softmax_toy(rng)
        x = rng.random((15, 2))
        y = rng.integers(0, 2, 15)
        res = ifgsm(model, x, y, eps=0.3, alpha=0.05)
        assert np.all(res.linf <= 0.3 + 1e-12)
        assert res.adversarial.min() >= 0.0 and res.adversarial.max() <= 1.0

    def test_default_iteration_heuristic(self):
        rng = np.random.default_rng(6)
        model = softmax_toy(rng)
        x = rng.random((4, 2))
        y = rng.integers(0, 2, 4)
        explicit = ifgsm(model, x, y, eps=0.2, alpha=0.05, n_iter=20)
        default = ifgsm(model, x, y, eps=0.2, alpha=0.05)  # ceil(5*0.2/0.05) = 20
        assert np.array_equal(explicit.adversarial, default.adversarial)

    def test_gll_head_budget(self):
        rng = np.random.default_rng(7)
        model = gll_toy(rng)
        x = rng.random((6, 2))
        y = rng.integers(0, 2, 6)
        res = ifgsm(model, x, y, eps=0.3, alpha=0.1)
        assert np.all(res.linf <= 0.3 + 1e-12)


class TestCw:
    def test_c_zero_returns_negligible_perturbation(self):
        rng = np.random.default_rng(8)
        model = softmax_toy(rng)
        x = rng.random((6, 2)) * 0.8 + 0.1
        res = cw_attack(model, x, c=0.0, iters=30)
        assert np.all(res.l2 <= 1e-3)
        assert not res.success.any()

    def test_success_matches_reclassification(self):
        rng = np.random.default_rng(9)
        model = softmax_toy(rng)
        x = rng.random((12, 2))
        res = cw_attack(model, x, c=50.0, iters=80, lr=0.05)
        F = model.predict_proba(res.adversarial)
        pred = np.argmax(F, axis=1)
        masked = model.predict_proba(x)
        masked[np.arange(12), res.clean_pred] = -np.inf
        target = np.argmax(masked, axis=1)
        assert np.array_equal(res.success, pred == target)
        assert np.array_equal(res.attacked_pred, pred)

    def test_logistic_boundary_distance(self):
        # P(class 1) = sigmoid(a.(x - x0)); boundary is the line a.(x - x0) = 0
        a = np.array([3.0, -1.0])
        x0 = np.array([0.45, 0.55])
        encoder = Mlp([np.eye(2)], [np.zeros(2)], ["identity"])
        projection = Mlp(
            [np.stack([np.zeros(2), a], axis=1)], [np.array([0.0, -a @ x0])],
            ["identity"],
        )
        model = SoftmaxAttackModel(encoder, projection)
        rng = np.random.default_rng(10)
        x = rng.random((20, 2)) * 0.5 + 0.25
        res = cw_attack(model, x, c=100.0, iters=5000, lr=0.01)
        dist_true = np.abs((x - x0) @ a) / np.linalg.norm(a)
        ok = res.success
        assert ok.mean() > 0.8
        ratio = res.l2[ok] / dist_true[ok]
        assert np.all(ratio <= 1.1)
        assert np.all(ratio >= 0.9)


class TestPgdTraining:
    def _model(self, rng):
        cfg = TrainConfig(layer_sizes=[2, 6, 2], k=3, tau=0.1, bandwidth=1.0,
                          base_per_batch=4)
        encoder = Mlp.create(cfg.layer_sizes, rng)
        return TrainStepModel(encoder, None, "gll", 2, cfg)

    def test_eps_zero_is_clean_step(self):
        rng = np.random.default_rng(11)
        model = self._model(rng)
        x = rng.random((12, 2))
        y = rng.integers(0, 2, 12)
        base_idx = select_base(y, 4, mode="fixed")
        loss_adv, grads_adv, _ = pgd_train_step(
            model, x, y, base_idx, eps=0.0, alpha=0.01, iters=5,
            rng=np.random.default_rng(0),
        )
        loss_clean, _, grads_clean, _ = model.loss_probs_param_grads(x, y, base_idx)
        assert loss_adv == loss_clean
        for a, b in zip(grads_adv, grads_clean):
            assert np.array_equal(a, b)

    def test_iters_zero_jitters_within_box(self):
        rng = np.random.default_rng(12)
        model = self._model(rng)
        x = rng.random((10, 2)) * 0.5 + 0.25
        y = rng.integers(0, 2, 10)
        base_idx = select_base(y, 4, mode="fixed")
        from gll.nn import pgd_perturb

        adv = pgd_perturb(model, x, y, base_idx, eps=0.1, alpha=0.01, iters=0,
                          rng=np.random.default_rng(5))
        assert np.all(np.abs(adv - x) <= 0.1 + 1e-12)
        assert not np.array_equal(adv, x)

    def test_deterministic_given_rng_seed(self):
        rng = np.random.default_rng(13)
        model = self._model(rng)
        x = rng.random((10, 2))
        y = rng.integers(0, 2, 10)
        base_idx = select_base(y, 4, mode="fixed")
        from gll.nn import pgd_perturb

        a = pgd_perturb(model, x, y, base_idx, 0.1, 0.02, 3, np.random.default_rng(9))
        b = pgd_perturb(model, x, y, base_idx, 0.1, 0.02, 3, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestSweep:
    def test_eps_zero_row_equals_natural_accuracy(self):
        rng = np.random.default_rng(14)
        model = softmax_toy(rng)
        x = rng.random((30, 2))
        y = rng.integers(0, 2, 30)
        natural = float(np.mean(np.argmax(model.predict_proba(x), axis=1) == y))
        rows = attack_sweep(model, x, y, [AttackConfig("fgsm", eps=0.0)])
        assert rows[0]["accuracy"] == natural
        assert rows[0]["mean_l2_sq_distance"] == 0.0

    def test_accuracy_nonincreasing_in_eps(self):
        rng = np.random.default_rng(15)
        model = softmax_toy(rng)
        x = rng.random((40, 2))
        y = rng.integers(0, 2, 40)
        grid = [AttackConfig("fgsm", eps=e) for e in (0.0, 0.1, 0.2, 0.3)]
        rows = attack_sweep(model, x, y, grid)
        accs = [r["accuracy"] for r in rows]
        for a, b in zip(accs, accs[1:]):
            assert b <= a + 0.02  # monotone up to 2% slack

    def test_distance_column_matches_recomputation(self, tmp_path):
        rng = np.random.default_rng(16)
        model = softmax_toy(rng)
        x = rng.random((10, 2))
        y = rng.integers(0, 2, 10)
        rows = attack_sweep(model, x, y, [AttackConfig("ifgsm", eps=0.2, alpha=0.05)],
                            dump_dir=tmp_path, seed=16)
        import json

        blob = (tmp_path / "adv_ifgsm_0.2.f64").read_bytes()
        meta = json.loads((tmp_path / "adv_ifgsm_0.2.f64.json").read_text())
        adv = np.frombuffer(blob, dtype="<f8").reshape(meta["shape"])
        recomputed = float(np.mean(np.sum((adv - x) ** 2, axis=1)))
        assert rows[0]["mean_l2_sq_distance"] == pytest.approx(recomputed, rel=1e-12)

    def test_unknown_kind_rejected(self):
        rng = np.random.default_rng(17)
        model = softmax_toy(rng)
        with pytest.raises(ValueError):
            run_attack(model, rng.random((2, 2)), np.zeros(2, dtype=int),
                       AttackConfig("zap"))


class TestGllGradientSource:
    def test_input_grad_matches_fd(self):
        rng = np.random.default_rng(18)
        model = gll_toy(rng)
        x = rng.random((10, 2))
        y = rng.integers(0, 2, 10)
        _, grad = model.loss_and_input_grad(x, y)
        h = 1e-5
        for i in range(10):
            for t in range(2):
                xp = x.copy()
                xp[i, t] += h
                plus, _ = model.loss_and_input_grad(xp, y)
                xp[i, t] -= 2 * h
                minus, _ = model.loss_and_input_grad(xp, y)
                fd = (plus - minus) / (2 * h)
                if abs(grad[i, t]) >= 1e-3:
                    assert abs(fd - grad[i, t]) / abs(grad[i, t]) <= 1e-4
                else:
                    assert abs(fd - grad[i, t]) <= 1e-6

    def test_weighted_proba_grad_matches_fd(self):
        rng = np.random.default_rng(19)
        model = gll_toy(rng)
        x = rng.random((8, 2))
        R = rng.standard_normal((8, 2))
        _, grad = model.weighted_proba_grad(x, R)
        h = 1e-5
        for i in range(8):
            for t in range(2):
                xp = x.copy()
                xp[i, t] += h
                Fp, _ = model.weighted_proba_grad(xp, R)
                plus = float(np.sum(R * Fp))
                xp[i, t] -= 2 * h
                Fm, _ = model.weighted_proba_grad(xp, R)
                minus = float(np.sum(R * Fm))
                fd = (plus - minus) / (2 * h)
                if abs(grad[i, t]) >= 1e-3:
                    assert abs(fd - grad[i, t]) / abs(grad[i, t]) <= 1e-4
                else:
                    assert abs(fd - grad[i, t]) <= 1e-6


class TestIfgsmDominance:
    def test_ifgsm_at_least_as_strong_as_fgsm(self):
        # on a trained model, the iterated attack fools at least as often
        from gll.nn import TrainConfig, train

        rng = np.random.default_rng(20)
        half = 60
        X = np.vstack([rng.normal(0.3, 0.08, size=(half, 2)),
                       rng.normal(0.7, 0.08, size=(half, 2))])
        y = np.array([0] * half + [1] * half)
        perm = rng.permutation(2 * half)
        X, y = np.clip(X[perm], 0, 1), y[perm]
        cfg = TrainConfig(layer_sizes=[2, 16, 4], epochs=150, k=4, head="softmax",
                          base_per_batch=4, lr=0.05, seed=0,
                          record_gll_when_softmax=False)
        result = train(cfg, X, y)
        model = SoftmaxAttackModel(result.encoder, result.projection)
        eps = 0.2
        acc_fgsm = float(np.mean(
            np.argmax(model.predict_proba(fgsm(model, X, y, eps).adversarial), axis=1) == y
        ))
        acc_ifgsm = float(np.mean(
            np.argmax(model.predict_proba(
                ifgsm(model, X, y, eps, alpha=0.05).adversarial), axis=1) == y
        ))
        assert acc_ifgsm <= acc_fgsm


class TestAttackConfigInvariants:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            AttackConfig("fgsm", eps=-0.1)
        with pytest.raises(ValueError):
            AttackConfig("ifgsm", eps=0.1, alpha=0.0)
        with pytest.raises(ValueError):
            AttackConfig("ifgsm", eps=0.1, n_iter=0)
        with pytest.raises(ValueError):
            AttackConfig("cw", c=-1.0)
        with pytest.raises(ValueError):
            AttackConfig("fgsm", lo=1.0, hi=0.0)
