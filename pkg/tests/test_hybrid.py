import numpy as np
import pytest

from pcfilter import diffcore as dc
from pcfilter.diffcore import ShapeError, Tape, Tensor
from pcfilter.geometry import PointCloud, bounding_sphere_radius
from pcfilter.hybrid import (
    HybridModel,
    ModelConfig,
    TrainConfig,
    TrainingError,
    build_training_set,
    config_for,
    long_forward,
    long_features,
    loss_hybrid,
    loss_long,
    loss_short_emd,
    loss_short_l2,
    make_training_sample,
    short_forward,
    train,
    training_step,
)
from pcfilter.metrics import emd_exact
from pcfilter.shapes import ShapeSpec, generate

from conftest import TINY, brute_emd
from gradcases import check


def tiny_dataset(n_points=40, k=16, count=3):
    cloud, _ = generate(ShapeSpec("sphere", n_points, seed=2))
    return build_training_set([("sphere", cloud)], k, count, seed=0)


class TestLosses:
    def test_long_loss_hand_values(self):
        x0 = np.zeros((4, 3))
        x1 = np.tile([1.0, 0, 0], (4, 1))
        assert float(loss_long(Tensor(x1 - x0), x0, x1).data) == 0.0
        assert float(loss_long(Tensor(np.zeros((4, 3))), x0, x1).data) == 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_l2_losses_match_sum_of_squares(self, seed):
        r = np.random.default_rng(seed)
        v, x0, x1 = (r.normal(size=(9, 3)) for _ in range(3))
        oracle_long = sum(sum((v[i, c] - (x1[i, c] - x0[i, c])) ** 2 for c in range(3)) for i in range(9)) / 9
        assert float(loss_long(Tensor(v), x0, x1).data) == pytest.approx(oracle_long, abs=1e-12)
        oracle_short = sum(sum((v[i, c] - (x1[i, c] - x0[i, c])) ** 2 for c in range(3)) for i in range(9)) / 9
        assert float(loss_short_l2(Tensor(v), x0, x1).data) == pytest.approx(oracle_short, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_long(Tensor(np.zeros((3, 3))), np.zeros((3, 3)), np.zeros((4, 3)))
        with pytest.raises(ShapeError):
            loss_short_emd(Tensor(np.zeros((3, 3))), np.zeros((2, 3)))

    def test_emd_loss_is_zero_on_permutation(self, rng):
        x1 = rng.normal(size=(20, 3))
        assert float(loss_short_emd(Tensor(x1[rng.permutation(20)]), x1).data) == 0.0

    def test_emd_cross_pairing(self):
        a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        assert float(loss_short_emd(Tensor(a), a[::-1].copy()).data) == 0.0

    @pytest.mark.parametrize("n", range(1, 7))
    def test_emd_loss_matches_brute_force(self, n, rng):
        for _ in range(5):
            a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
            assert float(loss_short_emd(Tensor(a), b).data) * n == pytest.approx(brute_emd(a, b), abs=1e-12)

    def test_hybrid_arithmetic(self):
        assert float(loss_hybrid(Tensor(np.array(0.1)), Tensor(np.array(0.5)), 10.0).data) == pytest.approx(1.5)
        assert float(loss_hybrid(Tensor(np.array(0.0)), Tensor(np.array(0.0)), 10.0).data) == 0.0
        assert float(loss_hybrid(Tensor(np.array(0.2)), None, 10.0).data) == pytest.approx(2.0)


class TestTrainingSample:
    def test_zero_sigma(self, rng):
        x1 = rng.normal(size=(10, 3))
        s = make_training_sample(x1, 0.0, rng)
        assert np.array_equal(s.x0, x1)
        np.testing.assert_allclose(s.xt, x1, rtol=1e-15, atol=0)

    def test_deterministic(self):
        x1 = np.random.default_rng(0).normal(size=(10, 3))
        a = make_training_sample(x1, 0.1, np.random.default_rng(5))
        b = make_training_sample(x1, 0.1, np.random.default_rng(5))
        assert a.t == b.t and a.x0.tobytes() == b.x0.tobytes() and a.xt.tobytes() == b.xt.tobytes()

    def test_interpolation(self, rng):
        s = make_training_sample(rng.normal(size=(10, 3)), 0.3, rng)
        np.testing.assert_allclose(s.xt, (1 - s.t) * s.x0 + s.t * s.x1, atol=1e-15)


class TestModel:
    def test_default_parameter_groups(self):
        m = HybridModel()
        assert set(m.groups()) == {"long_encoder", "long_decoder", "short_encoder", "short_decoder"}
        assert m.short_encoder.config.in_width == 3 + 96

    def test_zero_model_outputs_zero(self, rng):
        m = HybridModel.zeros(TINY)
        x = rng.normal(size=(20, 3))
        feats, v = long_forward(m, x)
        assert feats.shape == (20, 10) and not v.data.any()
        assert not short_forward(m, x, feats).data.any()

    def test_baseline_has_no_long_module(self, rng):
        cfg, _ = config_for("baseline_score", TINY)
        m = HybridModel(cfg)
        assert m.long_encoder is None and m.short_encoder.config.in_width == 3
        assert long_features(m, rng.normal(size=(10, 3))) is None

    @pytest.mark.parametrize("variant", ["baseline_score", "fc_decoder"])
    def test_variants_parameter_matched(self, variant):
        target = HybridModel().num_parameters()
        cfg, _ = config_for(variant)
        assert abs(HybridModel(cfg).num_parameters() - target) / target < 0.02

    def test_row_mismatch(self, rng):
        m = HybridModel(TINY)
        with pytest.raises(ShapeError):
            short_forward(m, rng.normal(size=(10, 3)), Tensor(np.zeros((9, 10))))

    def test_state_dict_round_trip(self):
        a, b = HybridModel(TINY, seed=1), HybridModel(TINY, seed=2)
        b.load_state_dict(a.state_dict())
        for k, v in a.state_dict().items():
            assert v.tobytes() == b.state_dict()[k].tobytes()

    def test_config_round_trip(self):
        cfg, _ = config_for("fc_decoder")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestGradients:
    @pytest.mark.parametrize("name", ["long_module", "short_module", "long_loss", "short_l2_loss",
                                      "short_emd_loss", "hybrid_combination", "joint_loss"])
    def test_finite_differences(self, name):
        report = check(name, 0)
        assert report.max_rel_error < 1e-4, report.worst

    def test_conditioning_gradient_nonzero(self, rng):
        m = HybridModel(TINY, seed=3)
        xt = rng.normal(size=(12, 3))
        feats = Tensor(rng.normal(size=(12, 10)), requires_grad=True)
        with Tape() as tape:
            loss = dc.total(short_forward(m, xt, feats))
        tape.backward(loss)
        assert np.abs(feats.grad).max() > 0

    def test_joint_gradient_reaches_every_parameter(self):
        m = HybridModel(TINY, seed=4)
        seen = {k: False for k in m.parameters()}
        for seed in range(20):
            r = np.random.default_rng(seed)
            sample = make_training_sample(r.normal(size=(12, 3)), 0.1, r)
            tape, total, _ = training_step(m, sample, TrainConfig())
            tape.backward(total)
            for k, p in m.parameters().items():
                seen[k] |= bool(np.any(p.grad != 0))
        assert all(seen.values()), [k for k, v in seen.items() if not v]


class TestTrain:
    def test_zero_steps_leaves_model(self):
        m = HybridModel(TINY, seed=0)
        before = m.state_dict()
        train(m, tiny_dataset(), TrainConfig(steps=0, patch_k=16))
        assert all(before[k].tobytes() == v.tobytes() for k, v in m.state_dict().items())

    def test_deterministic(self):
        def run():
            m = HybridModel(TINY, seed=0)
            _, trace = train(m, tiny_dataset(), TrainConfig(steps=3, patch_k=16, lr=1e-3, seed=9))
            return m.state_dict(), [t.hybrid for t in trace]

        (a, ta), (b, tb) = run(), run()
        assert ta == tb
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_changes_all_groups(self):
        m = HybridModel(TINY, seed=0)
        before = m.state_dict()
        train(m, tiny_dataset(), TrainConfig(steps=2, patch_k=16, lr=1e-3))
        after = m.state_dict()
        for group in m.groups():
            assert any(not np.array_equal(before[k], after[k]) for k in before if k.startswith(group))

    def test_l2_variant_and_baseline_train(self):
        cfg, loss = config_for("baseline_score", TINY)
        _, trace = train(HybridModel(cfg), tiny_dataset(), TrainConfig(steps=2, patch_k=16, loss="l2"))
        assert all(t.long == 0.0 for t in trace)

    def test_empty_dataset(self):
        with pytest.raises(TrainingError):
            train(HybridModel(TINY), [], TrainConfig(steps=1))

    def test_non_finite_reports_step(self):
        m = HybridModel(TINY, seed=0)
        m.short_decoder.layers[-1].self2.b.data[:] = np.inf
        with pytest.raises(TrainingError, match="step 0"):
            train(m, tiny_dataset(), TrainConfig(steps=2, patch_k=16))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lam=0)
        with pytest.raises(ValueError):
            TrainConfig(sigma_h=0)


def test_emd_exact_matches_loss(rng):
    a, b = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    cost, _ = emd_exact(a, b)
    assert float(loss_short_emd(Tensor(a), b).data) == pytest.approx(cost / 30, abs=1e-12)


def test_build_training_set_labels():
    clouds = [(k, generate(ShapeSpec(k, 300, seed=i))[0]) for i, k in enumerate(["sphere", "torus"])]
    ds = build_training_set(clouds, 32, 4, seed=1)
    assert [d.label for d in ds] == ["sphere"] * 4 + ["torus"] * 4
    assert all(isinstance(d.patch.points, np.ndarray) and len(d.patch) == 32 for d in ds)
    assert ds[0].cloud_radius == bounding_sphere_radius(clouds[0][1])
    assert isinstance(clouds[0][1], PointCloud)
