import numpy as np
import pytest

from contrareg.autodiff import finite_diff_check
from contrareg.losses import MarginSpec, batch_all_triplet_adaptive, batch_all_triplet_fixed
from contrareg.model import EncoderConfig, QualityModel, ReferenceSet, nmr_score, nmr_scores


def tiny_model(mos_head=False, seed=0):
    return QualityModel(
        EncoderConfig(input_dim=3, hidden_dims=(4, 4), embed_dim=3, mos_head=mos_head),
        seed=seed,
    )


class TestEncoderConfig:
    def test_rejects_empty_hidden_dims(self):
        with pytest.raises(ValueError):
            EncoderConfig(input_dim=3, hidden_dims=())

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ValueError):
            EncoderConfig(input_dim=0, hidden_dims=(4,))


class TestEncode:
    def test_zero_parameters_give_zero_representation(self, rng):
        model = tiny_model()
        model.load_state_dict({p.name: np.zeros_like(p.data) for p in model.parameters()})
        h = model.encode(rng.standard_normal((5, 3)))
        assert np.array_equal(h, np.zeros(4))

    def test_single_frame_equals_frame_output(self, rng):
        model = tiny_model()
        x = rng.standard_normal((1, 3))
        h = model.encode(x)
        # manual per-frame MLP
        w0, b0 = model.encoder[0]
        w1, b1 = model.encoder[1]
        ref = np.maximum(x @ w0.data + b0.data, 0.0) @ w1.data + b1.data
        assert np.allclose(h, ref[0], atol=1e-12)

    def test_frame_permutation_invariant(self, rng):
        model = tiny_model()
        x = rng.standard_normal((7, 3))
        h1 = model.encode(x)
        h2 = model.encode(x[rng.permutation(7)])
        assert np.allclose(h1, h2, atol=1e-12)

    def test_rejects_wrong_feature_dim(self, rng):
        with pytest.raises(ValueError, match="features"):
            tiny_model().encode(rng.standard_normal((4, 5)))

    def test_batch_matches_single(self, rng):
        model = tiny_model()
        xs = [rng.standard_normal((t, 3)) for t in (2, 5, 1)]
        batch = model.encode_batch(xs, trainable=False).data
        for i, x in enumerate(xs):
            assert np.allclose(batch[i], model.encode(x), atol=1e-12)


class TestProject:
    def test_all_negative_representation_with_zero_bias_gives_zero(self):
        model = tiny_model()
        model.proj_b.data = np.zeros_like(model.proj_b.data)
        z = model.project(np.array([-1.0, -2.0, -0.5, -3.0]))
        assert np.array_equal(z, np.zeros(3))

    def test_identity_like_weights_on_positive_input(self):
        model = QualityModel(EncoderConfig(input_dim=3, hidden_dims=(3,), embed_dim=3))
        model.proj_w.data = np.eye(3)
        model.proj_b.data = np.zeros((1, 3))
        h = np.array([0.5, 1.0, 2.0])
        assert np.allclose(model.project(h), h)

    def test_gradient_through_encode_project_losses(self):
        for seed in range(4):
            r = np.random.default_rng(seed)
            model = tiny_model(seed=seed)
            xs = [r.standard_normal((2, 3)) for _ in range(5)]
            y = r.uniform(1, 5, 5)

            def fixed_loss():
                z = model.project_batch(model.encode_batch(xs))
                return batch_all_triplet_fixed(z, y, MarginSpec(mode="fixed", m=0.3)).loss

            def adaptive_loss():
                z = model.project_batch(model.encode_batch(xs))
                return batch_all_triplet_adaptive(z, y, MarginSpec(mode="adaptive", kappa=4.0)).loss

            assert finite_diff_check(fixed_loss, model.parameters()) < 1e-4
            assert finite_diff_check(adaptive_loss, model.parameters()) < 1e-4


class TestPredictMos:
    def test_zero_weights_bias_only(self, rng):
        model = tiny_model(mos_head=True)
        model.head_w.data = np.zeros_like(model.head_w.data)
        model.head_b.data = np.array([[3.0]])
        assert model.predict_mos(rng.standard_normal((4, 3))) == 3.0

    def test_raw_affine_output_not_clamped(self):
        model = tiny_model(mos_head=True)
        model.head_w.data = np.zeros_like(model.head_w.data)
        model.head_b.data = np.array([[42.0]])
        assert model.predict_mos(np.zeros((2, 3))) == 42.0

    def test_missing_head_errors(self, rng):
        with pytest.raises(ValueError, match="head"):
            tiny_model(mos_head=False).predict_mos(rng.standard_normal((2, 3)))

    def test_head_reads_representation_not_projection(self, rng):
        # scrambling the projection weights must not change MOS predictions
        model = tiny_model(mos_head=True)
        x = rng.standard_normal((4, 3))
        before = model.predict_mos(x)
        model.proj_w.data = rng.standard_normal(model.proj_w.data.shape)
        assert model.predict_mos(x) == before


class TestFrozenForward:
    def test_frozen_encode_gets_no_gradients(self, rng):
        model = tiny_model(mos_head=True)
        xs = [rng.standard_normal((3, 3)) for _ in range(4)]
        model.zero_grads()
        pred = model.predict_mos_batch(xs, frozen_encoder=True)
        (pred * pred).sum().backward()
        for p in model.encoder_parameters():
            assert np.array_equal(p.grad, np.zeros_like(p.grad))
        assert np.any(model.head_w.grad != 0.0)


class TestReferenceSetAndNmr:
    def test_score_zero_against_itself(self, rng):
        model = tiny_model()
        x = rng.standard_normal((4, 3))
        refs = ReferenceSet.from_model(model, [x], layer="projection")
        assert nmr_score(model, x, refs) == pytest.approx(0.0, abs=1e-12)

    def test_duplicating_references_leaves_score_unchanged(self, rng):
        model = tiny_model()
        ref_xs = [rng.standard_normal((3, 3)) for _ in range(3)]
        x = rng.standard_normal((5, 3))
        r1 = ReferenceSet.from_model(model, ref_xs, layer="projection")
        r2 = ReferenceSet.from_model(model, ref_xs + ref_xs, layer="projection")
        assert nmr_score(model, x, r1) == pytest.approx(nmr_score(model, x, r2), abs=1e-12)

    def test_nonnegative(self, rng):
        model = tiny_model()
        refs = ReferenceSet.from_model(model, [rng.standard_normal((3, 3))], layer="encoder")
        scores = nmr_scores(model, [rng.standard_normal((4, 3)) for _ in range(6)], refs)
        assert np.all(scores >= 0.0)

    def test_layer_mismatch_rejected(self, rng):
        model = tiny_model()
        refs = ReferenceSet.from_model(model, [rng.standard_normal((3, 3))], layer="encoder")
        with pytest.raises(ValueError, match="layer"):
            nmr_scores(model, [rng.standard_normal((3, 3))], refs, layer="projection")

    def test_empty_reference_set_rejected(self):
        with pytest.raises(ValueError):
            ReferenceSet(np.zeros((0, 3)))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        model = QualityModel(
            EncoderConfig(input_dim=5, hidden_dims=(7, 3), embed_dim=4, mos_head=True),
            seed=3,
        )
        meta = {"seed": 3, "epoch": 17, "loss_mode": "triplet_adaptive"}
        path = tmp_path / "model.ckpt.json"
        model.save(path, meta=meta)
        loaded, loaded_meta = QualityModel.load(path)
        assert loaded_meta == meta
        assert loaded.config == model.config
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert a.name == b.name
            assert np.array_equal(a.data, b.data)
        x = rng.standard_normal((4, 5))
        assert loaded.predict_mos(x) == model.predict_mos(x)

    def test_save_is_byte_deterministic(self, tmp_path):
        model = tiny_model(seed=1)
        model.save(tmp_path / "a.json", meta={"seed": 1})
        model.save(tmp_path / "b.json", meta={"seed": 1})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_rejects_foreign_files(self, tmp_path):
        p = tmp_path / "bogus.json"
        p.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError, match="not a"):
            QualityModel.load(p)


class TestInit:
    def test_seeded_init_is_reproducible(self):
        a = tiny_model(seed=11)
        b = tiny_model(seed=11)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.data, pb.data)

    def test_biases_zero_weights_bounded(self):
        model = tiny_model(seed=5)
        for w, b in model.encoder:
            fan_in, fan_out = w.data.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.all(np.abs(w.data) <= bound)
            assert np.array_equal(b.data, np.zeros_like(b.data))
