import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from featkit.errors import (
    ClampedDimensionWarning,
    DimMismatch,
    MalformedFile,
    RankDeficientWarning,
)
from featkit.preprocess import (
    PcaWhitenModel,
    PipelineConfig,
    l2_normalize,
    load_pca_model,
    pca_fit,
    pca_whiten_apply,
    retrieval_pipeline_apply,
    retrieval_pipeline_fit,
    save_pca_model,
    signed_power,
)

# well-scaled components: zero or magnitude in [1e-6, 1e6]; squaring and
# norm division stay far from float underflow
_component = st.one_of(
    st.just(0.0),
    st.floats(1e-6, 1e6).map(lambda x: x),
    st.floats(1e-6, 1e6).map(lambda x: -x),
)
finite_vectors = st.lists(_component, min_size=1, max_size=12)


class TestL2Normalize:
    def test_three_four_five(self):
        assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8])

    def test_zero_vector_unchanged(self):
        assert np.array_equal(l2_normalize([0.0, 0.0]), [0.0, 0.0])

    @given(finite_vectors)
    def test_unit_norm(self, vec):
        out = l2_normalize(vec)
        if np.linalg.norm(vec) > 0:
            assert abs(np.linalg.norm(out) - 1.0) <= 1e-12

    @given(finite_vectors)
    def test_idempotent(self, vec):
        once = l2_normalize(vec)
        twice = l2_normalize(once)
        assert np.abs(twice - once).max() <= 1e-12


class TestSignedPower:
    def test_square_keeps_sign(self):
        assert np.array_equal(signed_power([-2.0, 3.0], 2.0), [-4.0, 9.0])

    def test_identity_power(self, rng):
        v = rng.normal(size=9)
        assert np.allclose(signed_power(v, 1.0), v)

    def test_fixed_points(self):
        assert np.array_equal(
            signed_power([0.0, -1.0, 1.0], 2.0), [0.0, -1.0, 1.0]
        )

    @given(finite_vectors)
    def test_sign_and_zero_pattern_preserved(self, vec):
        out = signed_power(vec, 2.0)
        assert np.array_equal(np.sign(out), np.sign(vec))


class TestPcaFit:
    def test_axis_aligned_line(self):
        x = np.array([[1.0, 0.0], [2.0, 0.0], [-3.0, 0.0], [4.0, 0.0]])
        model = pca_fit(x, 1)
        assert np.allclose(model.components[0], [1.0, 0.0])
        assert model.eigenvalues[0] == pytest.approx(np.var(x[:, 0]))

    def test_constructed_diag_covariance(self):
        # population covariance exactly diag(4, 1)
        x = np.array([[2.0, 1.0], [2.0, -1.0], [-2.0, 1.0], [-2.0, -1.0]])
        model = pca_fit(x, 2)
        cov = x.T @ x / 4
        direct = np.sort(np.linalg.eigvalsh(cov))[::-1]
        assert np.allclose(model.eigenvalues, direct)
        assert np.allclose(model.eigenvalues, [4.0, 1.0])

    def test_components_orthonormal(self, rng):
        x = rng.normal(size=(40, 12))
        model = pca_fit(x, 8)
        gram = model.components @ model.components.T
        assert np.abs(gram - np.eye(8)).max() <= 1e-8

    def test_sign_convention_deterministic(self, rng):
        x = rng.normal(size=(30, 6))
        m1, m2 = pca_fit(x, 4), pca_fit(x.copy(), 4)
        assert np.array_equal(m1.components, m2.components)
        for row in m1.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_k_out_of_range(self, rng):
        x = rng.normal(size=(5, 3))
        with pytest.raises(ValueError):
            pca_fit(x, 4)

    def test_rank_deficient_warns_and_truncates(self):
        base = np.array([[1.0, 2.0, 0.5]])
        x = np.outer([1.0, 2.0, 3.0, -1.0], base[0])  # rank-1 data
        with pytest.warns(RankDeficientWarning):
            model = pca_fit(x, 3)
        assert model.k == 1


class TestWhitening:
    def test_mean_maps_to_zero(self, rng):
        x = rng.normal(size=(20, 5))
        model = pca_fit(x, 3)
        out = pca_whiten_apply(model, x.mean(axis=0))
        assert np.abs(out).max() <= 1e-9

    def test_one_dim_scaling(self):
        model = PcaWhitenModel(
            mean=np.zeros(2),
            components=np.array([[1.0, 0.0]]),
            eigenvalues=np.array([4.0]),
            epsilon=1e-300,
        )
        assert pca_whiten_apply(model, [2.0, 9.9])[0] == pytest.approx(1.0)

    def test_fit_set_covariance_is_identity(self, rng):
        x = rng.normal(size=(200, 50))
        model = pca_fit(x, 20)
        z = np.stack([pca_whiten_apply(model, row) for row in x])
        assert np.abs(z.mean(axis=0)).max() <= 1e-8
        cov = z.T @ z / z.shape[0]
        assert np.abs(cov - np.eye(20)).max() <= 1e-6

    def test_dim_mismatch(self, rng):
        model = pca_fit(rng.normal(size=(10, 4)), 2)
        with pytest.raises(DimMismatch):
            pca_whiten_apply(model, np.zeros(5))


class TestRetrievalPipeline:
    def test_clamps_with_warning(self, rng):
        x = rng.normal(size=(3, 4))
        with pytest.warns(ClampedDimensionWarning):
            model = retrieval_pipeline_fit(x, PipelineConfig(pca_dim=500))
        assert model.k == 2

    def test_unit_rows_equal_plain_fit(self, rng):
        # renormalizing unit rows moves them by at most one ulp, so the
        # two fits agree to eigensolver precision
        x = rng.normal(size=(12, 6))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        cfg = PipelineConfig(pca_dim=4)
        a = retrieval_pipeline_fit(x, cfg)
        b = pca_fit(x, 4, cfg.epsilon)
        assert np.abs(a.components - b.components).max() <= 1e-9
        assert np.abs(a.eigenvalues - b.eigenvalues).max() <= 1e-12

    def test_scale_invariance_exact_on_pythagorean_input(self, rng):
        # [3, 4] has norm 5 and 7 * [3, 4] has norm 35, all exact in
        # binary floating point, so the leading normalization maps both
        # inputs to identical bits and the rest of the chain is shared
        x = rng.normal(size=(15, 6))
        cfg = PipelineConfig(pca_dim=4)
        model = retrieval_pipeline_fit(x, cfg)
        v = np.array([3.0, 4.0, 0.0, 0.0, 0.0, 0.0])
        a = retrieval_pipeline_apply(model, cfg, v)
        b = retrieval_pipeline_apply(model, cfg, 7.0 * v)
        assert np.array_equal(a, b)

    def test_scale_invariance_random(self, rng):
        x = rng.normal(size=(15, 6))
        cfg = PipelineConfig(pca_dim=4)
        model = retrieval_pipeline_fit(x, cfg)
        for scale in (7.0, 0.001, 3e5):
            v = rng.normal(size=6)
            a = retrieval_pipeline_apply(model, cfg, v)
            b = retrieval_pipeline_apply(model, cfg, scale * v)
            assert np.abs(a - b).max() <= 1e-12

    def test_intermediate_is_unit_before_power(self, rng):
        x = rng.normal(size=(15, 6))
        cfg = PipelineConfig(pca_dim=4)
        model = retrieval_pipeline_fit(x, cfg)
        for _ in range(10):
            v = rng.normal(size=6)
            out = retrieval_pipeline_apply(model, cfg, v)
            # undo the signed square: |out|**0.5 recovers the unit vector
            pre = np.sign(out) * np.sqrt(np.abs(out))
            assert abs(np.linalg.norm(pre) - 1.0) <= 1e-12

    def test_k1_output_is_signed_unit(self, rng):
        x = rng.normal(size=(10, 3))
        cfg = PipelineConfig(pca_dim=1)
        model = retrieval_pipeline_fit(x, cfg)
        vals = {
            float(retrieval_pipeline_apply(model, cfg, rng.normal(size=3))[0])
            for _ in range(20)
        }
        assert vals <= {-1.0, 0.0, 1.0}


class TestPcawPersistence:
    def test_roundtrip_exact(self, tmp_path, rng):
        model = pca_fit(rng.normal(size=(30, 7)), 4)
        p = tmp_path / "m.pcaw"
        save_pca_model(model, p)
        back = load_pca_model(p)
        assert np.array_equal(back.mean, model.mean)
        assert np.array_equal(back.components, model.components)
        assert np.array_equal(back.eigenvalues, model.eigenvalues)
        assert back.epsilon == model.epsilon

    def test_bad_header(self, tmp_path):
        p = tmp_path / "m.pcaw"
        p.write_text("WRONG\n1\t2\t0.1\n")
        with pytest.raises(MalformedFile):
            load_pca_model(p)

    def test_truncated(self, tmp_path, rng):
        model = pca_fit(rng.normal(size=(10, 5)), 3)
        p = tmp_path / "m.pcaw"
        save_pca_model(model, p)
        lines = p.read_text().splitlines()[:-2]
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedFile):
            load_pca_model(p)
