import numpy as np
import pytest

from context_net.core.context_modules import (
    AdaptiveContextBlock,
    GlobalContextModule,
    LocalContextModule,
    acb_forward,
    compute_global_feature,
    gcm_forward,
    lcm_forward,
)
from context_net.core.gates import ParameterError, compute_global_gate, compute_local_gate, uniform_local_gate
from context_net.tensor.tensor import DimensionError, GeometryError, Tensor


@pytest.fixture
def feature(rng):
    return Tensor(rng.standard_normal((2, 4, 3, 3)))


class TestGlobalContextModule:
    def test_output_matches_input_shape(self, rng, feature):
        gcm = GlobalContextModule(4, rng, delta=2.0)
        C, gate = gcm(feature)
        assert C.shape == feature.shape
        assert gate.shape == (2, 1, 3, 3)

    def test_global_feature_is_per_sample_vector(self, rng, feature):
        gcm = GlobalContextModule(4, rng)
        assert compute_global_feature(feature, gcm).shape == (2, 4, 1, 1)

    def test_ungated_returns_input(self, rng, feature):
        gcm = GlobalContextModule(4, rng)
        C, _ = gcm_forward(feature, gcm, 5.0, gated=False)
        assert C is feature

    def test_zero_alpha_adds_nothing(self, rng, feature):
        gcm = GlobalContextModule(4, rng)
        gcm.alpha.data[:] = 0.0
        C, _ = gcm(feature)
        np.testing.assert_array_equal(C.data, feature.data)

    def test_uniform_mode_adds_full_global_feature(self, rng, feature):
        gcm = GlobalContextModule(4, rng, gate_mode="uniform")
        gcm.alpha.data[:] = 0.5
        p = compute_global_feature(feature, gcm)
        C, gate = gcm(feature)
        np.testing.assert_array_equal(gate.numpy(), 1.0)
        np.testing.assert_allclose(C.data, feature.data + 0.5 * p.data)

    def test_adaptive_context_is_weighted_by_gate(self, rng, feature):
        gcm = GlobalContextModule(4, rng, delta=2.0)
        p = compute_global_feature(feature, gcm)
        C, gate = gcm(feature)
        np.testing.assert_allclose(C.data, feature.data + gate.numpy() * p.data)

    def test_parameter_names(self, rng):
        names = [name for name, _ in GlobalContextModule(4, rng).named_parameters()]
        assert names == ["alpha", "reduce.weight", "reduce.bn.gamma", "reduce.bn.beta"]

    @pytest.mark.parametrize("kwargs", [{"delta": 0.0}, {"gate_mode": "sometimes"}])
    def test_invalid_settings(self, rng, kwargs):
        with pytest.raises(ParameterError):
            GlobalContextModule(4, rng, **kwargs)


class TestLocalContextModule:
    def _inputs(self, rng):
        low = Tensor(rng.standard_normal((2, 3, 6, 6)))
        E = Tensor(rng.standard_normal((2, 4, 6, 6)))
        Wg = compute_global_gate(Tensor(rng.uniform(0, 3, size=(2, 1, 3, 3))), 2.0)
        return low, E, compute_local_gate(Wg, 6, 6)

    def test_output_channels(self, rng):
        lcm = LocalContextModule(3, 4, 5, rng, reduced_channels=2, reuse_count=3)
        low, E, Wl = self._inputs(rng)
        out = lcm(lcm.lowlevel_reduce(low), E, Wl)
        assert out.shape == (2, 5, 6, 6)

    @pytest.mark.parametrize("reuse", [1, 2, 4])
    def test_each_fusion_has_its_own_weights(self, rng, reuse):
        lcm = LocalContextModule(3, 4, 5, rng, reduced_channels=2, reuse_count=reuse)
        assert len(lcm.fuse_convs) == reuse
        names = {name for name, _ in lcm.named_parameters()}
        assert {f"fuse{t + 1}.weight" for t in range(reuse)} <= names
        assert lcm.fuse_convs[0].weight.shape == (5, 2 + 4, 3, 3)
        if reuse > 1:
            assert lcm.fuse_convs[1].weight.shape == (5, 2 + 5, 3, 3)

    def test_ungated_matches_zero_low_level(self, rng):
        lcm = LocalContextModule(3, 4, 5, rng, reduced_channels=2, reuse_count=2)
        low, E, Wl = self._inputs(rng)
        B = lcm.lowlevel_reduce(low)
        ungated = lcm_forward(B, E, Wl, lcm, gated=False)
        zeroed = lcm_forward(Tensor(np.zeros(B.shape)), E, Wl, lcm, gated=True)
        np.testing.assert_array_equal(ungated.data, zeroed.data)

    def test_spatial_mismatch(self, rng):
        lcm = LocalContextModule(3, 4, 5, rng, reduced_channels=2)
        B = Tensor(np.zeros((2, 2, 6, 6)))
        E = Tensor(np.zeros((2, 4, 5, 6)))
        with pytest.raises(DimensionError):
            lcm(B, E, uniform_local_gate(B))

    def test_gate_mismatch(self, rng):
        lcm = LocalContextModule(3, 4, 5, rng, reduced_channels=2)
        B = Tensor(np.zeros((2, 2, 6, 6)))
        E = Tensor(np.zeros((2, 4, 6, 6)))
        with pytest.raises(DimensionError):
            lcm(B, E, uniform_local_gate(Tensor(np.zeros((2, 1, 3, 3)))))

    def test_reuse_must_be_positive(self, rng):
        with pytest.raises(ParameterError):
            LocalContextModule(3, 4, 5, rng, reuse_count=0)


class TestAdaptiveContextBlock:
    def test_with_lcm_doubles_resolution(self, rng, feature):
        block = AdaptiveContextBlock(4, rng, low_channels=3, out_channels=6, reduced_channels=2, reuse_count=2)
        low = Tensor(rng.standard_normal((2, 3, 6, 6)))
        out, gate = block(feature, low)
        assert out.shape == (2, 6, 6, 6)
        assert gate.shape == (2, 1, 3, 3)
        assert block.out_channels == 6

    def test_gcm_only_block_upsamples(self, rng, feature):
        block = AdaptiveContextBlock(4, rng)
        out, _ = block(feature)
        assert out.shape == (2, 4, 6, 6)
        assert block.lcm is None

    def test_low_level_must_be_twice_the_resolution(self, rng, feature):
        block = AdaptiveContextBlock(4, rng, low_channels=3, out_channels=6, reduced_channels=2)
        with pytest.raises(GeometryError):
            block(feature, Tensor(np.zeros((2, 3, 5, 6))))

    def test_low_level_needs_lcm(self, rng, feature):
        block = AdaptiveContextBlock(4, rng)
        with pytest.raises(ValueError):
            acb_forward(feature, Tensor(np.zeros((2, 3, 6, 6))), block, 5.0)

    def test_disabled_local_gating_matches_unit_gate(self, rng, feature):
        block = AdaptiveContextBlock(
            4, rng, low_channels=3, out_channels=6, reduced_channels=2, reuse_count=1, local_gating=False
        )
        low = Tensor(rng.standard_normal((2, 3, 6, 6)))
        out, _ = block(feature, low)

        C, _ = block.gcm(feature)
        from context_net.tensor.ops import bilinear_upsample

        E = bilinear_upsample(C, 6, 6)
        B = block.lcm.lowlevel_reduce(low)
        expected = block.lcm(B, E, uniform_local_gate(B))
        np.testing.assert_allclose(out.data, expected.data)
