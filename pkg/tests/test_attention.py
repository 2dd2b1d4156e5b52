"""Tests for the five aggregation kinds."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from structshot.attention import (
    AttentionKind,
    aggregate,
    attention_weights,
    head_attention,
    init_attention,
    layer_norm,
    learned_weights,
    pool,
    vanilla_attention_weights,
)
from structshot.autodiff import Tape, Value, backward, reduce_sum
from structshot.errors import AttentionConfigError, ShapeError
from structshot.trainer import Adam


class TestAttentionKind:
    """Tests for kind validation."""

    def test_unknown_kind(self):
        with pytest.raises(AttentionConfigError, match="unknown attention kind"):
            AttentionKind("lstm")

    def test_bad_pooling(self):
        with pytest.raises(AttentionConfigError):
            AttentionKind("self", pooling="sum")

    def test_zero_heads(self):
        with pytest.raises(AttentionConfigError):
            AttentionKind("self", heads=0)

    def test_width_not_divisible_by_heads(self, rng):
        """Model width must split evenly across heads."""
        with pytest.raises(AttentionConfigError, match="divisible"):
            init_attention(AttentionKind("self", heads=3), 4, 2, 4, rng)


class TestLearnedWeights:
    """Tests for shared learned weights."""

    def test_initialized_to_ones(self, rng):
        params = init_attention(AttentionKind("learned"), 4, 4, 4, rng)
        assert_allclose(learned_weights(params, 4).data, [1.0, 1.0, 1.0, 1.0])

    def test_count_mismatch(self, rng):
        params = init_attention(AttentionKind("learned"), 4, 3, 4, rng)
        with pytest.raises(AttentionConfigError):
            learned_weights(params, 4)

    def test_shared_across_inputs(self, rng):
        """Two different sequences see the same weights."""
        kind = AttentionKind("learned")
        params = init_attention(kind, 2, 3, 2, rng)
        a = attention_weights(kind, Value(rng.normal(size=(3, 2))), params)
        b = attention_weights(kind, Value(rng.normal(size=(3, 2))), params)
        assert_allclose(a.data, b.data)

    def test_gradient_step_decreases_weight(self, rng):
        """One Adam step on a loss increasing in w1 lowers w1."""
        params = init_attention(AttentionKind("learned"), 2, 3, 2, rng)
        with Tape() as tape:
            loss = reduce_sum(params.weights * Value([1.0, 0.0, 0.0]))
        Adam([params.weights], lr=0.01).step(backward(tape, loss))
        assert params.weights.data[0] < 1.0
        assert_allclose(params.weights.data[1:], [1.0, 1.0])


class TestVanilla:
    """Tests for tanh-scored softmax weights."""

    def test_matches_numpy(self, rng):
        """w = softmax(c . tanh(W h + b))."""
        params = init_attention(AttentionKind("vanilla"), 3, 4, 5, rng)
        h = rng.normal(size=(4, 3))
        scores = np.tanh(h @ params.projection.weight.data + params.projection.bias.data)
        e = scores @ params.context.data
        expected = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
        assert_allclose(vanilla_attention_weights(Value(h), params).data, expected, atol=1e-12)

    def test_weights_sum_to_one_for_any_count(self, rng):
        """Defined for any number of inputs, including one."""
        params = init_attention(AttentionKind("vanilla"), 3, 1, 5, rng)
        for count in (1, 2, 7):
            w = vanilla_attention_weights(Value(rng.normal(size=(count, 3))), params)
            assert w.shape == (count,)
            assert_allclose(w.data.sum(), 1.0)

    def test_dimension_mismatch(self, rng):
        params = init_attention(AttentionKind("vanilla"), 3, 2, 5, rng)
        with pytest.raises(ShapeError):
            vanilla_attention_weights(Value(np.ones((2, 4))), params)


class TestSequenceKinds:
    """Tests for self-attention, transformer and MLP aggregation."""

    @pytest.mark.parametrize("name", ["self", "transformer"])
    @pytest.mark.parametrize("pooling", ["mean", "max"])
    def test_permutation_invariant(self, rng, name, pooling):
        """Without positions, reordering inputs leaves mean/max pooled output unchanged."""
        kind = AttentionKind(name, heads=2, pooling=pooling)
        params = init_attention(kind, 4, 3, 4, rng)
        h = rng.normal(size=(3, 4))
        a = aggregate(kind, Value(h), params)
        b = aggregate(kind, Value(h[[2, 0, 1]]), params)
        assert_allclose(a.data, b.data, atol=1e-12)

    @pytest.mark.parametrize("name", ["self", "transformer"])
    def test_ten_shuffles(self, rng, name):
        """Mean-pooled output is unchanged under ten random reorderings of five positions."""
        kind = AttentionKind(name, heads=2, pooling="mean")
        params = init_attention(kind, 4, 5, 4, rng)
        h = rng.normal(size=(5, 4))
        expected = aggregate(kind, Value(h), params).data
        for _ in range(10):
            shuffled = aggregate(kind, Value(h[rng.permutation(5)]), params)
            assert_allclose(shuffled.data, expected, atol=1e-12)

    def test_head_rows_are_stochastic(self, rng):
        """Each head's attention matrix has rows summing to one."""
        params = init_attention(AttentionKind("self", heads=2), 4, 3, 4, rng)
        x = Value(rng.normal(size=(3, 4)))
        for head in params.layers[0].heads:
            assert_allclose(head_attention(x, head).data.sum(axis=1), np.ones(3))

    def test_input_projection_to_width(self, rng):
        """Inputs wider than the model width are projected first."""
        kind = AttentionKind("self", heads=2)
        params = init_attention(kind, 10, 3, 4, rng)
        assert aggregate(kind, Value(rng.normal(size=(3, 10))), params).shape == (4,)

    def test_mlp_output_width(self, rng):
        """The MLP maps the concatenated inputs to the model width."""
        kind = AttentionKind("mlp", depth=2)
        params = init_attention(kind, 4, 3, 6, rng)
        out = aggregate(kind, Value(rng.normal(size=(3, 4))), params)
        assert out.shape == (6,)
        assert (out.data >= 0).all()

    def test_mlp_count_mismatch(self, rng):
        params = init_attention(AttentionKind("mlp"), 4, 3, 6, rng)
        with pytest.raises(ShapeError):
            aggregate(AttentionKind("mlp"), Value(np.ones((2, 4))), params)

    def test_weight_kind_does_not_aggregate(self, rng):
        params = init_attention(AttentionKind("vanilla"), 4, 3, 4, rng)
        with pytest.raises(AttentionConfigError):
            aggregate(AttentionKind("vanilla"), Value(np.ones((3, 4))), params)


class TestPoolAndNorm:
    """Tests for pooling and layer normalization."""

    def test_pool_strategies(self):
        x = Value([[1.0, 5.0], [3.0, 2.0]])
        assert_allclose(pool(x, "mean").data, [2.0, 3.5])
        assert_allclose(pool(x, "max").data, [3.0, 5.0])
        assert_allclose(pool(x, "first").data, [1.0, 5.0])

    def test_layer_norm_statistics(self, rng):
        """Rows come out with mean 0 and variance 1 before gain and bias."""
        out = layer_norm(Value(rng.normal(3.0, 2.0, size=(4, 6)))).data
        assert_allclose(out.mean(axis=1), np.zeros(4), atol=1e-12)
        assert_allclose(out.var(axis=1), np.ones(4), atol=1e-6)
