import numpy as np
import pytest

from framepress.adapter import (
    AdapterOutput,
    AdapterParams,
    adapt_frame,
    adapt_video,
    adapter_gradients,
    apply_grads,
    init_adapter_params,
    load_checkpoint,
    random_adapter_params,
    save_checkpoint,
    sinusoidal_pos_table,
)
from framepress.encoder import FrameTokenGrid, VideoTokenTensor, synthetic_video
from framepress.errors import FormatError, ParameterError, ShapeError
from framepress.linalg import fd_gradient, make_rng


def small_params(seed=0, frames=2, **overrides):
    kwargs = dict(
        queries=3, width=4, feature_dim=3, source_tokens=4, frames=frames, seed=seed
    )
    kwargs.update(overrides)
    return random_adapter_params(**kwargs)


def test_adapt_frame_matches_manual_computation():
    """One query at a time: project, add positions to keys only, softmax
    the scaled scores, mix the *unpositioned* projected values."""
    rng = make_rng(11)
    params = small_params(seed=12)
    feats = rng.normal(size=(4, 3))
    tokens, att = adapt_frame(feats, params)
    projected = feats @ params.input_proj
    keys = projected + params.pos_table
    for i in range(params.query_count):
        logits = params.scale * keys @ params.queries[i]
        e = np.exp(logits - logits.max())
        w = e / e.sum()
        np.testing.assert_allclose(att[i], w, atol=1e-12, rtol=0)
        np.testing.assert_allclose(tokens[i], w @ projected, atol=1e-12, rtol=0)


def test_positional_table_touches_keys_not_values():
    """Zeroing the positional table changes attention but the values mixed
    by a fixed attention row are the bare projected features."""
    params = small_params(seed=13)
    rng = make_rng(14)
    feats = rng.normal(size=(4, 3))
    _, att = adapt_frame(feats, params)
    projected = feats @ params.input_proj
    tokens, _ = adapt_frame(feats, params)
    np.testing.assert_allclose(tokens, att @ projected, atol=1e-12, rtol=0)


def test_temporal_vectors_shift_features_before_projection():
    video = synthetic_video(2, 2, 2, 3, seed=15)
    params = small_params(seed=16)
    out = adapt_video(video, params)
    # Manually shift the features in D-space, then adapt with zero temporal.
    shifted_frames = tuple(
        FrameTokenGrid(2, 2, video.frames[t].features + params.temporal[t])
        for t in range(2)
    )
    from dataclasses import replace

    zero_t = replace(params, temporal=np.zeros_like(params.temporal))
    manual = adapt_video(VideoTokenTensor(shifted_frames), zero_t)
    for t in range(2):
        np.testing.assert_array_equal(out.tokens[t], manual.tokens[t])
        np.testing.assert_array_equal(out.attention[t], manual.attention[t])


def test_default_scale_is_inverse_sqrt_width():
    params = AdapterParams(
        input_proj=np.zeros((3, 16)),
        queries=np.zeros((2, 16)),
        pos_table=np.zeros((4, 16)),
        temporal=np.zeros((1, 3)),
    )
    assert params.scale == 0.25


def test_params_shape_validation():
    with pytest.raises(ShapeError):
        AdapterParams(
            input_proj=np.zeros((3, 4)),
            queries=np.zeros((2, 5)),  # width mismatch
            pos_table=np.zeros((4, 4)),
            temporal=np.zeros((1, 3)),
        )
    with pytest.raises(ParameterError):
        AdapterParams(
            input_proj=np.zeros((3, 4)),
            queries=np.zeros((2, 4)),
            pos_table=np.zeros((4, 4)),
            temporal=np.zeros((1, 3)),
            scale=-1.0,
        )


def test_adapter_output_validates_row_sums():
    bad_att = np.array([[0.6, 0.6]])
    with pytest.raises(ShapeError):
        AdapterOutput(tokens=(np.zeros((1, 2)),), attention=(bad_att,))


def test_sinusoidal_table_layout():
    table = sinusoidal_pos_table(2, 3, 8)
    assert table.shape == (6, 8)
    assert np.all(np.abs(table) <= 1.0)
    # Raster order: rows 0..2 share row-coordinate 0, so their first
    # (sin of row index) block is identical.
    np.testing.assert_array_equal(table[0, :2], table[1, :2])
    with pytest.raises(ParameterError):
        sinusoidal_pos_table(2, 2, 6)


def test_gradients_match_finite_differences_seed3():
    """Squared-norm loss over all compressed tokens, checked coordinate by
    coordinate against central differences."""
    video = synthetic_video(2, 2, 2, 3, seed=3)
    params = small_params(seed=3)

    names = ("input_proj", "queries", "pos_table", "temporal")
    from dataclasses import replace

    def loss(p):
        out = adapt_video(video, p)
        return float(sum(np.sum(t**2) for t in out.tokens))

    out = adapt_video(video, params)
    token_grads = np.stack([2.0 * t for t in out.tokens])
    grads = adapter_gradients(video, params, token_grads)

    for name in names:
        base = getattr(params, name)

        def f(x, name=name):
            return loss(replace(params, **{name: x.reshape(base.shape)}))

        fd = fd_gradient(f, base.ravel(), step=1e-5).reshape(base.shape)
        analytic = getattr(grads, name)
        err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
        assert err < 1e-4, f"{name}: relative error {err:.3e}"


def test_attention_grads_feed_back():
    """A loss on the attention weights themselves (random weighting, so it
    is not constant under the rows-sum-to-one constraint) must flow back
    into the query bank correctly."""
    video = synthetic_video(1, 2, 2, 3, seed=21)
    params = small_params(seed=22, frames=1)
    rng = make_rng(20)
    weighting = rng.normal(size=(1, 3, 4))
    grads = adapter_gradients(
        video, params, np.zeros((1, 3, 4)), attention_grads=weighting
    )
    assert np.linalg.norm(grads.queries) > 1e-6

    def loss(p):
        o = adapt_video(video, p)
        return float(sum(np.sum(w * a) for w, a in zip(weighting, o.attention)))

    from dataclasses import replace

    base = params.queries

    def f(x):
        return loss(replace(params, queries=x.reshape(base.shape)))

    fd = fd_gradient(f, base.ravel(), step=1e-5).reshape(base.shape)
    err = np.linalg.norm(grads.queries - fd) / max(np.linalg.norm(fd), 1e-12)
    assert err < 1e-4


def test_query_pos_gradients_when_enabled():
    params = small_params(seed=23, use_query_pos=True)
    video = synthetic_video(2, 2, 2, 3, seed=24)
    out = adapt_video(video, params)
    grads = adapter_gradients(video, params, np.stack([2 * t for t in out.tokens]))
    assert grads.query_pos is not None
    # The additive query term sees exactly the query-bank gradient.
    np.testing.assert_array_equal(grads.query_pos, grads.queries)


def test_apply_grads_moves_params():
    params = small_params(seed=25)
    video = synthetic_video(2, 2, 2, 3, seed=26)
    out = adapt_video(video, params)
    grads = adapter_gradients(video, params, np.stack([2 * t for t in out.tokens]))
    stepped = apply_grads(params, grads, lr=0.1)
    assert not np.array_equal(stepped.queries, params.queries)
    np.testing.assert_allclose(
        stepped.input_proj, params.input_proj - 0.1 * grads.input_proj
    )


def test_checkpoint_round_trip_bit_exact(tmp_path):
    params = init_adapter_params(
        queries=5, width=8, feature_dim=6, grid_h=2, grid_w=3, frames=4, seed=31
    )
    save_checkpoint(params, tmp_path / "ckpt")
    back = load_checkpoint(tmp_path / "ckpt")
    np.testing.assert_array_equal(back.input_proj, params.input_proj)
    np.testing.assert_array_equal(back.queries, params.queries)
    np.testing.assert_array_equal(back.pos_table, params.pos_table)
    np.testing.assert_array_equal(back.temporal, params.temporal)
    assert back.scale == params.scale
    assert back.query_pos is None


def test_checkpoint_with_query_pos(tmp_path):
    params = init_adapter_params(
        queries=2,
        width=4,
        feature_dim=3,
        grid_h=2,
        grid_w=2,
        frames=1,
        seed=32,
        use_query_pos=True,
    )
    save_checkpoint(params, tmp_path / "ckpt")
    back = load_checkpoint(tmp_path / "ckpt")
    np.testing.assert_array_equal(back.query_pos, params.query_pos)


def test_checkpoint_header_mismatch_detected(tmp_path):
    params = init_adapter_params(
        queries=2, width=4, feature_dim=3, grid_h=2, grid_w=2, frames=1, seed=33
    )
    save_checkpoint(params, tmp_path / "ckpt")
    header = tmp_path / "ckpt" / "adapter.json"
    header.write_text(header.read_text().replace('"queries": 2', '"queries": 3'))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ckpt")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "nonexistent")


def test_adapt_video_rejects_wrong_token_count():
    video = synthetic_video(2, 2, 2, 3, seed=34)
    params = small_params(seed=35, source_tokens=5)
    with pytest.raises(ShapeError):
        adapt_video(video, params)
