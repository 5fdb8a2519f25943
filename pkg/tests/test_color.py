import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dehazekit import color, trainer
from dehazekit.tensor import ContractError, Tensor


def px(*rgb):
    return Tensor(np.array(rgb, np.float32).reshape(1, 3, 1, 1))


def test_chroma_examples():
    np.testing.assert_allclose(color.chroma(px(0.2, 0.2, 0.2)).data.ravel(), [1 / 3] * 3, atol=1e-5)
    np.testing.assert_allclose(color.chroma(px(1, 0, 0)).data.ravel(), [1, 0, 0], atol=1e-5)
    np.testing.assert_allclose(color.chroma(px(0.6, 0.3, 0.1)).data.ravel(), [0.6, 0.3, 0.1], atol=1e-5)


def test_chroma_rejects_negative_and_bad_shape():
    with pytest.raises(ContractError):
        color.chroma(px(0.2, -0.1, 0.3))
    with pytest.raises(ContractError):
        color.chroma(Tensor(np.ones((1, 2, 2, 2))))


def test_loss_color_examples():
    a = color.chroma(Tensor(np.random.default_rng(0).uniform(0.1, 1, size=(1, 3, 4, 4))))
    assert color.loss_color(a, a).item() == 0
    assert color.loss_color(a, a + 0.1).item() == pytest.approx(0.1, rel=1e-5)
    b = color.chroma(Tensor(np.random.default_rng(1).uniform(0.1, 1, size=(1, 3, 4, 4))))
    assert color.loss_color(a, b).item() == color.loss_color(b, a).item()
    with pytest.raises(ContractError):
        color.loss_color(a, Tensor(np.ones((1, 3, 4, 5))))


def test_predict_color_channel_mismatch():
    net = color.ColorNet(8, np.random.default_rng(0))
    with pytest.raises(ContractError):
        color.predict_color(net, Tensor(np.ones((1, 4, 4, 4))))


pixels = arrays(np.float32, (1, 3, 4, 4), elements=st.floats(0.0, 1.0, width=32))


def _is_color_map(c: np.ndarray):
    assert np.all(c >= 0) and np.all(c <= 1)
    s = c.sum(axis=1)
    return s


@settings(max_examples=60, deadline=None)
@given(pixels)
def test_chroma_is_a_color_map(x):
    c = color.chroma(Tensor(x)).data
    s = _is_color_map(c)
    big = x.sum(axis=1) >= 1e-3
    np.testing.assert_allclose(s[big], 1.0, atol=1e-5)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, (1, 6, 3, 3), elements=st.floats(-5, 5, width=32)), st.integers(0, 1000))
def test_predict_color_is_a_color_map(feats, seed):
    c = color.predict_color(color.ColorNet(6, np.random.default_rng(seed)), Tensor(feats)).data
    np.testing.assert_allclose(_is_color_map(c), 1.0, atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(pixels, st.floats(0.05, 20.0))
def test_chroma_scale_invariant(x, alpha):
    x = x.copy()
    x[:, 0] += 1e-3   # keeps channel sums away from the epsilon regime
    np.testing.assert_allclose(color.chroma(Tensor(x * alpha)).data, color.chroma(Tensor(x)).data, atol=1e-5)


def test_color_loss_decreases_on_training_scene():
    rng = np.random.default_rng(0)
    feats = Tensor(rng.normal(size=(1, 6, 10, 10)).astype(np.float32))
    scene = Tensor(rng.uniform(0.05, 1.0, size=(1, 3, 10, 10)).astype(np.float32))
    target = color.chroma(scene)
    net = color.ColorNet(6, np.random.default_rng(1))
    cfg = trainer.TrainConfig(lr=2e-3)
    state = trainer.AdamState()
    history = []
    for _ in range(150):
        loss = color.loss_color(target, color.predict_color(net, feats))
        net.zero_grad()
        loss.backward()
        trainer.adam_step(net.parameters(), [p.grad for p in net.parameters()], state, cfg)
        history.append(loss.item())
    smooth = np.convolve(history, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth[::15]) < 0)
    assert smooth[-1] < 0.6 * smooth[0]
