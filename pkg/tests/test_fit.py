"""Trainer: schedule, hard-example mining, gradients, and convergence."""

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from uqseg import (
    EmptyBatchError,
    FitConfig,
    GaussianHead,
    lr_at,
    make_separable_dataset,
    ohem_ce,
    point_logits,
    sgd_fit,
)
from uqseg.fit import load_dataset, save_dataset


def test_lr_linear_warmup_then_constant():
    cfg = FitConfig(total_iters=5000, warmup_iters=1000, base_lr=0.01)
    assert abs(lr_at(499, cfg) - 0.005) < 1e-15
    assert lr_at(999, cfg) == 0.01
    assert lr_at(3000, cfg) == 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(total_iters=10, warmup_iters=20)
    with pytest.raises(ValueError):
        FitConfig(snapshot_every=0)
    with pytest.raises(ValueError):
        FitConfig(ohem_threshold=0.0)
    text = FitConfig().defaults_text()
    assert "total_iters=5000" in text and "snapshot_every=50" in text


# --- hard-example-mined cross entropy ---------------------------------------


def _logits_for_losses(losses):
    # two-class logits [a, 0] with true class 0 so that CE == requested loss
    p_true = np.exp(-np.asarray(losses))
    a = np.log(p_true / (1.0 - p_true))
    logits = np.zeros((1, len(losses), 2))
    logits[0, :, 0] = a
    return logits


def test_ohem_four_pixel_example():
    # losses {0.1, 0.2, 0.9, 1.3}: only the two with p_true < 0.7 survive
    logits = _logits_for_losses([0.1, 0.2, 0.9, 1.3])
    labels = np.zeros((1, 4), np.uint16)
    loss, grad = ohem_ce(logits, labels, threshold=0.7, min_kept=1)
    assert abs(loss - 1.1) < 1e-9
    assert (grad[0, :2] == 0.0).all()
    assert (grad[0, 2:] != 0.0).any()


def test_ohem_confident_batch_keeps_single_hardest():
    logits = _logits_for_losses([0.001, 0.002, 0.01, 0.005])
    labels = np.zeros((1, 4), np.uint16)
    loss, grad = ohem_ce(logits, labels, threshold=0.7, min_kept=1)
    assert abs(loss - 0.01) < 1e-12
    retained = np.flatnonzero(np.abs(grad).sum(axis=-1)[0])
    assert retained.tolist() == [2]


def test_ohem_min_kept_default_is_sixteenth():
    rng = np.random.default_rng(4)
    logits = rng.normal(0, 0.01, size=(8, 8, 3))
    logits[..., 0] += 10.0  # everything confidently class 0
    labels = np.zeros((8, 8), np.uint16)
    _, grad = ohem_ce(logits, labels)  # 64 pixels -> keep 4
    assert int((np.abs(grad).sum(axis=-1) > 0).sum()) == 4


def test_ohem_ignored_pixels_never_retained():
    logits = _logits_for_losses([2.0, 2.0, 2.0, 0.01])
    labels = np.zeros((1, 4), np.uint16)
    labels[0, :3] = 255
    loss, grad = ohem_ce(logits, labels, threshold=0.7, min_kept=4)
    assert (grad[0, :3] == 0.0).all()
    assert abs(loss - 0.01) < 1e-12
    labels[:] = 255
    with pytest.raises(EmptyBatchError):
        ohem_ce(logits, labels)


def test_ohem_label_bounds_checked():
    logits = np.zeros((1, 2, 3))
    labels = np.array([[0, 3]], np.uint16)
    with pytest.raises(Exception, match="labels"):
        ohem_ce(logits, labels)


def _fd_gradient(logits, labels, h=1e-5, **kw):
    grad = np.zeros_like(logits)
    it = np.nditer(logits, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        lp = logits.copy()
        lp[idx] += h
        ln = logits.copy()
        ln[idx] -= h
        grad[idx] = (ohem_ce(lp, labels, **kw)[0] - ohem_ce(ln, labels, **kw)[0]) / (2 * h)
        it.iternext()
    return grad


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ohem_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0, 1.5, size=(2, 2, 3))
    labels = rng.integers(0, 3, size=(2, 2)).astype(np.uint16)
    _, grad = ohem_ce(logits, labels, threshold=0.7, min_kept=1)
    fd = _fd_gradient(logits, labels, threshold=0.7, min_kept=1)
    denom = np.maximum.reduce([np.abs(fd), np.abs(grad), np.full_like(fd, 1e-6)])
    assert (np.abs(fd - grad) / denom).max() < 1e-4


# --- SGD fit ------------------------------------------------------------------


def _zero_head(k, d):
    return GaussianHead(np.zeros((k, d)), np.zeros(k), np.zeros((k, d)), np.zeros(k))


def test_snapshot_count_formula():
    ds = make_separable_dataset(n_images=2, height=8, width=8, seed=1)
    cfg = FitConfig(total_iters=120, warmup_iters=40, snapshot_every=10, base_lr=0.1, seed=2)
    result = sgd_fit(ds, _zero_head(2, 2), cfg)
    assert len(result.stream) == (120 - 40) // 10


def test_fit_deterministic_given_seed():
    ds = make_separable_dataset(n_images=3, height=8, width=8, seed=3)
    cfg = FitConfig(total_iters=60, warmup_iters=20, snapshot_every=5, base_lr=0.2, seed=9)
    r1 = sgd_fit(ds, _zero_head(2, 2), cfg)
    r2 = sgd_fit(ds, _zero_head(2, 2), cfg)
    assert np.array_equal(r1.stream.snapshots, r2.stream.snapshots)
    assert np.array_equal(r1.final_weight, r2.final_weight)


def test_strong_weight_decay_shrinks_weights():
    # lr * decay must stay < 1 for the discrete update to be contractive
    ds = make_separable_dataset(n_images=2, height=8, width=8, seed=4)
    init = GaussianHead(np.full((2, 2), 3.0), np.full(2, 3.0), np.zeros((2, 2)), np.zeros(2))
    cfg = FitConfig(total_iters=50, warmup_iters=10, snapshot_every=50, base_lr=5e-4,
                    weight_decay=1e3, seed=5)
    result = sgd_fit(ds, init, cfg)
    assert np.linalg.norm(result.final_weight) < np.linalg.norm(init.mean_weight)


def test_separable_problem_reaches_high_accuracy():
    ds = make_separable_dataset(n_images=4, height=32, width=32, seed=6)
    cfg = FitConfig(total_iters=800, warmup_iters=200, snapshot_every=25, base_lr=0.5, seed=7)
    result = sgd_fit(ds, _zero_head(2, 2), cfg)

    holdout = make_separable_dataset(n_images=1, height=32, width=32, seed=61)[0]
    feats, labels = holdout
    pred = np.argmax(point_logits(feats, result.point_head()), axis=-1)
    accuracy = float((pred == labels).mean())
    assert accuracy > 0.95

    # independent check that the task itself is linearly solvable
    x = np.concatenate([f.reshape(-1, 2) for f, _ in ds])
    y = np.concatenate([l.reshape(-1) for _, l in ds])
    oracle = LogisticRegression().fit(x, y)
    assert oracle.score(feats.reshape(-1, 2), labels.reshape(-1)) > 0.95

    # loss decreased between the first and last quarter of training
    q = len(result.loss_history) // 4
    assert result.loss_history[-q:].mean() < result.loss_history[:q].mean()


def test_momentum_changes_trajectory():
    ds = make_separable_dataset(n_images=2, height=8, width=8, seed=8)
    base = FitConfig(total_iters=40, warmup_iters=10, snapshot_every=10, base_lr=0.2, seed=3)
    with_momentum = FitConfig(total_iters=40, warmup_iters=10, snapshot_every=10,
                              base_lr=0.2, seed=3, momentum=0.9)
    r1 = sgd_fit(ds, _zero_head(2, 2), base)
    r2 = sgd_fit(ds, _zero_head(2, 2), with_momentum)
    assert not np.array_equal(r1.final_weight, r2.final_weight)


def test_dataset_directory_round_trip(tmp_path):
    ds = make_separable_dataset(n_images=3, height=8, width=8, seed=10)
    save_dataset(tmp_path, ds)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names[0] == "features_0000.eusg" and "labels_0002.eusg" in names
    back = load_dataset(tmp_path)
    assert len(back) == 3
    np.testing.assert_array_equal(back[1][0], ds[1][0])
    assert np.array_equal(back[1][1].data, ds[1][1])


def test_empty_and_mismatched_datasets(tmp_path):
    with pytest.raises(ValueError):
        sgd_fit([], _zero_head(2, 2), FitConfig(total_iters=2, warmup_iters=0))
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
