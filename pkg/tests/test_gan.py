import math

import numpy as np
import pytest

from noisytwins.config import TrainConfig
from noisytwins.data import synth_dataset
from noisytwins.gan import (
    LOG_HEADER,
    d_loss,
    g_loss,
    generator_step,
    init_state,
    load_state,
    r1_penalty,
    save_state,
    train,
    train_step,
)
from noisytwins.latent import twin_batch
from noisytwins.mlp import MLP
from noisytwins.numcore import ContractError, NumericError, Rng, Tape


def tiny_config(**changes) -> TrainConfig:
    base = {
        "iterations": 20,
        "batch_size": 16,
        "data.num_classes": 4,
        "data.n_max": 200,
        "data.rho": 10.0,
        "data.grid_cols": 2,
        "model.dim": 8,
        "model.synthesis_width": 16,
        "model.disc_width": 16,
        "model.synthesis_layers": 2,
        "model.disc_layers": 2,
    }
    base.update(changes)
    return TrainConfig().replace(**base)


def tiny_data(cfg):
    return synth_dataset(cfg.data.profile(), cfg.data.spec(), Rng(cfg.data.seed))


def sigmoid(x):
    return 1 / (1 + math.exp(-x))


def test_d_loss_at_zero_logits():
    tape = Tape()
    assert d_loss(tape.constant([[0.0]]), tape.constant([[0.0]])).item() == pytest.approx(2 * math.log(2), abs=1e-15)


def test_g_loss_at_zero_logit():
    assert g_loss(Tape().constant([[0.0]])).item() == pytest.approx(math.log(2), abs=1e-15)


def test_losses_match_naive_formula():
    rng = np.random.default_rng(0)
    a, b = rng.normal(0, 3, size=(32, 1)), rng.normal(0, 3, size=(32, 1))
    tape = Tape()
    naive_d = np.mean([-math.log(sigmoid(x)) - math.log(1 - sigmoid(y)) for x, y in zip(a[:, 0], b[:, 0])])
    naive_g = np.mean([-math.log(sigmoid(y)) for y in b[:, 0]])
    assert d_loss(tape.constant(a), tape.constant(b)).item() == pytest.approx(naive_d, abs=1e-10)
    assert g_loss(tape.constant(b)).item() == pytest.approx(naive_g, abs=1e-10)


@pytest.mark.parametrize("scale", [1e3, 1e6])
def test_losses_finite_at_extreme_logits(scale):
    tape = Tape()
    hi, lo = tape.leaf([[scale], [-scale]]), tape.leaf([[-scale], [scale]])
    for loss in (d_loss(hi, lo), g_loss(lo)):
        assert math.isfinite(loss.item())
        for g in tape.backward(loss, [hi, lo]):
            assert np.all(np.isfinite(g))
    assert d_loss(tape.constant([[scale]]), tape.constant([[-scale]])).item() == 0.0
    assert g_loss(tape.constant([[scale]])).item() == 0.0


def linear_disc(a, d_c):
    return MLP([np.vstack([np.asarray(a, dtype=float).reshape(-1, 1), np.zeros((d_c, 1))])], [np.zeros((1, 1))])


def test_r1_linear_logit():
    a = [3.0, -4.0]
    x = np.random.default_rng(1).normal(size=(8, 2))
    c = np.zeros((8, 3))
    assert r1_penalty(linear_disc(a, 3), x, c, 0.2).item() == pytest.approx(0.1 * 25.0, rel=1e-14)


def test_r1_constant_disc_and_bad_weight():
    x = np.ones((4, 2))
    disc = linear_disc([0.0, 0.0], 1)
    disc.biases[0][:] = 5.0
    assert r1_penalty(disc, x, np.ones((4, 1)), 1.0).item() == 0.0
    with pytest.raises(ContractError):
        r1_penalty(disc, x, np.ones((4, 1)), -1.0)


def test_r1_mlp_matches_finite_differences():
    rng = np.random.default_rng(2)
    disc = MLP.init([2 + 3, 12, 12, 1], Rng(3))
    x, c = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    weight, eps = 0.5, 1e-6
    sq = 0.0
    for i in range(5):
        for j in range(2):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += eps
            xm[i, j] -= eps
            lp = disc(np.hstack([xp, c]))[i, 0]
            lm = disc(np.hstack([xm, c]))[i, 0]
            sq += ((lp - lm) / (2 * eps)) ** 2
    oracle = 0.5 * weight * sq / 5
    assert r1_penalty(disc, x, c, weight).item() == pytest.approx(oracle, rel=1e-4)


def test_r1_is_differentiable_in_disc_params():
    disc = MLP.init([4, 8, 1], Rng(4))
    x, c = np.random.default_rng(5).normal(size=(6, 2)), np.ones((6, 2))
    tape = Tape()
    bound = disc.bind(tape)
    grads = tape.backward(r1_penalty(disc, x, c, 1.0, tape, bound), bound)
    assert any(np.abs(g).sum() > 0 for g in grads)


def test_train_step_updates_and_isolation():
    cfg = tiny_config()
    ds = tiny_data(cfg)
    state = init_state(cfg, ds.class_counts())
    g0 = [p.copy() for p in state.generator.params()]
    d0 = [p.copy() for p in state.disc.params()]
    m0 = state.table.means.copy()
    idx = np.arange(cfg.batch_size)
    rec = train_step(state, (ds.samples[idx], ds.labels[idx]))
    assert rec.iter == 1 and state.iteration == 1 and len(state.log) == 1
    assert any(not np.array_equal(a, b) for a, b in zip(g0, state.generator.params()))
    assert any(not np.array_equal(a, b) for a, b in zip(d0, state.disc.params()))
    assert not np.array_equal(m0, state.table.means)
    with pytest.raises(ContractError):
        train_step(state, (ds.samples[:3], ds.labels[:3]))


def test_generator_step_leaves_disc_alone():
    cfg = tiny_config()
    ds = tiny_data(cfg)
    state = init_state(cfg, ds.class_counts())
    d0 = [p.copy() for p in state.disc.params()]
    labels = ds.labels[: cfg.batch_size]
    rng = Rng(9)
    z = rng.normal(cfg.batch_size * cfg.model.dim).reshape(cfg.batch_size, -1)
    noise = state.table.draw_noise(labels, rng)
    generator_step(state, labels, z, noise, twin_batch(state.table, labels, z, rng))
    for a, b in zip(d0, state.disc.params()):
        np.testing.assert_array_equal(a, b)


def test_twins_loss_reaches_mapping_net():
    """With lam > 0 the G-step gradient differs from the lam = 0 gradient only through L_NT."""
    cfg = tiny_config()
    ds = tiny_data(cfg)
    labels = ds.labels[: cfg.batch_size]

    def step_delta(lam):
        state = init_state(cfg.replace(**{"loss.lam": lam}), ds.class_counts())
        before = [p.copy() for p in state.generator.mapping.params()]
        rng = Rng(9)
        z = rng.normal(cfg.batch_size * cfg.model.dim).reshape(cfg.batch_size, -1)
        noise = state.table.draw_noise(labels, rng)
        generator_step(state, labels, z, noise, twin_batch(state.table, labels, z, rng))
        return np.concatenate([(a - b).ravel() for a, b in zip(state.generator.mapping.params(), before)])

    assert np.linalg.norm(step_delta(0.5) - step_delta(0.0)) > 0


def test_determinism():
    cfg = tiny_config()
    ds = tiny_data(cfg)
    a, b = train(cfg, ds), train(cfg, ds)
    assert [r.row() for r in a.log.records] == [r.row() for r in b.log.records]


def test_reduction_to_baseline_ignores_twins_knobs():
    base = tiny_config(**{"noise.sigma": 0.0, "loss.lam": 0.0})
    ds = tiny_data(base)
    ref = train(base, ds)
    for change in ({"loss.gamma": 0.9}, {"noise.alpha": 0.5}, {"loss.invariance_form": "barlow"}):
        other = train(base.replace(**change), ds)
        for p, q in zip(ref.state.generator.params(), other.state.generator.params()):
            np.testing.assert_array_equal(p, q)
        for r, s in zip(ref.log.records, other.log.records):
            assert (r.L_D, r.L_G, r.min_class_dispersion) == (s.L_D, s.L_G, s.min_class_dispersion)


def test_zero_iterations(tmp_path):
    cfg = tiny_config(iterations=0)
    res = train(cfg, tiny_data(cfg), tmp_path)
    assert len(res.log) == 0 and res.state.iteration == 0
    assert (tmp_path / "runlog.csv").read_text() == ",".join(LOG_HEADER) + "\n"


def test_eval_cadence_and_checkpoints(tmp_path):
    cfg = tiny_config(iterations=10, eval_every=3, checkpoint_every=5)
    res = train(cfg, tiny_data(cfg), tmp_path)
    assert len(res.log.snapshots) == 10 // 3
    assert [p.name for p in res.checkpoints] == ["iter_0000005.ckpt", "iter_0000010.ckpt", "final.ckpt"]
    lines = (tmp_path / "runlog.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOG_HEADER) and len(lines) == 11
    assert len((tmp_path / "snapshots.csv").read_text().splitlines()) == 1 + 3


def test_checkpoint_roundtrip(tmp_path):
    cfg = tiny_config(iterations=5)
    res = train(cfg, tiny_data(cfg))
    save_state(tmp_path / "s.ckpt", res.state)
    back = load_state(tmp_path / "s.ckpt")
    assert back.iteration == 5
    assert back.config.to_dict() == cfg.to_dict()
    for p, q in zip(res.state.generator.params() + res.state.disc.params(), back.generator.params() + back.disc.params()):
        np.testing.assert_array_equal(p, q)
    np.testing.assert_array_equal(back.table.means, res.state.table.means)
    assert back.adam_g.step == res.state.adam_g.step
    for p, q in zip(res.state.adam_d.v, back.adam_d.v):
        np.testing.assert_array_equal(p, q)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_flushes_partial(tmp_path):
    cfg = tiny_config(**{"optim.lr_g": 1e300, "optim.lr_d": 1e300})
    with pytest.raises(NumericError, match="numeric divergence"):
        train(cfg, tiny_data(cfg), tmp_path)
    assert (tmp_path / "partial.ckpt").exists()
    assert (tmp_path / "runlog.csv").exists()
