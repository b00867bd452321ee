import math

import numpy as np
import pytest

from afa import numerics as nx
from afa.config import RngStreams, TrainConfig
from afa.corpus import batch_iter, gen_planted
from afa.masking import batch_log_policy_prob, log_policy_prob
from afa.numerics import Tensor
from afa.trainer import (REWARD_CAP, Trainer, TrainingAborted, adversarial_loss, advantages,
                         build_models, fit, reward, train_step)

TOY = dict(d_model=8, n_heads=2, d_ff=16, disc_d_model=8, disc_heads=2, disc_d_ff=16,
           batch_size=8, epochs=1, lr_target=1e-3, lr_disc=1e-3, pos_encoding=False)


@pytest.fixture(scope="module")
def planted():
    data, vocab = gen_planted(64, 6, 2, 1, 20, seed=0)
    return data, len(vocab)


def test_reward_values():
    assert reward(0.0) == 0.0
    assert reward(0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert reward(1 - 1e-12) == pytest.approx(27.631, abs=1e-3)
    assert reward(1.0) == pytest.approx(REWARD_CAP)


def test_advantages_hand_and_symmetry(rng):
    np.testing.assert_allclose(advantages([1.0, 0.5]), [0.25, -0.25])
    np.testing.assert_array_equal(advantages([0.7] * 4), np.zeros(4))
    r = rng.random(5)
    perm = rng.permutation(5)
    np.testing.assert_allclose(advantages(r[perm]), advantages(r)[perm], atol=1e-15)
    assert abs(advantages(rng.random((3, 6))).sum(axis=1)).max() < 1e-9


def test_advantages_need_two_samples():
    with pytest.raises(ValueError):
        advantages([1.0])


def test_adversarial_loss_hand_value():
    loss = adversarial_loss([0.25, -0.25], Tensor([math.log(0.5), math.log(0.25)]))
    expected = -(0.25 * math.log(0.5) + (-0.25) * math.log(0.25)) / 2
    assert loss.item() == pytest.approx(expected, abs=1e-12)
    assert loss.item() == pytest.approx(-0.0866, abs=1e-4)


def test_adversarial_loss_zero_advantage_zero_grad():
    lp = Tensor([-0.5, -1.0, -2.0], requires_grad=True)
    loss = adversarial_loss(np.zeros(3), lp)
    assert loss.item() == 0.0
    nx.backward(loss)
    np.testing.assert_array_equal(lp.grad, 0.0)


def test_adversarial_loss_linear_in_advantage(rng):
    lp = Tensor(-rng.random((2, 4)))
    adv = rng.normal(size=(2, 4))
    assert adversarial_loss(2 * adv, lp).item() == pytest.approx(2 * adversarial_loss(adv, lp).item())


@pytest.mark.parametrize("seed", range(20))
def test_adversarial_loss_gradcheck_wrt_attention_logits(seed):
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    live = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], bool)
    sels = [[(0, 2), (4, 1), (3,)], [(2, 0), (1,), (0, 1)]]
    adv = advantages(rng.random((2, 3)))

    def fn(z):
        a = nx.softmax_rows(nx.masked_fill(z, ~live, nx.MASK_LOGIT))
        return adversarial_loss(adv, batch_log_policy_prob(a, sels, live))

    assert nx.gradcheck(fn, [logits]) < 1e-4


def test_policy_gradient_raises_mass_of_advantaged_choice():
    z = Tensor(np.zeros(3), requires_grad=True)
    a = nx.softmax_rows(z.reshape(1, 3)).reshape(3)
    lp = nx.as_tensor([log_policy_prob(a, (0,)), log_policy_prob(a, (1,))][0]).reshape(1)
    # advantage +1 on choosing index 0: descending the loss raises logit 0
    loss = adversarial_loss(np.array([1.0]), lp)
    nx.backward(loss)
    assert z.grad[0] < 0 and z.grad[1] > 0


def _setup(planted, **over):
    data, v = planted
    cfg = TrainConfig(**{**TOY, **over})
    rngs = RngStreams(cfg.seed)
    t, d = build_models(cfg, v, rngs)
    return data, cfg, rngs, t, d


def test_train_step_deterministic(planted):
    reps = []
    for _ in range(2):
        data, cfg, rngs, t, d = _setup(planted)
        batch = next(batch_iter(data, 8))
        reps.append(train_step(t, d, batch, cfg, rngs))
    assert reps[0] == reps[1]
    for v in vars(reps[0]).values():
        assert np.isfinite(v)


def test_component_isolation(planted):
    data, cfg, rngs, t, d = _setup(planted)
    tr = Trainer(t, d, cfg, rngs)
    tr.check_isolation = True
    for batch in batch_iter(data, 8):
        tr.train_step(batch)


def test_discriminator_loss_never_reaches_target(planted):
    data, cfg, rngs, t, d = _setup(planted)
    from afa.discriminator import disc_loss
    batch = next(batch_iter(data, 8))
    masked = batch.token_ids.copy()
    masked[:, 0] = 2
    nx.backward(disc_loss(d.predict(batch.token_ids), d.predict(masked)))
    assert all(p.grad is None for p in t.params.values())
    assert all(p.grad is not None for p in d.params.values())


def test_fit_is_deterministic_and_writes_history(planted, tmp_path):
    out = []
    for run in range(2):
        data, cfg, rngs, t, d = _setup(planted, epochs=2)
        fit(t, d, data, cfg, rngs, valid=data[:16], out_dir=tmp_path / str(run))
        out.append(((tmp_path / str(run) / "history.jsonl").read_bytes(),
                    (tmp_path / str(run) / "epoch001.afa").read_bytes()))
    assert out[0] == out[1]
    assert len(out[0][0].splitlines()) == 2 * 8


def test_lambda_zero_matches_supervised(planted):
    finals = []
    for adversarial in (True, False):
        data, cfg, rngs, t, d = _setup(planted, lam=0.0, adversarial=adversarial, epochs=2)
        fit(t, d if adversarial else None, data, cfg, rngs)
        finals.append({k: p.data.tobytes() for k, p in t.params.items()})
    assert finals[0] == finals[1]


def test_lambda_positive_differs_from_supervised(planted):
    finals = []
    for adversarial in (True, False):
        data, cfg, rngs, t, d = _setup(planted, lam=1.0, adversarial=adversarial)
        fit(t, d if adversarial else None, data, cfg, rngs)
        finals.append(t.params["w_q"].data.copy())
    assert not np.array_equal(finals[0], finals[1])


def test_nonfinite_loss_aborts(planted, tmp_path):
    data, cfg, rngs, t, d = _setup(planted)
    t.params["cls_w"].data[:] = np.nan
    with pytest.raises(TrainingAborted) as exc:
        fit(t, d, data, cfg, rngs, out_dir=tmp_path)
    assert exc.value.batch is not None
    assert (tmp_path / "abort_batch.txt").exists()


def test_best_validation_restored(planted):
    data, cfg, rngs, t, d = _setup(planted, epochs=3)
    hist = fit(t, d, data, cfg, rngs, valid=data[:32])
    assert hist.best_epoch is not None
    assert len(hist.epochs) == 3 and all("valid_accuracy" in e for e in hist.epochs)
