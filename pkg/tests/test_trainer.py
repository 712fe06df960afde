import copy
import warnings

import numpy as np
import pytest
import torch

from facesketch import config as cfgmod
from facesketch import trainer
from facesketch.config import TrainConfig, config_digest, config_text, parse_config
from facesketch.container import decode_container, encode_container
from facesketch.dataio import make_fixture
from facesketch.errors import BadEpoch, ConfigError, EmptyDataset, InterruptedResume, NonFinite, VersionMismatch
from facesketch.losses import LossWeights

TINY = dict(gen_widths=(8, 16, 16, 16, 16), disc_widths=(8, 16, 16, 16), si_hidden=8)


def tiny_config(**kw):
    return TrainConfig(**{**TINY, "checkpoint_every": 1, **kw})


# --------------------------------------------------------------------------
# schedule

def test_lr_schedule_values():
    c = TrainConfig()
    assert trainer.lr_schedule(1, c) == 2e-4
    assert trainer.lr_schedule(100, c) == 2e-4
    assert trainer.lr_schedule(150, c) == pytest.approx(2e-4 * 51 / 101, rel=1e-12)
    assert trainer.lr_schedule(200, c) == pytest.approx(2e-4 / 101, rel=1e-12)
    for bad in (0, 201):
        with pytest.raises(BadEpoch):
            trainer.lr_schedule(bad, c)


@pytest.mark.parametrize("epochs,decay", [(200, 100), (7, 100), (10, 3), (1, 100)])
def test_lr_schedule_non_increasing_and_positive(epochs, decay):
    c = TrainConfig(epochs=epochs, decay_epochs=decay)
    lrs = [trainer.lr_schedule(e, c) for e in range(1, epochs + 1)]
    assert lrs[0] == c.lr0
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert all(lr > 0 for lr in lrs)


def test_epoch_order_is_seeded_permutation():
    c = TrainConfig(seed=3)
    a = trainer.epoch_order(c, 1, 10)
    assert sorted(a.tolist()) == list(range(10))
    assert np.array_equal(a, trainer.epoch_order(c, 1, 10))
    assert not np.array_equal(a, trainer.epoch_order(c, 2, 10))


# --------------------------------------------------------------------------
# single steps

@pytest.fixture(scope="module")
def samples():
    return make_fixture(7, 4, 64)


def test_train_step_is_deterministic(samples):
    cfg = tiny_config()
    nets = trainer.LossNetworks.from_config(cfg)
    s0 = trainer.init_state(cfg)
    s1 = copy.deepcopy(s0)
    _, a = trainer.train_step(s0, samples[0], cfg, nets)
    _, b = trainer.train_step(s1, samples[0], cfg, nets)
    assert a == b
    for p, q in zip(s0.generator.parameters(), s1.generator.parameters()):
        assert torch.equal(p, q)
    assert set(a) == set(trainer.LOG_KEYS)


def test_content_only_descent(samples):
    cfg = tiny_config(use_arloss=False, use_perceptual=False, use_bce=False,
                      weights=LossWeights(alpha=1.0), lr0=1e-3)
    nets = trainer.LossNetworks.from_config(cfg)
    state = trainer.init_state(cfg)
    # gan term weight is fixed at 1; compare content before and after
    first = None
    for _ in range(50):
        state, bd = trainer.train_step(state, samples[0], cfg, nets)
        first = bd["content"] if first is None else first
    assert bd["content"] < first


def test_disabled_terms_report_zero(samples):
    cfg = tiny_config(use_arloss=False, use_perceptual=False, use_bce=False)
    state = trainer.init_state(cfg)
    _, bd = trainer.train_step(state, samples[0], cfg)
    assert bd["ar"] == bd["perceptual"] == bd["bce"] == 0.0
    assert bd["content"] > 0


def test_non_finite_parameter_is_reported(samples):
    cfg = tiny_config()
    state = trainer.init_state(cfg)
    with torch.no_grad():
        next(state.generator.parameters()).fill_(float("nan"))
    with pytest.raises(NonFinite):
        trainer.train_step(state, samples[0], cfg)


def test_non_finite_discriminator_names_term(samples):
    cfg = tiny_config()
    state = trainer.init_state(cfg)
    with torch.no_grad():
        next(state.discriminator.parameters()).fill_(float("nan"))
    with pytest.raises(NonFinite) as info:
        trainer.train_step(state, samples[0], cfg)
    assert info.value.term == "adversarial_d"


def test_format_log_line():
    bd = {k: 0.5 for k in trainer.LOG_KEYS}
    line = trainer.format_log_line(2, 7, bd)
    assert line.startswith("2 7 d=0.5 gan=0.5")
    assert line.endswith("total=0.5\n")


# --------------------------------------------------------------------------
# fit, resume, checkpoints

def _read_log(path):
    return [l.split() for l in path.read_text().splitlines()]


def test_fit_logs_and_resumes(tmp_path, samples):
    cfg = tiny_config(epochs=3)
    trainer.fit(samples, cfg, sink=tmp_path / "a")
    log = _read_log(tmp_path / "a" / "losses.log")
    assert len(log) == 12
    assert [int(l[0]) for l in log] == [1] * 4 + [2] * 4 + [3] * 4
    assert [int(l[1]) for l in log] == list(range(1, 13))
    assert (tmp_path / "a" / "epoch_0003.ckpt").read_bytes() == (tmp_path / "a" / "latest.ckpt").read_bytes()

    state = trainer.load_checkpoint(tmp_path / "a" / "epoch_0002.ckpt")
    assert (state.epoch, state.step) == (2, 8)
    trainer.fit(samples, cfg, sink=tmp_path / "b", state=state)
    resumed = _read_log(tmp_path / "b" / "losses.log")
    assert resumed == log[8:]
    assert (tmp_path / "b" / "epoch_0003.ckpt").read_bytes() == (tmp_path / "a" / "epoch_0003.ckpt").read_bytes()


def test_fit_resume_past_end(tmp_path, samples):
    cfg = tiny_config(epochs=1)
    state = trainer.fit(samples[:1], cfg)
    with pytest.raises(InterruptedResume):
        trainer.fit(samples[:1], cfg, state=state)


def test_fit_empty():
    with pytest.raises(EmptyDataset):
        trainer.fit([], tiny_config())


def test_checkpoint_bytes_are_stable(tmp_path, samples):
    cfg = tiny_config(epochs=1)
    state = trainer.fit(samples[:2], cfg)
    p1 = trainer.save_checkpoint(state, tmp_path / "one.ckpt")
    p2 = trainer.save_checkpoint(trainer.load_checkpoint(p1), tmp_path / "two.ckpt")
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_version_mismatch(tmp_path):
    state = trainer.init_state(tiny_config())
    meta, blocks = decode_container(trainer.encode_checkpoint(state))
    meta["format_version"] = 99
    (tmp_path / "old.ckpt").write_bytes(encode_container(meta, blocks))
    with pytest.raises(VersionMismatch):
        trainer.load_checkpoint(tmp_path / "old.ckpt")


def test_checkpoint_digest_warning(tmp_path):
    cfg = tiny_config()
    path = trainer.save_checkpoint(trainer.init_state(cfg), tmp_path / "c.ckpt")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert trainer.load_checkpoint(path, cfg).warnings == []
    with pytest.warns(UserWarning, match="digest"):
        state = trainer.load_checkpoint(path, cfg.with_(epochs=5))
    assert len(state.warnings) == 1
    # architecture comes from the checkpoint regardless
    assert state.config.gen_widths == TINY["gen_widths"]


# --------------------------------------------------------------------------
# config

def test_config_defaults():
    c = TrainConfig()
    assert (c.epochs, c.lr0, c.beta1, c.beta2, c.batch) == (200, 2e-4, 0.5, 0.999, 1)
    assert c.image_size() == 256
    assert c.variance_mode == "intra" and not c.literal_gan


def test_config_round_trip():
    c = TrainConfig(epochs=7, weights=LossWeights(alpha=3.5), use_bce=False, gen_widths=(8, 16, 16))
    back = parse_config(config_text(c))
    assert back == c
    assert config_digest(back) == config_digest(c)
    assert config_digest(c) != config_digest(c.with_(seed=1))


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key 'train.epoch'"):
        parse_config("train.epoch = 3\n")


@pytest.mark.parametrize("text", ["train.epochs = 0", "train.epochs = x", "loss.alpha = -1",
                                  "loss.variance_mode = other", "just words"])
def test_config_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_keys_cover_every_field():
    import dataclasses
    attrs = {a.split(".")[0] for a, _ in cfgmod.KEYS.values()}
    assert attrs == {f.name for f in dataclasses.fields(TrainConfig)}
    weight_attrs = {a.split(".")[1] for a, _ in cfgmod.KEYS.values() if a.startswith("weights.")}
    assert weight_attrs == {f.name for f in dataclasses.fields(LossWeights)}


def test_config_comments_and_blank_lines():
    c = parse_config("# run\n\ntrain.epochs = 4  # short\nablation.use_bce = off\n")
    assert c.epochs == 4 and c.use_bce is False
