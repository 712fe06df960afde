"""Alternating discriminator/generator optimization, schedule, checkpoints."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import arweight, losses
from .config import TrainConfig, config_digest, config_text, parse_config
from .container import decode_container, encode_container
from .dataio import load_sample
from .discriminator import Discriminator
from .errors import BadEpoch, EmptyDataset, InterruptedResume, NonFinite, VersionMismatch
from .frozen import load_frozen, stub_extractor, stub_parser
from .generator import Generator

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_KEYS = ("d", "gan", "content", "ar", "perceptual", "bce", "total")


@dataclass
class LossNetworks:
    """Frozen networks behind the perceptual and parsing terms."""

    extractor: torch.nn.Module
    parser: torch.nn.Module

    @classmethod
    def from_config(cls, config):
        extractor = (load_frozen(config.extractor_path, "extractor") if config.extractor_path
                     else stub_extractor(seed=config.oracle_seed))
        parser = (load_frozen(config.parser_path, "parser") if config.parser_path
                  else stub_parser(seed=config.oracle_seed + 1))
        return cls(extractor, parser)


@dataclass
class ModelState:
    config: TrainConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    epoch: int = 0
    step: int = 0
    rng_state: torch.Tensor | None = None
    warnings: list[str] = field(default_factory=list)


def init_state(config):
    torch.manual_seed(config.seed)
    gen = Generator(config.generator_config())
    disc = Discriminator(config.discriminator_config())
    betas = (config.beta1, config.beta2)
    return ModelState(
        config=config, generator=gen, discriminator=disc,
        opt_g=torch.optim.Adam(gen.parameters(), lr=config.lr0, betas=betas),
        opt_d=torch.optim.Adam(disc.parameters(), lr=config.lr0, betas=betas),
        rng_state=torch.get_rng_state(),
    )


def lr_schedule(epoch, config):
    """Constant for the leading epochs, then linear decay over the last
    ``decay_epochs`` (capped at half the run), reaching zero one epoch past
    the end."""
    if not 1 <= epoch <= config.epochs:
        raise BadEpoch(f"epoch {epoch} outside 1..{config.epochs}")
    decay = min(config.decay_epochs, config.epochs // 2)
    return config.lr0 * min(1.0, (config.epochs - epoch + 1) / (decay + 1))


def _set_lr(state, lr):
    for opt in (state.opt_g, state.opt_d):
        for group in opt.param_groups:
            group["lr"] = lr


def collate(samples, dtype=torch.float32):
    def stack(name):
        return torch.from_numpy(np.stack([getattr(s, name) for s in samples])).to(dtype)
    return stack("photo"), stack("saliency"), stack("layout"), stack("sketch")


def _finite(name, value):
    if not torch.isfinite(value).all():
        raise NonFinite(name)


def train_step(state, samples, config=None, networks=None):
    """One discriminator update followed by one generator update.

    ``samples`` is a :class:`PairedSample` or a list of them (one batch).
    Returns the mutated state and the per-term losses as floats.
    """
    config = config or state.config
    if not isinstance(samples, (list, tuple)):
        samples = [samples]
    networks = networks or LossNetworks.from_config(config)
    gen, disc = state.generator, state.discriminator
    dtype = next(gen.parameters()).dtype
    photo, saliency, layout, sketch = collate(samples, dtype)
    gen.train()
    disc.train()

    fake = gen(photo, saliency, layout)

    disc.requires_grad_(True)
    d_loss = losses.adversarial_d(disc(photo, saliency, sketch), disc(photo, saliency, fake.detach()))
    _finite("adversarial_d", d_loss)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    state.opt_d.step()

    disc.requires_grad_(False)
    terms = {
        "gan": losses.adversarial_g(disc(photo, saliency, fake), literal=config.literal_gan),
        "content": losses.content_loss(sketch, fake),
    }
    if config.use_arloss:
        terms["ar"] = arweight.ar_loss(sketch, fake, layout, mode=config.variance_mode)
    if config.use_perceptual:
        terms["perceptual"] = losses.perceptual_loss(sketch, fake, networks.extractor.to(dtype))
    if config.use_bce:
        terms["bce"] = losses.bce_parsing_loss(sketch, fake, networks.parser.to(dtype))
    total, breakdown = losses.total_generator_loss(terms, config.weights)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    disc.requires_grad_(True)

    state.step += 1
    return state, {"d": float(d_loss.detach()), **breakdown}


def format_log_line(epoch, step, breakdown):
    return f"{epoch} {step} " + " ".join(f"{k}={breakdown[k]!r}" for k in LOG_KEYS) + "\n"


def epoch_order(config, epoch, n):
    return np.random.default_rng([config.seed, epoch]).permutation(n)


def fit(data, config, sink=None, networks=None, state=None, history=None):
    """Train over ``data`` (a manifest or a list of samples).

    ``sink`` is an output directory receiving ``losses.log`` and checkpoints.
    Passing ``state`` resumes after ``state.epoch``.  Per-step breakdowns are
    appended to ``history`` when given.
    """
    if hasattr(data, "entries"):
        samples = [load_sample(e, config.parser) for e in data.entries]
    else:
        samples = list(data)
    if not samples:
        raise EmptyDataset("nothing to train on")
    networks = networks or LossNetworks.from_config(config)
    if state is None:
        state = init_state(config)
    else:
        if state.epoch >= config.epochs:
            raise InterruptedResume(
                f"checkpoint is at epoch {state.epoch}, run has only {config.epochs} epochs")
        if state.rng_state is not None:
            torch.set_rng_state(state.rng_state)
    sink = Path(sink) if sink is not None else None
    if sink is not None:
        sink.mkdir(parents=True, exist_ok=True)
    for epoch in range(state.epoch + 1, config.epochs + 1):
        _set_lr(state, lr_schedule(epoch, config))
        order = epoch_order(config, epoch, len(samples))
        for start in range(0, len(order), config.batch):
            batch = [samples[i] for i in order[start:start + config.batch]]
            state, breakdown = train_step(state, batch, config, networks)
            if history is not None:
                history.append((epoch, state.step, breakdown))
            if sink is not None:
                with open(sink / "losses.log", "a") as fh:
                    fh.write(format_log_line(epoch, state.step, breakdown))
        state.epoch = epoch
        log.info("epoch %d done, step %d, total %.4f", epoch, state.step, breakdown["total"])
        state.rng_state = torch.get_rng_state()
        if sink is not None and (epoch % config.checkpoint_every == 0 or epoch == config.epochs):
            save_checkpoint(state, sink / f"epoch_{epoch:04d}.ckpt")
            save_checkpoint(state, sink / "latest.ckpt")
    return state


# --------------------------------------------------------------------------
# checkpoints

def _module_blocks(prefix, module):
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _optimizer_blocks(prefix, opt):
    sd = opt.state_dict()
    blocks = {}
    for idx, slots in sorted(sd["state"].items()):
        for name, value in sorted(slots.items()):
            blocks[f"{prefix}/{idx}/{name}"] = torch.as_tensor(value).detach().cpu().numpy()
    return blocks, sd["param_groups"]


def encode_checkpoint(state):
    config = state.config
    blocks = {}
    blocks.update(_module_blocks("generator", state.generator))
    blocks.update(_module_blocks("discriminator", state.discriminator))
    og, groups_g = _optimizer_blocks("opt_g", state.opt_g)
    od, groups_d = _optimizer_blocks("opt_d", state.opt_d)
    blocks.update(og)
    blocks.update(od)
    rng = state.rng_state if state.rng_state is not None else torch.get_rng_state()
    blocks["rng/torch"] = rng.numpy()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "step": state.step,
        "config": config_text(config),
        "config_digest": config_digest(config),
        "param_groups": {"opt_g": groups_g, "opt_d": groups_d},
    }
    return encode_container(meta, blocks)


def save_checkpoint(state, path):
    path = Path(path)
    path.write_bytes(encode_checkpoint(state))
    return path


def _load_module(module, prefix, blocks):
    sd = {k[len(prefix) + 1:]: torch.from_numpy(v) for k, v in blocks.items()
          if k.startswith(prefix + "/")}
    module.load_state_dict(sd)


def _load_optimizer(opt, prefix, blocks, groups):
    state = {}
    for key, value in blocks.items():
        if not key.startswith(prefix + "/"):
            continue
        _, idx, name = key.split("/")
        state.setdefault(int(idx), {})[name] = torch.from_numpy(value)
    opt.load_state_dict({"state": state, "param_groups": groups})


def load_checkpoint(path, config=None):
    """Restore a :class:`ModelState`.

    The architecture always comes from the checkpoint's own config.  When a
    ``config`` is supplied and its digest differs, a warning is recorded on
    the state and loading proceeds.
    """
    meta, blocks = decode_container(Path(path).read_bytes())
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    saved = parse_config(meta["config"])
    state = init_state(saved)
    _load_module(state.generator, "generator", blocks)
    _load_module(state.discriminator, "discriminator", blocks)
    _load_optimizer(state.opt_g, "opt_g", blocks, meta["param_groups"]["opt_g"])
    _load_optimizer(state.opt_d, "opt_d", blocks, meta["param_groups"]["opt_d"])
    state.epoch = meta["epoch"]
    state.step = meta["step"]
    state.rng_state = torch.from_numpy(blocks["rng/torch"])
    if config is not None and config_digest(config) != meta["config_digest"]:
        msg = (f"config digest {config_digest(config)} differs from checkpoint "
               f"{meta['config_digest']}")
        warnings.warn(msg, stacklevel=2)
        state.warnings.append(msg)
    return state

