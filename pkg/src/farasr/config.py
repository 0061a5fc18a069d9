"""key=value configuration files and named presets.

Files are flat ``section.key = value`` lines; ``#`` starts a comment.
A config may name a preset (``model.preset = desk``) whose file is loaded
first and then overridden by the remaining keys.  The full schema is
documented in the README.
"""

from __future__ import annotations

from importlib import resources

from .invariance import CriticConfig, EnhancerConfig
from .seq2seq import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def parse_kv_text(text, source="<string>"):
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path):
    with open(path) as fh:
        return parse_kv_text(fh.read(), source=str(path))


def load_preset(name):
    try:
        text = (resources.files("farasr") / "presets" / f"{name}.cfg").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}") from None
    return parse_kv_text(text, source=f"preset:{name}")


def resolve_config(path=None, overrides=None):
    """File -> preset expansion -> CLI overrides, later wins."""
    cfg = load_config_file(path) if path else {}
    preset = cfg.get("model.preset")
    if preset:
        merged = load_preset(preset)
        merged.update(cfg)
        cfg = merged
    if overrides:
        cfg.update(overrides)
    return cfg


def _get(cfg, key, cast, default):
    if key not in cfg:
        return default
    raw = cfg[key]
    try:
        if cast is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _get_tuple_int(cfg, key, default):
    if key not in cfg:
        return default
    try:
        return tuple(int(v) for v in cfg[key].replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {cfg[key]!r}") from None


def model_config_from(cfg):
    return ModelConfig(
        encoder_layers=_get(cfg, "model.encoder_layers", int, 3),
        encoder_dim=_get(cfg, "model.encoder_dim", int, 64),
        pool_after=_get_tuple_int(cfg, "model.pool_after", (1, 2, 3)),
        pool_mode=_get(cfg, "model.pool_mode", str, "subsample"),
        decoder_dim=_get(cfg, "model.decoder_dim", int, 64),
        attn_dim=_get(cfg, "model.attn_dim", int, 64),
        attn_filters=_get(cfg, "model.attn_filters", int, 10),
        attn_kernel=_get(cfg, "model.attn_kernel", int, 11),
        chars=_get(cfg, "model.chars", str, ModelConfig.chars),
    )


def _parse_conv_specs(raw, key):
    """'32:7x2:5x1, 64:3x3:2x1' -> ((32,(7,2),(5,1)), (64,(3,3),(2,1)))."""
    specs = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            filters, kernel, stride = part.split(":")
            kh, kw = kernel.split("x")
            sh, sw = stride.split("x")
            specs.append((int(filters), (int(kh), int(kw)), (int(sh), int(sw))))
        except ValueError:
            raise ConfigError(f"bad conv spec in {key}: {part!r}") from None
    if not specs:
        raise ConfigError(f"{key} needs at least one conv spec")
    return tuple(specs)


def critic_config_from(cfg):
    kw = {}
    if "critic.block1" in cfg:
        kw["block1"] = _parse_conv_specs(cfg["critic.block1"], "critic.block1")
    if "critic.block2" in cfg:
        kw["block2"] = _parse_conv_specs(cfg["critic.block2"], "critic.block2")
    kw["rnn1"] = _get(cfg, "critic.rnn1", int, CriticConfig.rnn1)
    kw["rnn2"] = _get(cfg, "critic.rnn2", int, CriticConfig.rnn2)
    kw["use_sigmoid"] = _get(cfg, "critic.use_sigmoid", bool, True)
    return CriticConfig(**kw)


def enhancer_config_from(cfg):
    return EnhancerConfig(
        mode=_get(cfg, "enhancer.mode", str, "none"),
        weight=_get(cfg, "enhancer.weight", float, 1.0),
        stability_eps=_get(cfg, "enhancer.stability_eps", float, 1e-8),
        clip=_get(cfg, "enhancer.clip", float, 0.05),
        n_critic=_get(cfg, "enhancer.n_critic", int, 5),
        warmup_steps=_get(cfg, "enhancer.warmup_steps", int, 3000),
        noise_sigma=_get(cfg, "enhancer.noise_sigma", float, 0.001),
    ).validate()


def _get_tuple_str(cfg, key, default):
    if key not in cfg:
        return default
    return tuple(v for v in cfg[key].replace(",", " ").split())


def experiment_spec_from(cfg):
    from .experiment import ExperimentSpec

    spec = ExperimentSpec(
        rows=_get_tuple_str(cfg, "experiment.rows", ("none", "aug", "l1", "wgan")),
        seeds=_get_tuple_int(cfg, "experiment.seeds", (1, 2, 3)),
        corpus_seed=_get(cfg, "experiment.corpus_seed", int, 7),
        n_train=_get(cfg, "experiment.n_train", int, 240),
        n_dev=_get(cfg, "experiment.n_dev", int, 24),
        n_eval=_get(cfg, "experiment.n_eval", int, 48),
        min_len=_get(cfg, "experiment.min_len", int, 3),
        max_len=_get(cfg, "experiment.max_len", int, 8),
        rir_sizes={
            "train": _get(cfg, "experiment.rir_train", int, 48),
            "dev": _get(cfg, "experiment.rir_dev", int, 8),
            "eval": _get(cfg, "experiment.rir_eval", int, 12),
        },
        model=model_config_from(cfg),
        critic=critic_config_from(cfg),
        steps=_get(cfg, "experiment.steps", int, 2400),
        wgan_steps=_get(cfg, "experiment.wgan_steps", int, 800),
        wgan_warmup=_get(cfg, "experiment.wgan_warmup", int, 250),
        batch_size=_get(cfg, "train.batch_size", int, 8),
        lr=_get(cfg, "train.lr", float, 2e-3),
        critic_lr=_get(cfg, "train.critic_lr", float, 1e-3),
        eval_every=_get(cfg, "train.eval_every", int, 150),
        patience=_get(cfg, "train.patience", int, 10),
        augment_fraction=_get(cfg, "train.augment_fraction", float, 0.4),
        weight=_get(cfg, "enhancer.weight", float, 1.0),
        clip=_get(cfg, "enhancer.clip", float, 0.05),
        n_critic=_get(cfg, "enhancer.n_critic", int, 5),
        noise_sigma=_get(cfg, "enhancer.noise_sigma", float, 0.001),
    )
    return spec.validate()


def train_config_from(cfg, seed=None):
    tc = TrainConfig(
        steps=_get(cfg, "train.steps", int, 2000),
        batch_size=_get(cfg, "train.batch_size", int, 8),
        lr=_get(cfg, "train.lr", float, 1e-4),
        critic_lr=_get(cfg, "train.critic_lr", float, 5e-5),
        grad_clip=_get(cfg, "train.grad_clip", float, 5.0),
        eval_every=_get(cfg, "train.eval_every", int, 200),
        patience=_get(cfg, "train.patience", int, 10),
        augment_fraction=_get(cfg, "train.augment_fraction", float, 0.4),
        augment_ce=_get(cfg, "train.augment_ce", bool, True),
        seed=seed if seed is not None else _get(cfg, "train.seed", int, 0),
        enhancer=enhancer_config_from(cfg),
    )
    return tc.validate()
