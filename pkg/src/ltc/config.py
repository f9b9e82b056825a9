"""Run configuration: flat ``key = value`` text files with dotted keys.

Every key in KEYS can appear in the config file and as a CLI flag of the
same dotted name (``--mkee.epsilon 0.1``).  Unknown keys are a config error.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .datakit import DatasetSpec
from .losses import LossConfig
from .mkee import MkeeConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_source: str = "synthetic"
    data_csv: str = ""
    data_dim: int = 16
    data_known_classes: int = 5
    data_novel_classes: int = 5
    data_samples_per_class: int = 100
    data_separation: float = 3.0
    data_noise_scale: float = 1.0
    data_train_fraction: float = 0.5
    data_augment_sigma: float = 0.1
    data_seed: int = 0
    # model
    model_hidden: str = "64,64"
    model_feature_dim: int = 32
    # optimizer
    optim_lr: float = 1e-2
    optim_weight_decay: float = 0.05
    optim_beta1: float = 0.9
    optim_beta2: float = 0.999
    optim_eps: float = 1e-8
    # losses
    loss_temperature: float = 0.07
    loss_alpha: float = 0.3
    loss_gamma_mm: float = 0.05
    loss_margin_pos: float = 0.05
    loss_margin_neg: float = 0.05
    # pseudo-unknown generation
    mkee_eta: float = 1.0
    mkee_epsilon: float = 0.05
    mkee_lambda_rho: float = 0.1
    mkee_sigma0: float = 1.0
    mkee_p_gen: float = 0.3
    mkee_warmup_epochs: int = 1
    mkee_dump_diagnostics: bool = False
    # adaptive threshold
    tau_init: float = 0.7
    tau_beta: float = 0.001
    tau_q_pos: float = 0.8
    tau_q_neg: float = 0.2
    # prototypes
    proto_momentum: float = 0.9
    # training loop
    train_epochs: int = 50
    train_batch_size: int = 128
    train_enable_mkee: bool = True
    train_enable_mm: bool = True
    train_adaptive_tau: bool = True
    # run
    run_seed: int = 0
    run_out_dir: str = "runs"

    # -- derived module configs ------------------------------------------

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            source=self.data_source, csv_path=self.data_csv, dim=self.data_dim,
            known_classes=self.data_known_classes,
            novel_classes=self.data_novel_classes,
            samples_per_class=self.data_samples_per_class,
            separation=self.data_separation, noise_scale=self.data_noise_scale,
            seed=self.data_seed,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            temperature=self.loss_temperature, alpha=self.loss_alpha,
            gamma_mm=self.loss_gamma_mm, margin_pos=self.loss_margin_pos,
            margin_neg=self.loss_margin_neg,
        )

    def mkee_config(self) -> MkeeConfig:
        return MkeeConfig(
            eta=self.mkee_eta, epsilon=self.mkee_epsilon,
            lambda_rho=self.mkee_lambda_rho, sigma0=self.mkee_sigma0,
            p_gen=self.mkee_p_gen, warmup_epochs=self.mkee_warmup_epochs,
        )

    def hidden_dims(self) -> list[int]:
        try:
            dims = [int(tok) for tok in self.model_hidden.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"model.hidden must be a comma list of ints, "
                              f"got {self.model_hidden!r}") from None
        if not dims or min(dims) < 1:
            raise ConfigError("model.hidden needs at least one positive width")
        return dims


def _field_to_key(name: str) -> str:
    return name.replace("_", ".", 1)


KEYS: dict[str, tuple[str, type]] = {
    _field_to_key(f.name): (f.name, f.type if isinstance(f.type, type) else
                            {"str": str, "int": int, "float": float, "bool": bool}[f.type])
    for f in fields(RunConfig)
}


def _parse_value(key: str, raw: str):
    _, typ = KEYS[key]
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if typ is str:
        return raw
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, object] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{ln}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus CLI-style overrides."""
    values: dict[str, object] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        values.update(parse_config_text(text, source=str(path)))
    for key, raw in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, str(raw))
    cfg = RunConfig(**{KEYS[k][0]: v for k, v in values.items()})
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    cfg.dataset_spec()
    cfg.loss_config()
    cfg.mkee_config()
    cfg.hidden_dims()
    if cfg.data_source == "csv" and not cfg.data_csv:
        raise ConfigError("data.source = csv requires data.csv")
    if not 0.0 < cfg.data_train_fraction < 1.0:
        raise ConfigError("data.train_fraction must lie in (0, 1)")
    if not -1.0 < cfg.tau_init < 1.0:
        raise ConfigError("tau.init must lie in (-1, 1)")
    if not 0.0 <= cfg.tau_beta <= 1.0:
        raise ConfigError("tau.beta must lie in [0, 1]")
    if not (0.0 < cfg.tau_q_pos < 1.0 and 0.0 < cfg.tau_q_neg < 1.0):
        raise ConfigError("tau quantile levels must lie in (0, 1)")
    if not 0.0 <= cfg.proto_momentum <= 1.0:
        raise ConfigError("proto.momentum must lie in [0, 1]")
    if cfg.train_epochs < 1 or cfg.train_batch_size < 2:
        raise ConfigError("train.epochs must be >= 1 and train.batch_size >= 2")
    if cfg.model_feature_dim < 2:
        raise ConfigError("model.feature_dim must be >= 2")


def config_lines(cfg: RunConfig) -> list[str]:
    """Canonical, fully resolved ``key = value`` lines (sorted by key)."""
    out = []
    for key in sorted(KEYS):
        name, typ = KEYS[key]
        val = getattr(cfg, name)
        if typ is bool:
            val = "true" if val else "false"
        elif typ is float:
            val = repr(float(val))
        out.append(f"{key} = {val}")
    return out


def write_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(config_lines(cfg)) + "\n")


def config_hash(cfg: RunConfig) -> str:
    digest = hashlib.sha256("\n".join(config_lines(cfg)).encode()).hexdigest()
    return digest[:12]


def run_dir_name(cfg: RunConfig) -> str:
    return f"{config_hash(cfg)}-s{cfg.run_seed}"
