"""Experiment configuration: a line-oriented `key = value` format with dotted
section keys. Unknown keys are hard errors; omitted keys take the documented
defaults. `#` starts a comment.

Key table (defaults in parentheses):

  run.steps (1000)                 run.seed (0)
  run.batch_size (32)              run.adjusted (true)
  run.warmup_handoff_fraction (0.0)
  net.hidden (16,16)
  optimizer.kind (sgd)             sgd | momentum | adam
  optimizer.beta (0.9)             momentum coefficient
  optimizer.beta1 (0.9)            optimizer.beta2 (0.95)
  optimizer.eps (1e-8)
  schedule.kind (constant)         constant | cosine_with_warmup
  schedule.base_lr (0.001)         schedule.warmup_fraction (0.0)
  quantizer.binary (false)         quantizer.bits (2)
  quantizer.delta (auto)           auto: per layer, the init bound sqrt(6/fan_in)
  estimator.kind (ste)             ste | pwl | tanh | mad
  estimator.k (2.0)                tanh sharpness
  estimator.w_min / estimator.w_max (auto)    pwl clip bounds
  estimator.range_lo / estimator.range_hi (auto)   mad flat range
  dataset.kind (synthetic)         synthetic | idx
  dataset.n_samples (1000)         dataset.n_features (2)
  dataset.n_classes (2)            dataset.blob_spread (1.0)
  dataset.seed (1)
  dataset.images_path / dataset.labels_path (required for idx)
  dataset.subset_size (0)          0: use everything
  toy.w0 (0.16666666666666666)     toy.gradients (-0.004,-0.003,-0.002,0.005)
  toy.losses (unset)               optional per-code loss values
"""

from __future__ import annotations

from dataclasses import dataclass
import os

from .bisim import BisimConfig, ScalarToy
from .estimator import EstimatorSpec
from .optim import Schedule
from .quantizer import QuantizerConfig

__all__ = ["ConfigError", "DatasetConfig", "ExperimentConfig",
           "load_config", "parse_config_text"]


class ConfigError(ValueError):
    """Unparseable or invalid experiment configuration."""


_DEFAULTS = {
    "run.steps": "1000",
    "run.seed": "0",
    "run.batch_size": "32",
    "run.adjusted": "true",
    "run.warmup_handoff_fraction": "0.0",
    "net.hidden": "16,16",
    "optimizer.kind": "sgd",
    "optimizer.beta": "0.9",
    "optimizer.beta1": "0.9",
    "optimizer.beta2": "0.95",
    "optimizer.eps": "1e-8",
    "schedule.kind": "constant",
    "schedule.base_lr": "0.001",
    "schedule.warmup_fraction": "0.0",
    "quantizer.binary": "false",
    "quantizer.bits": "2",
    "quantizer.delta": "auto",
    "estimator.kind": "ste",
    "estimator.k": "2.0",
    "estimator.w_min": "auto",
    "estimator.w_max": "auto",
    "estimator.range_lo": "auto",
    "estimator.range_hi": "auto",
    "dataset.kind": "synthetic",
    "dataset.n_samples": "1000",
    "dataset.n_features": "2",
    "dataset.n_classes": "2",
    "dataset.blob_spread": "1.0",
    "dataset.seed": "1",
    "dataset.images_path": "",
    "dataset.labels_path": "",
    "dataset.subset_size": "0",
    "toy.w0": "0.16666666666666666",
    "toy.gradients": "-0.004,-0.003,-0.002,0.005",
    "toy.losses": "",
}


@dataclass(frozen=True)
class DatasetConfig:
    kind: str  # synthetic | idx
    n_samples: int = 1000
    n_features: int = 2
    n_classes: int = 2
    blob_spread: float = 1.0
    seed: int = 1
    images_path: str = ""
    labels_path: str = ""
    subset_size: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    bisim: BisimConfig
    dataset: DatasetConfig
    batch_size: int
    hidden: tuple
    raw: dict  # resolved key table, echoed into trace headers

    def shapes(self, n_features: int, n_classes: int):
        return [n_features, *self.hidden, n_classes]


def _parse_lines(text: str, origin: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected `key = value`")
        key = key.strip()
        value = value.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _get(values, key, conv, origin):
    raw = values[key]
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: key {key!r}: {exc}") from exc


def _as_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _as_float_or_auto(raw: str):
    return None if raw.lower() == "auto" else float(raw)


def _as_float_tuple(raw: str):
    return tuple(float(v) for v in raw.split(",")) if raw else ()


def _as_int_tuple(raw: str):
    return tuple(int(v) for v in raw.split(",")) if raw else ()


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    values = dict(_DEFAULTS)
    values.update(_parse_lines(text, origin))

    def get(key, conv):
        return _get(values, key, conv, origin)

    est_kind = values["estimator.kind"]
    if est_kind not in ("ste", "pwl", "tanh", "mad"):
        raise ConfigError(f"{origin}: key 'estimator.kind': unknown value {est_kind!r}")
    try:
        if est_kind == "tanh":
            estimator = EstimatorSpec.tanh_htge(get("estimator.k", float))
        elif est_kind == "pwl":
            estimator = EstimatorSpec.pwl(get("estimator.w_min", _as_float_or_auto),
                                          get("estimator.w_max", _as_float_or_auto))
        elif est_kind == "mad":
            estimator = EstimatorSpec.mad(get("estimator.range_lo", _as_float_or_auto),
                                          get("estimator.range_hi", _as_float_or_auto))
        else:
            estimator = EstimatorSpec.ste()

        binary = get("quantizer.binary", _as_bool)
        bits = get("quantizer.bits", int)
        delta = get("quantizer.delta", _as_float_or_auto)
        if binary:
            quantizer = QuantizerConfig.sign(delta=1.0 if delta is None else delta)
        elif delta is None:
            quantizer = None  # per-layer delta from the init bound
        else:
            quantizer = QuantizerConfig.symmetric(bits, delta)

        steps = get("run.steps", int)
        schedule = Schedule(base_lr=get("schedule.base_lr", float),
                            total_steps=steps,
                            kind=values["schedule.kind"],
                            warmup_fraction=get("schedule.warmup_fraction", float))

        grads = get("toy.gradients", _as_float_tuple)
        losses = get("toy.losses", _as_float_tuple)
        toy = ScalarToy(code_gradients=grads,
                        w0=get("toy.w0", float),
                        code_losses=losses or None)

        bisim = BisimConfig(
            optimizer=values["optimizer.kind"],
            estimator=estimator,
            schedule=schedule,
            seed=get("run.seed", int),
            steps=steps,
            quantizer=quantizer,
            auto_delta_bits=bits,
            adjusted=get("run.adjusted", _as_bool),
            warmup_handoff_fraction=get("run.warmup_handoff_fraction", float),
            momentum_beta=get("optimizer.beta", float),
            adam_beta1=get("optimizer.beta1", float),
            adam_beta2=get("optimizer.beta2", float),
            adam_eps=get("optimizer.eps", float),
            toy=toy,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc

    dataset = DatasetConfig(
        kind=values["dataset.kind"],
        n_samples=get("dataset.n_samples", int),
        n_features=get("dataset.n_features", int),
        n_classes=get("dataset.n_classes", int),
        blob_spread=get("dataset.blob_spread", float),
        seed=get("dataset.seed", int),
        images_path=values["dataset.images_path"],
        labels_path=values["dataset.labels_path"],
        subset_size=get("dataset.subset_size", int),
    )
    if dataset.kind not in ("synthetic", "idx"):
        raise ConfigError(f"{origin}: key 'dataset.kind': unknown value {dataset.kind!r}")
    if dataset.kind == "idx":
        for key in ("dataset.images_path", "dataset.labels_path"):
            path = values[key]
            if not path:
                raise ConfigError(f"{origin}: key {key!r} is required for idx datasets")
            if not os.path.exists(path):
                raise ConfigError(f"{origin}: key {key!r}: no such file {path!r}")

    batch_size = get("run.batch_size", int)
    if batch_size < 1:
        raise ConfigError(f"{origin}: key 'run.batch_size' must be >= 1")
    hidden = get("net.hidden", _as_int_tuple)
    if any(h < 1 for h in hidden):
        raise ConfigError(f"{origin}: key 'net.hidden' widths must be positive")

    return ExperimentConfig(bisim=bisim, dataset=dataset, batch_size=batch_size,
                            hidden=hidden, raw=values)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config_text(text, origin=str(path))
