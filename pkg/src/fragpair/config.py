"""Experiment configuration: strict JSON schema, validation and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .fragments import MAX_FRAGMENTS, MIN_FRAGMENTS, Pairing, max_jitter

MODES = ("select", "select_regr", "vanilla")
COMBINES = ("union", "intersection", "pred_only", "repr_only")
ACTIVATIONS = ("relu", "tanh")


class ConfigError(ValueError):
    """Raised with the offending field named in the message."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _take(raw: dict, allowed: dict, context: str) -> dict:
    unknown = set(raw) - set(allowed)
    _require(not unknown, f"unknown {context} keys: {', '.join(sorted(unknown))}")
    merged = dict(allowed)
    merged.update(raw)
    return merged


@dataclass(frozen=True)
class NetConfig:
    hidden_dims: tuple[int, ...] = (16, 8)
    activation: str = "relu"

    def validate(self, name: str) -> None:
        _require(len(self.hidden_dims) >= 1, f"{name}.hidden_dims: need one or more layers")
        _require(
            all(isinstance(h, int) and h >= 1 for h in self.hidden_dims),
            f"{name}.hidden_dims: entries must be integers >= 1",
        )
        _require(
            self.activation in ACTIVATIONS,
            f"{name}.activation: must be one of {ACTIVATIONS}",
        )

    def to_dict(self) -> dict:
        return {"hidden_dims": list(self.hidden_dims), "activation": self.activation}

    @staticmethod
    def from_dict(raw: dict, name: str) -> "NetConfig":
        merged = _take(raw, {"hidden_dims": [16, 8], "activation": "relu"}, name)
        return NetConfig(
            hidden_dims=tuple(merged["hidden_dims"]), activation=merged["activation"]
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; (config, seed) determines every output byte."""

    dataset: dict
    noise: Optional[dict] = None
    fragments: int = 4
    jitter: float = 0.05
    knn_k: int = 5
    expert_net: NetConfig = field(default_factory=NetConfig)
    regressor_net: NetConfig = field(default_factory=lambda: NetConfig(hidden_dims=(32, 16)))
    epochs: int = 100
    expert_lr: float = 0.1
    regressor_lr: float = 0.1
    batch_size: int = 64
    seed: int = 0
    test_frac: float = 0.2
    pairing_override: Optional[tuple[tuple[int, int], ...]] = None
    mode: str = "select"
    selection_combine: str = "union"
    reference_rho: Optional[float] = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        self._validate_dataset()
        self._validate_noise()
        F = self.fragments
        _require(
            isinstance(F, int) and F % 2 == 0 and MIN_FRAGMENTS <= F <= MAX_FRAGMENTS,
            f"fragments: must be even and within [{MIN_FRAGMENTS}, {MAX_FRAGMENTS}]",
        )
        _require(
            0.0 <= self.jitter <= max_jitter(F) + 1e-12,
            f"jitter: must lie in [0, {max_jitter(F):.6g}] for fragments={F}",
        )
        _require(
            isinstance(self.knn_k, int) and self.knn_k >= 1 and self.knn_k % 2 == 1,
            "knn_k: must be an odd integer >= 1",
        )
        self.expert_net.validate("expert_net")
        self.regressor_net.validate("regressor_net")
        _require(self.epochs >= 1, "epochs: must be >= 1")
        _require(self.expert_lr > 0, "expert_lr: must be > 0")
        _require(self.regressor_lr > 0, "regressor_lr: must be > 0")
        _require(self.batch_size >= 1, "batch_size: must be >= 1")
        _require(0.0 < self.test_frac < 1.0, "test_frac: must lie in (0, 1)")
        _require(self.mode in MODES, f"mode: must be one of {MODES}")
        _require(
            self.selection_combine in COMBINES,
            f"selection_combine: must be one of {COMBINES}",
        )
        if self.pairing_override is not None:
            try:
                pairing = Pairing.from_json(self.pairing_override)
            except ValueError as exc:
                raise ConfigError(f"pairing_override: {exc}") from None
            _require(
                pairing.num_fragments == F,
                f"pairing_override: covers {pairing.num_fragments} fragments, expected {F}",
            )
        if self.reference_rho is not None:
            _require(self.reference_rho > 0, "reference_rho: must be > 0")

    def _validate_dataset(self) -> None:
        _require(isinstance(self.dataset, dict), "dataset: must be an object")
        kind = self.dataset.get("kind")
        if kind == "synthetic":
            spec = _take(
                self.dataset,
                {
                    "kind": "synthetic",
                    "n": 2000,
                    "d": 2,
                    "label_lo": 0.0,
                    "label_hi": 100.0,
                    "feature_noise_std": 0.1,
                },
                "dataset",
            )
            _require(spec["n"] >= 1, "dataset.n: must be >= 1")
            _require(spec["d"] >= 1, "dataset.d: must be >= 1")
            _require(
                spec["label_hi"] > spec["label_lo"],
                "dataset.label_hi: must exceed dataset.label_lo",
            )
            _require(
                spec["feature_noise_std"] >= 0,
                "dataset.feature_noise_std: must be >= 0",
            )
            object.__setattr__(self, "dataset", spec)
        elif kind == "csv":
            spec = _take(
                self.dataset,
                {
                    "kind": "csv",
                    "path": None,
                    "feature_cols": None,
                    "label_col": "label",
                    "gt_col": None,
                },
                "dataset",
            )
            _require(bool(spec["path"]), "dataset.path: required for csv sources")
            _require(
                bool(spec["feature_cols"]),
                "dataset.feature_cols: required for csv sources",
            )
            object.__setattr__(self, "dataset", spec)
        else:
            raise ConfigError("dataset.kind: must be 'synthetic' or 'csv'")

    def _validate_noise(self) -> None:
        if self.noise is None:
            return
        _require(isinstance(self.noise, dict), "noise: must be an object or null")
        kind = self.noise.get("kind")
        if kind == "symmetric":
            spec = _take(self.noise, {"kind": None, "rate": None, "seed": None}, "noise")
            _require(
                spec["rate"] is not None and 0.0 <= spec["rate"] <= 1.0,
                "noise.rate: must lie in [0, 1]",
            )
        elif kind == "gaussian":
            spec = _take(
                self.noise, {"kind": None, "max_std_frac": None, "seed": None}, "noise"
            )
            _require(
                spec["max_std_frac"] is not None and 0.0 < spec["max_std_frac"] <= 1.0,
                "noise.max_std_frac: must lie in (0, 1]",
            )
        else:
            raise ConfigError("noise.kind: must be 'symmetric' or 'gaussian'")
        object.__setattr__(self, "noise", spec)

    def to_dict(self) -> dict:
        return {
            "dataset": dict(self.dataset),
            "noise": None if self.noise is None else dict(self.noise),
            "fragments": self.fragments,
            "jitter": self.jitter,
            "knn_k": self.knn_k,
            "expert_net": self.expert_net.to_dict(),
            "regressor_net": self.regressor_net.to_dict(),
            "epochs": self.epochs,
            "expert_lr": self.expert_lr,
            "regressor_lr": self.regressor_lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "test_frac": self.test_frac,
            "pairing_override": None
            if self.pairing_override is None
            else [list(p) for p in self.pairing_override],
            "mode": self.mode,
            "selection_combine": self.selection_combine,
            "reference_rho": self.reference_rho,
        }

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        defaults = ExperimentConfig(dataset={"kind": "synthetic"}).to_dict()
        merged = _take(raw, defaults, "config")
        override = merged["pairing_override"]
        return ExperimentConfig(
            dataset=merged["dataset"],
            noise=merged["noise"],
            fragments=merged["fragments"],
            jitter=merged["jitter"],
            knn_k=merged["knn_k"],
            expert_net=NetConfig.from_dict(merged["expert_net"], "expert_net"),
            regressor_net=NetConfig.from_dict(merged["regressor_net"], "regressor_net"),
            epochs=merged["epochs"],
            expert_lr=merged["expert_lr"],
            regressor_lr=merged["regressor_lr"],
            batch_size=merged["batch_size"],
            seed=merged["seed"],
            test_frac=merged["test_frac"],
            pairing_override=None
            if override is None
            else tuple(sorted((min(int(a), int(b)), max(int(a), int(b))) for a, b in override)),
            mode=merged["mode"],
            selection_combine=merged["selection_combine"],
            reference_rho=merged["reference_rho"],
        )

    @staticmethod
    def from_file(path: str | Path) -> "ExperimentConfig":
        with Path(path).open() as fh:
            return ExperimentConfig.from_dict(json.load(fh))

    def replace(self, **changes) -> "ExperimentConfig":
        merged = self.to_dict()
        merged.update(changes)
        return ExperimentConfig.from_dict(merged)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]
