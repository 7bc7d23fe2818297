"""Flat key-value experiment configuration.

One ``key = value`` pair per line, ``#`` comments, no sections. Unknown
keys are rejected and the whole file is validated before any compute
starts. The documented key list lives in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .errors import ConfigError


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


@dataclass
class ExperimentConfig:
    task: str = "mri"
    image_size: int = 64
    data_num: int = 200
    data_seed: int = 7
    data_dir: Optional[str] = None
    phantom_min_ellipses: int = 3
    phantom_max_ellipses: int = 8
    phantom_intensity_min: float = 0.2
    phantom_intensity_max: float = 1.0
    phantom_phase: bool = False
    holdout: int = 20
    noise_std: float = 0.0
    mask_rate: float = 0.2
    mask_center_fraction: float = 0.04
    mask_decay: float = 3.0
    mask_seed: int = 1
    unroll_t: int = 10
    alpha_init: Optional[float] = None
    beta: float = 0.75
    loss: str = "l2"
    lr: float = 1e-3
    lr_halve_every: int = 10000
    batch_size: int = 2
    epochs: int = 10
    train_seed: int = 3
    arch: str = "resnet"
    num_res_blocks: int = 1
    feature_maps: int = 32
    chain_layers: int = 3
    chain_kernel: int = 9
    activation: str = "relu"
    normalization: str = "instance"
    cs_lambda: Optional[float] = None
    cs_iterations: int = 300
    cs_solver: str = "fista"
    cs_levels: int = 3
    cs_grid_points: int = 8
    cs_grid_lo: float = 1e-4
    cs_grid_hi: float = 1e-1
    cs_val_images: int = 10
    sweep_grid: str = "1:1,3:1"
    checkpoint_path: Optional[str] = None
    out_dir: str = "out"
    threads: int = 1

    def resolved_alpha_init(self) -> float:
        if self.alpha_init is not None:
            return self.alpha_init
        # projection spectrum {0,1} makes alpha=1 exact for masked Fourier;
        # the box operator's normal map has top eigenvalue 1/4, so the
        # spectral step 4 replaces the measured component in one go
        return 1.0 if self.task == "mri" else 4.0

    def validate(self) -> None:
        if self.task not in ("mri", "sr"):
            raise ConfigError(f"task must be mri or sr, got {self.task!r}")
        n = self.image_size
        if n < 8 or (n & (n - 1)) != 0:
            raise ConfigError(f"image_size must be a power of two >= 8, got {n}")
        if self.data_dir is None and self.data_num < 1:
            raise ConfigError("data_num must be >= 1 for synthetic data")
        if self.holdout < 1:
            raise ConfigError("holdout must be >= 1")
        if self.data_dir is None and self.holdout >= self.data_num:
            raise ConfigError(f"holdout ({self.holdout}) must be smaller than "
                              f"data_num ({self.data_num})")
        if not (1 <= self.phantom_min_ellipses <= self.phantom_max_ellipses):
            raise ConfigError("phantom ellipse range is invalid")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.task == "mri":
            if not (0.0 < self.mask_rate <= 1.0):
                raise ConfigError(f"mask_rate must be in (0, 1], got {self.mask_rate}")
            if not (0.0 <= self.mask_center_fraction < self.mask_rate):
                raise ConfigError("mask_center_fraction must satisfy 0 <= cf < rate")
        if self.unroll_t < 1:
            raise ConfigError("unroll_t must be >= 1")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.loss not in ("l2", "l1"):
            raise ConfigError(f"loss must be l2 or l1, got {self.loss!r}")
        if self.alpha_init is not None and self.alpha_init <= 0:
            raise ConfigError("alpha_init must be positive")
        for key in ("lr", "lr_halve_every", "batch_size", "epochs",
                    "cs_iterations", "cs_levels", "cs_grid_points", "cs_val_images"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.cs_solver not in ("ista", "fista"):
            raise ConfigError(f"cs_solver must be ista or fista, got {self.cs_solver!r}")
        if self.cs_lambda is not None and self.cs_lambda <= 0:
            raise ConfigError("cs_lambda must be positive")
        if not (0 < self.cs_grid_lo <= self.cs_grid_hi):
            raise ConfigError("cs grid bounds must satisfy 0 < lo <= hi")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        parse_sweep_grid(self.sweep_grid)
        # architecture keys get their final check from ProximalConfig
        from .proxnet import ProximalConfig
        ProximalConfig(arch=self.arch, num_res_blocks=self.num_res_blocks,
                       feature_maps=self.feature_maps, chain_layers=self.chain_layers,
                       chain_kernel=self.chain_kernel, activation=self.activation,
                       normalization=self.normalization).validate()


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_OPTIONAL_FLOATS = {"alpha_init", "cs_lambda"}
_OPTIONAL_STRS = {"data_dir", "checkpoint_path"}
_BOOLS = {"phantom_phase"}
_INTS = {"image_size", "data_num", "data_seed", "phantom_min_ellipses",
         "phantom_max_ellipses", "holdout", "mask_seed", "unroll_t",
         "lr_halve_every", "batch_size", "epochs", "train_seed",
         "num_res_blocks", "feature_maps", "chain_layers", "chain_kernel",
         "cs_iterations", "cs_levels", "cs_grid_points", "cs_val_images",
         "threads"}
_FLOATS = {"phantom_intensity_min", "phantom_intensity_max", "noise_std",
           "mask_rate", "mask_center_fraction", "mask_decay", "beta", "lr",
           "cs_grid_lo", "cs_grid_hi"}


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        try:
            if key in _BOOLS:
                values[key] = _parse_bool(raw)
            elif key in _INTS:
                values[key] = int(raw)
            elif key in _FLOATS or key in _OPTIONAL_FLOATS:
                values[key] = float(raw)
            else:
                values[key] = raw
        except ValueError:
            raise ConfigError(f"{origin}:{lineno}: bad value {raw!r} for {key!r}") from None
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), origin=str(path))


def parse_sweep_grid(spec: str):
    """Parse 'T:RB,T:RB,...' into a list of (iterations, res_blocks) cells."""
    cells = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(f"sweep cell {part!r} is not T:RB")
        try:
            t, rb = int(pieces[0]), int(pieces[1])
        except ValueError:
            raise ConfigError(f"sweep cell {part!r} is not numeric") from None
        if t < 1 or rb < 1:
            raise ConfigError(f"sweep cell {part!r} must be positive")
        cells.append((t, rb))
    if not cells:
        raise ConfigError("sweep_grid is empty")
    return cells
