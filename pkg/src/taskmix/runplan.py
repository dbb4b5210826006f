"""Training-run arithmetic: effective batch size and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

PEAK_LR = 3e-5
WARMUP_FRACTION = 0.30


def effective_batch_size(per_device: int, grad_accum: int, devices: int) -> int:
    for name, value in (("per_device", per_device), ("grad_accum", grad_accum), ("devices", devices)):
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return per_device * grad_accum * devices


def epoch_steps(n_samples: int, batch_size: int) -> int:
    """Optimizer steps in one pass over ``n_samples`` at ``batch_size``."""
    if n_samples < 1 or batch_size < 1:
        raise ValueError("n_samples and batch_size must be positive")
    return -(-n_samples // batch_size)


@dataclass(frozen=True)
class LrScheduleConfig:
    epoch1_steps: int
    total_steps: int
    peak_lr: float = PEAK_LR
    warmup_fraction_of_epoch1: float = WARMUP_FRACTION
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.epoch1_steps < 1 or self.total_steps < 1:
            raise ValueError("epoch1_steps and total_steps must be positive")
        if not 0 < self.warmup_fraction_of_epoch1 <= 1:
            raise ValueError(f"warmup fraction must lie in (0, 1], got {self.warmup_fraction_of_epoch1}")
        if not self.peak_lr > self.floor_lr >= 0:
            raise ValueError(f"need peak_lr > floor_lr >= 0, got {self.peak_lr} and {self.floor_lr}")
        if self.warmup_steps > self.total_steps:
            raise ValueError(
                f"warmup of {self.warmup_steps} steps does not fit in {self.total_steps} total steps"
            )

    @property
    def warmup_steps(self) -> int:
        # round() first so 0.3 * 10 does not ceil to 4
        return math.ceil(round(self.warmup_fraction_of_epoch1 * self.epoch1_steps, 9))


def lr_at(step: int, config: LrScheduleConfig) -> float:
    """Linear warmup to ``peak_lr`` over the first W steps, then cosine decay to ``floor_lr``.

    Warmup starts at ``peak_lr / W`` (not zero) and reaches the peak at step W-1.
    With a nonzero floor the early warmup steps are held at the floor.
    """
    if not 0 <= step < config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps})")
    w = config.warmup_steps
    if step < w:
        return max(config.floor_lr, config.peak_lr * ((step + 1) / w))
    span = config.total_steps - w
    progress = (step - w) / span
    return config.floor_lr + (config.peak_lr - config.floor_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def lr_schedule(config: LrScheduleConfig) -> list[float]:
    return [lr_at(s, config) for s in range(config.total_steps)]
