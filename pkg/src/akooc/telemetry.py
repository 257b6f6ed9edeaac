"""PMU measurement pipeline: additive noise, control-path delay and missing-PMU imputation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientNeighbors


@dataclass
class TelemetryConfig:
    noise_std: float = 0.0
    delay_mean: float = 0.0
    delay_std: float = 0.0
    missing_ders: tuple = ()
    neighbors: dict = field(default_factory=dict)
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0 or self.delay_std < 0:
            raise ValueError("noise_std and delay_std must be non-negative")
        for m in self.missing_ders:
            if len(self.neighbors.get(m, ())) < 2:
                raise InsufficientNeighbors(f"missing DER {m} needs two proximal DERs")


def sample_pmu(truth, cfg: TelemetryConfig, rng: np.random.Generator) -> np.ndarray:
    """Truth plus i.i.d. Gaussian noise on every channel."""
    truth = np.asarray(truth, dtype=float)
    if cfg.noise_std == 0:
        return truth.copy()
    return truth + rng.normal(0.0, cfg.noise_std, size=truth.shape)


def sample_delay(cfg: TelemetryConfig, rng: np.random.Generator) -> float:
    """Control-path latency in seconds, truncated at zero."""
    if cfg.delay_mean == 0 and cfg.delay_std == 0:
        return 0.0
    return max(0.0, float(rng.normal(cfg.delay_mean, cfg.delay_std)))


def apply_delay(t_issue: float, cfg: TelemetryConfig, rng: np.random.Generator, dt: float) -> int:
    """Index of the primary substep at which a command issued at ``t_issue`` takes effect.

    The delay is rounded up to whole substeps, so a zero delay lands on the
    issuing substep itself.
    """
    delay = sample_delay(cfg, rng)
    k_issue = int(round(t_issue / dt))
    return k_issue + int(math.ceil(delay / dt - 1e-9))


def impute_missing(x, missing_ders, neighbors, rng: np.random.Generator) -> np.ndarray:
    """Fill missing DER channels with a random convex blend of two proximal DERs.

    ``x`` is the stacked measurement ``[Δθ_1..Δθ_n, ΔV_1..ΔV_n]``. One weight
    ``r ~ U(0, 1)`` is drawn per missing DER and shared by both channels.
    """
    x = np.array(x, dtype=float, copy=True)
    if not missing_ders:
        return x
    n = x.size // 2
    for m in missing_ders:
        nb = neighbors.get(m, ())
        if len(nb) < 2:
            raise InsufficientNeighbors(f"missing DER {m} needs two proximal DERs")
        a, b = nb[0], nb[1]
        r = rng.uniform(0.0, 1.0)
        for off in (0, n):
            x[off + m] = (1 - r) * x[off + a] + r * x[off + b]
    return x


class TelemetryChannel:
    """Stateful per-scenario pipeline: seeded noise, imputation and delay draws."""

    def __init__(self, cfg: TelemetryConfig):
        self.cfg = cfg
        noise_ss, delay_ss, impute_ss = np.random.SeedSequence(cfg.rng_seed).spawn(3)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.delay_rng = np.random.default_rng(delay_ss)
        self.impute_rng = np.random.default_rng(impute_ss)

    def measure(self, truth) -> np.ndarray:
        meas = sample_pmu(truth, self.cfg, self.noise_rng)
        return impute_missing(meas, self.cfg.missing_ders, self.cfg.neighbors, self.impute_rng)

    def effective_step(self, t_issue: float, dt: float) -> int:
        return apply_delay(t_issue, self.cfg, self.delay_rng, dt)
