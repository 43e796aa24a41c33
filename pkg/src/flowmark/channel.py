"""Network channel effects between watermarker and detector.

Jitter is Laplace-distributed. Window-level schemes see it applied per IPD
(each delay perturbed independently, clamped at zero). Trace-level schemes
see it applied per packet: every timestamp after the first gets an
independent delay perturbation, with the first packet pinned because
detectors align their interval grid to it. Synthetic flows are a stand-in
for captured upload traffic and make no fidelity claim beyond rough
magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FlowTrace


@dataclass(frozen=True)
class JitterConfig:
    location: float = 0.0   # ms
    scale: float = 10.0     # ms
    seed: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError(f"jitter scale must be >= 0, got {self.scale}")


@dataclass(frozen=True)
class FlowSynthConfig:
    """Two-component log-normal IPD mixture, medians in ms."""

    weights: tuple[float, ...] = (0.35, 0.65)
    medians_ms: tuple[float, ...] = (20.0, 80.0)
    log_sigmas: tuple[float, ...] = (0.5, 0.5)
    packets_per_flow: int = 1201
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.medians_ms) or len(self.weights) != len(self.log_sigmas):
            raise ValueError("mixture parameter lists must have equal length")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {sum(self.weights)}")
        if self.packets_per_flow < 2:
            raise ValueError("flows need at least 2 packets")


def sample_laplace(loc: float, scale: float, rng, size=None):
    """Laplace samples via the inverse CDF: loc - scale*sign(u)*ln(1-2|u|).

    `rng` may be a seed or a numpy Generator. scale=0 returns loc exactly.
    """
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    u = rng.random(size) - 0.5
    if scale == 0.0:
        return loc if size is None else np.full_like(np.asarray(u), loc)
    # u == -0.5 has probability 2^-53; floor the log argument to stay finite
    interior = np.maximum(1.0 - 2.0 * np.abs(u), 1e-300)
    return loc - scale * np.sign(u) * np.log(interior)


def apply_jitter(ipds, config: JitterConfig, rng=None) -> np.ndarray:
    """Independent Laplace perturbation of each IPD, clamped at zero."""
    ipds = np.asarray(ipds, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    noise = sample_laplace(config.location, config.scale, rng, size=ipds.shape)
    return np.maximum(ipds + noise, 0.0)


def jitter_trace(trace: FlowTrace, config: JitterConfig, rng=None) -> FlowTrace:
    """Per-packet delay variation relative to the first packet.

    The first timestamp is the alignment reference and stays fixed; every
    later packet is shifted independently. Ordering is repaired with a
    running maximum because reordering is not modeled.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    ts = trace.timestamps.copy()
    if ts.size > 1:
        noise = sample_laplace(config.location, config.scale, rng, size=ts.size - 1)
        ts[1:] = ts[1:] + noise
        ts = np.maximum.accumulate(ts)
        ts = np.maximum(ts, ts[0])
    return FlowTrace(trace.flow_id, ts)


def _sample_mixture_ipds(config: FlowSynthConfig, rng, count: int) -> np.ndarray:
    comp = rng.choice(len(config.weights), size=count, p=np.asarray(config.weights))
    mus = np.log(np.asarray(config.medians_ms))[comp]
    sigmas = np.asarray(config.log_sigmas)[comp]
    return rng.lognormal(mean=mus, sigma=sigmas)


def synthesize_flows(config: FlowSynthConfig, count: int,
                     id_prefix: str = "synth") -> list[FlowTrace]:
    """Generate flows with i.i.d. mixture IPDs, one derived seed per flow."""
    children = np.random.SeedSequence(config.seed).spawn(count)
    flows = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        ipds = _sample_mixture_ipds(config, rng, config.packets_per_flow - 1)
        ts = np.concatenate([[0.0], np.cumsum(ipds)])
        flows.append(FlowTrace(f"{id_prefix}-{i:04d}", ts))
    return flows
