"""Monte Carlo generator of correlated Alice/Bob time-tag streams.

Pairs are emitted as a homogeneous Poisson process. Each photon survives its
arm independently, is analysed in a uniformly random basis, and gets
Gaussian timing jitter. Bob's clock is offset and runs fast or slow by a
linear drift. Uncorrelated Poisson background is merged into every channel.
Detector dead time and afterpulsing are not modelled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import PS_PER_S, Party, TimeTagStream, make_rng


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationModel:
    """Matched-basis correlations of the source state (default: Phi-minus)."""

    basis_z_correlated: bool = True
    basis_x_correlated: bool = False


@dataclass(frozen=True)
class SimConfig:
    pair_rate: float = 100_000.0
    arm_transmittance_a: float = 0.7
    arm_transmittance_b: float = 0.7
    intrinsic_qber: float = 0.0478
    background_rate_per_channel: float = 500.0
    timing_jitter_sigma: float = 100.0
    clock_offset: int = 0
    clock_drift: float = 0.0
    duration: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise ConfigError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errors = []
        for name in ("pair_rate", "background_rate_per_channel", "timing_jitter_sigma"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                errors.append(f"{name}: must be a finite non-negative number, got {value}")
        for name in ("arm_transmittance_a", "arm_transmittance_b"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                errors.append(f"{name}: must lie in (0, 1], got {value}")
        if not 0 <= self.intrinsic_qber <= 0.5:
            errors.append(f"intrinsic_qber: must lie in [0, 0.5], got {self.intrinsic_qber}")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            errors.append(f"duration: must be positive, got {self.duration}")
        if not math.isfinite(self.clock_drift) or abs(self.clock_drift) >= 1e6:
            errors.append(f"clock_drift: must be a finite ppm value, got {self.clock_drift}")
        if int(self.clock_offset) != self.clock_offset:
            errors.append(f"clock_offset: must be an integer number of ps, got {self.clock_offset}")
        if not 0 <= int(self.seed) < 2**64:
            errors.append(f"seed: must be a 64-bit unsigned integer, got {self.seed}")
        return errors

    def as_dict(self) -> dict:
        return asdict(self)


def _bob_clock(t: np.ndarray, config: SimConfig) -> np.ndarray:
    return t * (1.0 + config.clock_drift * 1e-6) + config.clock_offset


def generate_pair_streams(
    config: SimConfig,
    model: CorrelationModel | None = None,
    chunk_s: float = 1.0,
) -> tuple[TimeTagStream, TimeTagStream]:
    """Simulate both parties' detection streams.

    The run is generated in ``chunk_s`` pieces to bound memory; the draw
    order is fixed, so a given ``(config, chunk_s)`` is bit-reproducible.
    """
    model = model or CorrelationModel()
    rng = make_rng(int(config.seed))
    total_ps = config.duration * PS_PER_S
    chunk_ps = chunk_s * PS_PER_S
    n_chunks = max(1, math.ceil(config.duration / chunk_s - 1e-12))

    alice_t, alice_c, bob_t, bob_c = [], [], [], []
    for k in range(n_chunks):
        start = k * chunk_ps
        length = min(chunk_ps, total_ps - start)
        a_t, a_c, b_t, b_c = _pair_chunk(rng, config, model, start, length)
        alice_t.append(a_t)
        alice_c.append(a_c)
        bob_t.append(b_t)
        bob_c.append(b_c)
        for times, chans in ((alice_t, alice_c), (bob_t, bob_c)):
            t_bg, c_bg = _background_chunk(rng, config.background_rate_per_channel, start, length)
            times.append(t_bg)
            chans.append(c_bg)

    label = f"sim-seed-{int(config.seed)}"
    alice = _assemble(Party.ALICE, alice_t, alice_c, label)
    bob = _assemble(Party.BOB, bob_t, bob_c, label)
    return alice, bob


def _pair_chunk(rng, config: SimConfig, model: CorrelationModel, start: float, length: float):
    n = int(rng.poisson(config.pair_rate * length / PS_PER_S))
    emit = start + rng.random(n) * length
    a_ok = rng.random(n) < config.arm_transmittance_a
    b_ok = rng.random(n) < config.arm_transmittance_b
    basis_a = rng.integers(0, 2, n, dtype=np.uint8)
    basis_b = rng.integers(0, 2, n, dtype=np.uint8)
    bit_a = rng.integers(0, 2, n, dtype=np.uint8)
    random_b = rng.integers(0, 2, n, dtype=np.uint8)
    flip = (rng.random(n) < config.intrinsic_qber).astype(np.uint8)
    jitter_a = rng.normal(0.0, 1.0, n) * config.timing_jitter_sigma
    jitter_b = rng.normal(0.0, 1.0, n) * config.timing_jitter_sigma

    anti = np.where(
        basis_a == 0, not model.basis_z_correlated, not model.basis_x_correlated
    ).astype(np.uint8)
    matched_b = bit_a ^ anti ^ flip
    bit_b = np.where(basis_a == basis_b, matched_b, random_b)

    a_t = np.rint(emit + jitter_a)[a_ok]
    a_c = (basis_a * 2 + bit_a)[a_ok]
    b_t = np.rint(_bob_clock(emit + jitter_b, config))[b_ok]
    b_c = (basis_b * 2 + bit_b)[b_ok]
    return a_t.astype(np.int64), a_c, b_t.astype(np.int64), b_c


def _background_chunk(rng, rate: float, start: float, length: float):
    counts = rng.poisson(rate * length / PS_PER_S, size=4)
    t = start + rng.random(int(counts.sum())) * length
    c = np.repeat(np.arange(4, dtype=np.uint8), counts)
    return np.floor(t).astype(np.int64), c


def _assemble(party: Party, times: list, chans: list, label: str) -> TimeTagStream:
    t = np.concatenate(times) if times else np.empty(0, np.int64)
    c = np.concatenate(chans) if chans else np.empty(0, np.uint8)
    keep = t >= 0
    return TimeTagStream.from_unsorted(party, t[keep], c[keep], label)


def window_capture(window_ps: float, jitter_sigma_ps: float) -> float:
    """Probability a true pair lands within +/- window after both arms' jitter."""
    if jitter_sigma_ps == 0:
        return 1.0
    return math.erf(window_ps / (2.0 * jitter_sigma_ps))


def expected_rates(config: SimConfig, window_ps: float) -> dict:
    """Analytic sifted rate and QBER expected from ``config`` at a coincidence window.

    Accidentals are estimated as singles_a * singles_b * 2 * window, half of
    them sifted and half of those erroneous.
    """
    bg = 4 * config.background_rate_per_channel
    singles_a = config.pair_rate * config.arm_transmittance_a + bg
    singles_b = config.pair_rate * config.arm_transmittance_b + bg
    true = (
        config.pair_rate
        * config.arm_transmittance_a
        * config.arm_transmittance_b
        * window_capture(window_ps, config.timing_jitter_sigma)
    )
    accidental = singles_a * singles_b * 2.0 * window_ps / PS_PER_S
    sifted_true = 0.5 * true
    sifted_acc = 0.5 * accidental
    sifted = sifted_true + sifted_acc
    qber = (sifted_true * config.intrinsic_qber + 0.5 * sifted_acc) / sifted if sifted else 0.0
    return {
        "coincidence_rate": true + accidental,
        "accidental_rate": accidental,
        "car": true / accidental if accidental else float("inf"),
        "sifted_rate": sifted,
        "accidental_sifted_rate": sifted_acc,
        "qber": qber,
        "singles_a": singles_a,
        "singles_b": singles_b,
    }


def calibrated_config(
    sifted_rate: float = 24_665.0,
    qber: float = 0.0478,
    window_ps: float = 1000.0,
    transmittance: float = 0.7,
    background_rate_per_channel: float = 500.0,
    timing_jitter_sigma: float = 100.0,
    clock_offset: int = 3_000_000_000,
    clock_drift: float = 5.0,
    duration: float = 300.0,
    seed: int = 20260409,
) -> SimConfig:
    """Source settings whose sifted rate and measured QBER hit the given targets.

    Solved by fixed-point iteration on the analytic model of
    :func:`expected_rates`, so accidental coincidences from background are
    accounted for.
    """
    capture = window_capture(window_ps, timing_jitter_sigma)
    pair_rate = 2.0 * sifted_rate / (transmittance**2 * capture)
    intrinsic = qber
    for _ in range(50):
        cfg = SimConfig(
            pair_rate=pair_rate,
            arm_transmittance_a=transmittance,
            arm_transmittance_b=transmittance,
            intrinsic_qber=intrinsic,
            background_rate_per_channel=background_rate_per_channel,
            timing_jitter_sigma=timing_jitter_sigma,
            clock_offset=clock_offset,
            clock_drift=clock_drift,
            duration=duration,
            seed=seed,
        )
        rates = expected_rates(cfg, window_ps)
        acc = rates["accidental_sifted_rate"]
        pair_rate = 2.0 * (sifted_rate - acc) / (transmittance**2 * capture)
        intrinsic = (qber * sifted_rate - 0.5 * acc) / (sifted_rate - acc)
    return cfg
