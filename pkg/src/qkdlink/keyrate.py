"""Asymptotic and sharp finite-key secret key lengths for BBM92.

All lengths are in bits and are evaluated on sifted pairs, so no basis
reconciliation factor appears. The finite-key bound inflates the observed
QBER of the parameter-estimation sample to an upper confidence threshold
on the phase error of the key bits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import SecurityParams, SiftedBlock, binary_entropy


class Regime(str, enum.Enum):
    ASYMPTOTIC = "asymptotic"
    SHARP_FINITE = "sharp_finite"


@dataclass(frozen=True)
class KeyRateResult:
    secret_bits: float
    rate_bps: float
    regime: Regime
    q_threshold: float | None = None
    kappa: float | None = None

    def as_dict(self) -> dict:
        return {
            "secret_bits": self.secret_bits,
            "rate_bps": self.rate_bps,
            "regime": self.regime.value,
            "q_threshold": self.q_threshold,
            "kappa": self.kappa,
        }


def _rate(bits: float, duration: float) -> float:
    return bits / duration if duration > 0 else 0.0


def asymptotic_key_length(block: SiftedBlock, params: SecurityParams) -> KeyRateResult:
    h = binary_entropy(block.qber_hat)
    bits = max(0.0, block.n_key * (1.0 - params.f_ec * h - h))
    return KeyRateResult(bits, _rate(bits, block.duration), Regime.ASYMPTOTIC)


def kappa(n: int, epsilon_pe: float) -> float:
    """Width parameter of the sampling bound for a sample of ``n`` bits."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    if not 0 < epsilon_pe < 1:
        raise ValueError(f"epsilon_pe must lie in (0, 1), got {epsilon_pe}")
    return 2.0 / (9.0 * n) * math.log(1.0 / epsilon_pe)


def gamma_plus(x: float, kappa: float) -> float:
    """Upper confidence bound on the error rate given observed rate ``x``.

    Only defined for ``0 < kappa <= 1/4``; callers handle larger kappa.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if not 0.0 < kappa <= 0.25:
        raise ValueError(f"kappa must lie in (0, 1/4], got {kappa}")
    root = math.sqrt(kappa * (kappa + x - x * x))
    return (3.0 * kappa + (1.0 - 2.0 * kappa) * x + 3.0 * root) / (1.0 + 4.0 * kappa)


def gamma_interval(x: float, kappa: float, epsilon: float) -> float:
    """Piecewise bound: gamma_plus on its closed validity interval, else 1 + epsilon."""
    if not 0.0 < kappa <= 0.25:
        raise ValueError(f"kappa must lie in (0, 1/4], got {kappa}")
    if 0.0 <= x <= (1.0 - 2.0 * kappa) / (1.0 + kappa):
        return gamma_plus(x, kappa)
    return 1.0 + epsilon


def sharp_threshold(block: SiftedBlock, params: SecurityParams) -> float:
    """Phase-error threshold for the key bits, clamped to [0, 1]."""
    if block.n_pe < 1:
        raise ValueError("block has no parameter-estimation sample")
    if block.n_key == 0:
        return 1.0
    k = kappa(block.n_pe, params.epsilon_pe)
    if k > 0.25:
        return 1.0
    p = block.qber_hat
    bound = gamma_interval(p, k, params.epsilon_total)
    q = (block.n_total * bound - block.n_pe * p) / block.n_key
    return min(1.0, max(0.0, q))


class PenaltyForm(str, enum.Enum):
    """Choice of the constant secrecy/correctness penalty subtracted from the key.

    ``LEFTOVER_HASH``: 2 log2(1/(2 eps_sec)) + log2(2/eps_cor), about 157 bits
    at the default budget.

    ``DECOY_COMPOSABLE``: 6 log2(21/eps_sec) + log2(2/eps_cor), about 397
    bits. This is the default because it reproduces the published per-pass
    satellite key rates, where blocks are only ~10^4 pairs and the penalty
    is not negligible.
    """

    LEFTOVER_HASH = "leftover-hash"
    DECOY_COMPOSABLE = "decoy-composable"


DEFAULT_PENALTY = PenaltyForm.DECOY_COMPOSABLE


def composable_penalty(
    params: SecurityParams, form: PenaltyForm | str = DEFAULT_PENALTY
) -> float:
    form = PenaltyForm(form)
    correctness = math.log2(2.0 / params.epsilon_cor)
    if form is PenaltyForm.LEFTOVER_HASH:
        return 2.0 * math.log2(1.0 / (2.0 * params.epsilon_sec)) + correctness
    return 6.0 * math.log2(21.0 / params.epsilon_sec) + correctness


def sharp_key_length(
    block: SiftedBlock,
    params: SecurityParams,
    penalty: PenaltyForm | str = DEFAULT_PENALTY,
) -> KeyRateResult:
    if block.n_pe < 1:
        bits, q_th, k = 0.0, 1.0, None
    else:
        q_th = sharp_threshold(block, params)
        k = kappa(block.n_pe, params.epsilon_pe)
        leak = params.f_ec * block.n_key * binary_entropy(block.qber_hat)
        bits = (
            block.n_key * (1.0 - binary_entropy(q_th))
            - leak
            - composable_penalty(params, penalty)
        )
        bits = max(0.0, bits)
    return KeyRateResult(
        bits, _rate(bits, block.duration), Regime.SHARP_FINITE, q_threshold=q_th, kappa=k
    )


def finite_key_curve(
    rate_cps: float,
    qber: float,
    params: SecurityParams,
    n_grid: Iterable[float],
    penalty: PenaltyForm | str = DEFAULT_PENALTY,
) -> list[tuple[int, float]]:
    """Sharp finite-key rate versus aggregated block size.

    Each block of ``N`` sifted pairs is assumed to take ``N / rate_cps``
    seconds to collect.
    """
    grid = [int(round(n)) for n in n_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("n_grid must be ascending")
    curve = []
    for n_total in grid:
        block = SiftedBlock.from_counts(
            n_total, qber, n_total / rate_cps, params.sample_fraction
        )
        curve.append((n_total, sharp_key_length(block, params, penalty).rate_bps))
    return curve


def asymptotic_rate(rate_cps: float, qber: float, params: SecurityParams) -> float:
    """Asymptotic secret key rate in bps for a sifted rate and QBER."""
    h = binary_entropy(qber)
    return max(0.0, (1.0 - params.sample_fraction) * rate_cps * (1.0 - params.f_ec * h - h))


def evaluate_blocks(
    blocks: Sequence[SiftedBlock],
    params: SecurityParams,
    penalty: PenaltyForm | str = DEFAULT_PENALTY,
) -> list[dict]:
    """Per-block report rows with both regimes."""
    rows = []
    for block in blocks:
        asym = asymptotic_key_length(block, params)
        sharp = sharp_key_length(block, params, penalty)
        rows.append(
            {
                "start_s": block.start,
                "duration_s": block.duration,
                "N": block.n_total,
                "n_pe": block.n_pe,
                "mismatches": block.pe_errors,
                "qber_hat": block.qber_hat,
                "q_threshold": sharp.q_threshold,
                "asymptotic_bits": asym.secret_bits,
                "asymptotic_bps": asym.rate_bps,
                "sharp_bits": sharp.secret_bits,
                "sharp_bps": sharp.rate_bps,
            }
        )
    return rows
