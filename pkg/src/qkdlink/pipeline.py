"""End-to-end post-processing of a pair of time-tag streams."""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import PS_PER_S, SecurityParams, SiftedBlock, TimeTagStream
from .keyrate import DEFAULT_PENALTY, PenaltyForm, evaluate_blocks
from .sift import DEFAULT_WINDOW, aggregate_blocks, find_coincidences, sift, sift_blocks
from .sync import SyncResult, synchronize
from .timetag_sim import CorrelationModel


@dataclass
class PipelineResult:
    sync: SyncResult
    n_coincidences: int
    n_sifted: int
    span_s: float
    blocks: list[SiftedBlock]
    aggregates: list[SiftedBlock]
    block_rows: list[dict] = field(default_factory=list)
    aggregate_rows: list[dict] = field(default_factory=list)

    @property
    def sifted_rate(self) -> float:
        return self.n_sifted / self.span_s if self.span_s else 0.0

    def summary(self) -> dict:
        qbers = [b.qber_hat for b in self.blocks]
        return {
            "sync": self.sync.as_dict(),
            "span_s": self.span_s,
            "coincidences": self.n_coincidences,
            "sifted": self.n_sifted,
            "sifted_rate_cps": self.sifted_rate,
            "blocks": len(self.blocks),
            "mean_block_qber": sum(qbers) / len(qbers) if qbers else None,
            "aggregates": self.aggregate_rows,
        }


def run_pipeline(
    a: TimeTagStream,
    b: TimeTagStream,
    params: SecurityParams | None = None,
    seed: int = 0,
    window: int = DEFAULT_WINDOW,
    block_s: float = 1.0,
    aggregate_s: float = 300.0,
    sync: SyncResult | None = None,
    sync_options: dict | None = None,
    model: CorrelationModel | None = None,
    penalty: PenaltyForm | str = DEFAULT_PENALTY,
    span_s: float | None = None,
) -> PipelineResult:
    """Sync, pair, sift, sample and evaluate key rates per block and per aggregate.

    Raises ``NoPeak`` from the sync stage when the streams do not correlate.
    """
    params = params or SecurityParams()
    if sync is None:
        sync = synchronize(a, b, **(sync_options or {}))
    pairs = find_coincidences(a, b, sync, window)
    bits = sift(pairs, model)
    if span_s is None:
        span_s = float(a.timestamps[-1]) / PS_PER_S if len(a) else 0.0
    blocks = sift_blocks(bits, params, seed, block_s, span_s)
    aggregates = aggregate_blocks(blocks, aggregate_s)
    return PipelineResult(
        sync=sync,
        n_coincidences=len(pairs),
        n_sifted=len(bits),
        span_s=span_s,
        blocks=blocks,
        aggregates=aggregates,
        block_rows=evaluate_blocks(blocks, params, penalty),
        aggregate_rows=evaluate_blocks(aggregates, params, penalty),
    )
