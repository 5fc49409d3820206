"""Progressive blocking: evaluate a relaxation ladder until the rate stops moving."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..data import Dataset
from .assess import AssessmentReport, AssessOptions, assess_latent
from .blocking import BlockingScheme, assign_blocks, is_relaxation


class LadderError(ValueError):
    def __init__(self, step: int, finer: BlockingScheme, coarser: BlockingScheme):
        super().__init__(
            f"ladder step {step}: {coarser.label!r} is not a relaxation of {finer.label!r}"
        )
        self.step = step


@dataclass
class ProgressiveResult:
    rates: list[float]
    stop_index: int  # 0-based index of the last evaluated step
    labels: list[str]
    reports: list[AssessmentReport]
    converged: bool

    def to_dict(self) -> dict:
        return {
            "steps": [
                {"scheme": lab, "cvpl_lr": r, "blocks": rep.block_summary["count"]}
                for lab, r, rep in zip(self.labels, self.rates, self.reports)
            ],
            "stop_index": self.stop_index,
            "converged": self.converged,
        }


def validate_ladder(ladder: Sequence[BlockingScheme], datasets: Sequence[Dataset]) -> None:
    for i in range(1, len(ladder)):
        if not is_relaxation(ladder[i - 1], ladder[i], datasets):
            raise LadderError(i + 1, ladder[i - 1], ladder[i])


def progressive_assess(dor: Dataset, dpr: Dataset, ladder: Sequence[BlockingScheme],
                       za: np.ndarray, zb: np.ndarray, tau: float, epsilon: float = 0.01,
                       options: AssessOptions | None = None) -> ProgressiveResult:
    """Walk the ladder from finest to coarsest, stopping once the increment drops below ``epsilon``.

    ``za``/``zb`` are the projected matrices, shared by every step so that only
    the candidate sets change.  Candidate evaluation is exhaustive at every
    step (no block truncation), which is what makes the sequence monotone.
    The increment test starts at the second step.
    """
    if not ladder:
        raise ValueError("empty ladder")
    validate_ladder(ladder, [dor, dpr])
    opt = replace(options or AssessOptions(), max_block_size=None, non_match_samples=0)
    rates, reports, labels = [], [], []
    converged = False
    for i, scheme in enumerate(ladder):
        rep = assess_latent(assign_blocks(dor, scheme), assign_blocks(dpr, scheme), za, zb, opt,
                            fingerprint={"scheme": scheme.label})
        rates.append(rep.cvpl_lr(tau))
        reports.append(rep)
        labels.append(scheme.label)
        if i > 0 and rates[-1] - rates[-2] < epsilon:
            converged = True
            break
    return ProgressiveResult(rates, len(rates) - 1, labels, reports, converged)
