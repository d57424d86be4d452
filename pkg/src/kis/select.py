"""Interval-based variable selection with lazy pair screening.

An effect is selected when the interval (mu_T - z*sigma_T, mu_T + z*sigma_T)
built from its across-draw posterior summaries excludes zero; z = 2.59
by default (the 99.5th standard-normal percentile).  Rather than
summarizing all O(p^2) interactions, the screen ranks main effects,
keeps the top k, and queries only the Theta(k^2) pairs (and quads)
among them, which is the natural strategy under strong hierarchy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .features import EffectId
from .likelihood import Dataset
from .sampler import EffectSummary, posterior_summaries

__all__ = [
    "DEFAULT_Z",
    "SelectionRow",
    "SelectionReport",
    "select_effects",
    "hierarchical_screen",
]

DEFAULT_Z = 2.59
_SD_FLOOR = 1e-12


@dataclass(frozen=True)
class SelectionRow:
    effect: EffectId
    mean: float
    sd: float
    lower: float
    upper: float
    selected: bool
    sd_across: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "effect": self.effect.label(),
            "kind": self.effect.kind,
            "indices": [i for i in (self.effect.i, self.effect.j) if i],
            "mu_T": self.mean,
            "sigma_T": self.sd,
            "lower": self.lower,
            "upper": self.upper,
            "selected": self.selected,
            "sd_across_draws": self.sd_across,
        }


@dataclass(frozen=True)
class SelectionReport:
    rows: tuple
    z: float
    candidate_pair_count: int = 0

    def _selected(self, kind: str) -> list:
        return [r for r in self.rows if r.selected and r.effect.kind == kind]

    @property
    def selected_mains(self) -> list:
        return self._selected("main")

    @property
    def selected_pairs(self) -> list:
        return self._selected("pair")

    @property
    def selected_quads(self) -> list:
        return self._selected("quad")

    def to_dict(self) -> dict:
        return {
            "z": self.z,
            "candidate_pair_count": self.candidate_pair_count,
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self, **meta) -> str:
        d = self.to_dict()
        d.update(meta)
        return json.dumps(d, indent=2)

    def format_table(self) -> str:
        header = f"{'effect':>12} {'mu_T':>12} {'sigma_T':>12} {'lower':>12} {'upper':>12} {'selected':>9}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.effect.label():>12} {r.mean:>12.5g} {r.sd:>12.5g} "
                f"{r.lower:>12.5g} {r.upper:>12.5g} {str(r.selected):>9}"
            )
        return "\n".join(lines)


def _is_selected(mean: float, sd: float, z: float) -> bool:
    if sd < 0:
        raise ValueError("sigma_T must be nonnegative")
    if sd == 0.0:
        return mean != 0.0
    return abs(mean) > z * sd


def _as_summary(value) -> EffectSummary:
    if isinstance(value, EffectSummary):
        return value
    mean, sd = value
    return EffectSummary(mean=float(mean), sd=float(sd), sd_across=float("nan"))


def select_effects(summaries, z: float = DEFAULT_Z) -> SelectionReport:
    """Apply the interval rule to a mapping effect -> summary.

    ``summaries`` maps :class:`EffectId` to an
    :class:`~kis.sampler.EffectSummary` or a (mean, sd) pair.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    rows = []
    for effect, value in summaries.items():
        s = _as_summary(value)
        rows.append(
            SelectionRow(
                effect=effect,
                mean=s.mean,
                sd=s.sd,
                lower=s.mean - z * s.sd,
                upper=s.mean + z * s.sd,
                selected=_is_selected(s.mean, s.sd, z),
                sd_across=s.sd_across,
            )
        )
    return SelectionReport(rows=tuple(rows), z=z)


def hierarchical_screen(traces, dataset: Dataset, k: int,
                        z: float = DEFAULT_Z) -> SelectionReport:
    """Select mains over all p coordinates, then examine only the pairs
    (and quads) among the top-k mains ranked by |mu_T| / sigma_T."""
    p = dataset.p
    if not 0 <= k <= p:
        raise ValueError(f"need 0 <= k <= p, got k={k}")
    if k == 0:
        return SelectionReport(rows=(), z=z, candidate_pair_count=0)
    mains = [EffectId.main(i) for i in range(1, p + 1)]
    main_summaries = posterior_summaries(traces, dataset, mains)
    scores = {
        e: abs(s.mean) / max(s.sd, _SD_FLOOR) for e, s in main_summaries.items()
    }
    top = sorted(mains, key=lambda e: (-scores[e], e.i))[:k]
    top_idx = sorted(e.i for e in top)
    candidates = [
        EffectId.pair(top_idx[a], top_idx[b])
        for a in range(len(top_idx))
        for b in range(a + 1, len(top_idx))
    ] + [EffectId.quad(i) for i in top_idx]
    extra_summaries = posterior_summaries(traces, dataset, candidates) if candidates else {}
    report_main = select_effects(main_summaries, z=z)
    report_extra = select_effects(extra_summaries, z=z) if extra_summaries else None
    rows = report_main.rows + (report_extra.rows if report_extra else ())
    return SelectionReport(
        rows=rows, z=z, candidate_pair_count=k * (k - 1) // 2
    )
