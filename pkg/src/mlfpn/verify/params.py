"""Parameter accounting per module group."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from mlfpn.config import NetworkConfig
from mlfpn.model import layer_specs

GROUPS = ("backbone", "ffm", "tums", "sfam", "heads")

# Table of the MLFPN configuration study at 320 input (TUMs, channels) -> Params(M).
REFERENCE_PARAMS_M = {
    (2, 256): 40.1,
    (2, 512): 106.5,
    (4, 128): 34.2,
    (4, 256): 60.2,
    (4, 512): 192.2,
    (8, 128): 47.5,
    (8, 256): 98.9,
    (8, 512): 368.8,
    (16, 128): 73.9,
    (16, 256): 176.8,
}


@dataclass(frozen=True)
class ParamReport:
    groups: dict
    total: int
    marginal_per_tum: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_table(self) -> str:
        rows = [(g, f"{self.groups[g]:,}") for g in GROUPS]
        rows += [("total", f"{self.total:,}"), ("marginal/TUM", f"{self.marginal_per_tum:,}")]
        w0 = max(len(r[0]) for r in rows)
        w1 = max(len(r[1]) for r in rows)
        return "\n".join(f"{a.ljust(w0)}  {b.rjust(w1)}" for a, b in rows)


def group_counts(cfg: NetworkConfig) -> dict:
    counts = dict.fromkeys(GROUPS, 0)
    for spec in layer_specs(cfg):
        counts[spec.group] += spec.num_params
    return counts


def total_params(cfg: NetworkConfig) -> int:
    return sum(group_counts(cfg).values())


def count_params(cfg: NetworkConfig) -> ParamReport:
    groups = group_counts(cfg)
    total = sum(groups.values())
    marginal = total_params(cfg.replace(num_tums=cfg.num_tums + 1)) - total
    return ParamReport(groups, total, marginal)


def reference_marginal_check(cfg: NetworkConfig, tolerance: float = 0.20) -> dict:
    """Per-TUM parameter cost between 2 and 4 TUMs at ``cfg``'s width vs the table delta."""
    c = cfg.tum_channels
    ours = (total_params(cfg.replace(num_tums=4)) - total_params(cfg.replace(num_tums=2))) / 2
    ref = None
    if (2, c) in REFERENCE_PARAMS_M and (4, c) in REFERENCE_PARAMS_M:
        ref = (REFERENCE_PARAMS_M[(4, c)] - REFERENCE_PARAMS_M[(2, c)]) / 2 * 1e6
    ok = ref is not None and abs(ours - ref) <= tolerance * ref
    return {"channels": c, "ours": ours, "reference": ref, "tolerance": tolerance, "ok": ok}
