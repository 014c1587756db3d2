"""Per-layer shape records shared by the executor and the symbolic tracer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from mlfpn.errors import ConsistencyError


@dataclass(frozen=True)
class TraceRecord:
    name: str
    op: str
    sources: tuple
    in_shapes: tuple
    out_shape: tuple
    params: int = 0


@dataclass
class ShapeTrace:
    """Ordered layer records; each source names an earlier record or an external input."""

    records: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)

    def add_input(self, name: str, shape) -> None:
        self.inputs[name] = tuple(shape)

    def add(self, name, op, sources, in_shapes, out_shape, params=0) -> None:
        self.records.append(
            TraceRecord(
                name,
                op,
                tuple(sources),
                tuple(tuple(s) for s in in_shapes),
                tuple(out_shape),
                int(params),
            )
        )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, name: str) -> TraceRecord:
        for rec in self.records:
            if rec.name == name:
                return rec
        raise KeyError(name)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.records)

    def check_chain(self) -> None:
        """Every input shape must equal the output shape of the record that produced it."""
        produced = dict(self.inputs)
        for rec in self.records:
            for src, shape in zip(rec.sources, rec.in_shapes):
                if src not in produced:
                    raise ConsistencyError(f"{rec.name}: unknown source {src!r}")
                if produced[src] != shape:
                    raise ConsistencyError(
                        f"{rec.name} expects {shape} from {src}, which produced {produced[src]}"
                    )
            if rec.name in produced:
                raise ConsistencyError(f"duplicate layer name {rec.name!r}")
            produced[rec.name] = rec.out_shape

    def to_json(self) -> str:
        return json.dumps(
            {"inputs": {k: list(v) for k, v in self.inputs.items()},
             "records": [asdict(r) for r in self.records]},
            indent=2,
        )

    def to_table(self) -> str:
        def fmt(shape):
            return "x".join(map(str, shape))

        rows = [("layer", "op", "input", "output", "params")]
        for r in self.records:
            rows.append((r.name, r.op, " + ".join(fmt(s) for s in r.in_shapes), fmt(r.out_shape),
                         f"{r.params:,}"))
        widths = [max(len(row[i]) for row in rows) for i in range(5)]
        lines = []
        for j, row in enumerate(rows):
            cells = [c.ljust(w) for c, w in zip(row[:4], widths)] + [row[4].rjust(widths[4])]
            lines.append("  ".join(cells).rstrip())
            if j == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)
