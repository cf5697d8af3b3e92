"""Operator taxonomy and per-forward FLOP/operator tracing."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path


class UnknownOperatorError(ValueError):
    pass


def parse_taxonomy(text: str) -> frozenset[str]:
    names = set()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            names.add(line)
    return frozenset(names)


@lru_cache(maxsize=None)
def taxonomy() -> frozenset[str]:
    """The shipped operator taxonomy (ONNX names plus the desk engine's fused kinds)."""
    text = resources.files("m4fw.nn").joinpath("operators.txt").read_text(encoding="utf-8")
    return parse_taxonomy(text)


def load_taxonomy(path: str | Path) -> frozenset[str]:
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def check_operators(names, known: frozenset[str] | None = None) -> frozenset[str]:
    known = taxonomy() if known is None else known
    names = frozenset(names)
    unknown = sorted(names - known)
    if unknown:
        raise UnknownOperatorError(f"unknown operator kind(s): {', '.join(unknown)}")
    return names


@dataclass(frozen=True)
class TraceEntry:
    kind: str
    flops: int
    shape: tuple[int, ...]
    component: str | None = None


@dataclass
class OpTrace:
    """Accumulates one entry per primitive executed in a forward pass.

    A trace belongs to a single inference context; it is not thread-safe.
    """

    entries: list[TraceEntry] = field(default_factory=list)
    _scope: list[str] = field(default_factory=list, repr=False)

    def record(self, kind: str, flops: int, shape) -> None:
        if kind not in taxonomy():
            raise UnknownOperatorError(f"unknown operator kind: {kind}")
        if flops < 0:
            raise ValueError("FLOPs must be non-negative")
        comp = self._scope[-1] if self._scope else None
        self.entries.append(TraceEntry(kind, int(flops), tuple(int(s) for s in shape), comp))

    @contextlib.contextmanager
    def component(self, name: str):
        self._scope.append(name)
        try:
            yield self
        finally:
            self._scope.pop()

    def components(self) -> set[str]:
        return {e.component for e in self.entries if e.component is not None}

    def extend(self, other: "OpTrace") -> "OpTrace":
        self.entries.extend(other.entries)
        return self

    def __add__(self, other: "OpTrace") -> "OpTrace":
        return OpTrace(list(self.entries) + list(other.entries))

    def __len__(self) -> int:
        return len(self.entries)


def trace_summary(trace: OpTrace) -> tuple[int, frozenset[str]]:
    """Return (total FLOPs, distinct operator kinds)."""
    total = sum(e.flops for e in trace.entries)
    return total, frozenset(e.kind for e in trace.entries)


def flops_by_component(trace: OpTrace) -> dict[str, int]:
    out: dict[str, int] = {}
    for e in trace.entries:
        key = e.component or ""
        out[key] = out.get(key, 0) + e.flops
    return out
