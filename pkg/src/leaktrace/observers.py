"""Observer hierarchy: who watches the memory trace, and how coarsely.

An observer sees memory accesses through a bit-range projection (the top
n-b bits of each address identify the accessed unit: full address, cache
bank, block, or page), filtered by access kind, optionally collapsing
runs of identical observations (stuttering: repeated hits to the same
unit are indistinguishable).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

# Preset unit sizes, as offset-bit counts.  Data, not code, so callers can
# pass any explicit b via SPEC strings like "block:5".
PRESET_OFFSET_BITS = {
    "addr": 0,
    "bank": 2,
    "block": 6,
    "page": 12,
}

KINDS = ("instruction", "data", "both")


@dataclass(frozen=True)
class Projection:
    """Keep bits b..n-1 of an n-bit address (MSB first)."""

    n: int
    b: int

    def __post_init__(self) -> None:
        if not 0 <= self.b <= self.n:
            raise ValueError(f"offset bits must lie in [0, {self.n}]")

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(range(self.n - 1, self.b - 1, -1))

    def apply(self, a: int) -> int:
        """Unit id of address a: its top n-b bits."""
        return (a & ((1 << self.n) - 1)) >> self.b


@dataclass(frozen=True)
class Observer:
    proj: Projection
    stuttering: bool = False
    kind: str = "both"
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")


class ObserverSpecError(ValueError):
    pass


def parse_observer(spec: str, n: int) -> Observer:
    """Parse CLI observer specs: ``addr``, ``bank:2``, ``block:6~``,
    with kind prefixes ``i/``, ``d/``, ``id/`` (default: both)."""
    text = spec.strip()
    kind = "both"
    for prefix, k in (("id/", "both"), ("i/", "instruction"), ("d/", "data")):
        if text.startswith(prefix):
            kind = k
            text = text[len(prefix):]
            break
    stutter = text.endswith("~")
    if stutter:
        text = text[:-1]
    if ":" in text:
        base, _, btext = text.partition(":")
        try:
            b = int(btext)
        except ValueError:
            raise ObserverSpecError(f"bad offset bits in observer {spec!r}")
        if base not in PRESET_OFFSET_BITS:
            raise ObserverSpecError(f"unknown observer family {base!r}")
    else:
        base = text
        if base not in PRESET_OFFSET_BITS:
            raise ObserverSpecError(f"unknown observer {spec!r}")
        b = PRESET_OFFSET_BITS[base]
    if not 0 <= b <= n:
        raise ObserverSpecError(f"offset bits {b} out of range for width {n}")
    return Observer(Projection(n, b), stutter, kind, name=spec.strip())


def project_addr(proj: Projection, a: int) -> int:
    return proj.apply(a)


def stutter_collapse(seq: Sequence) -> tuple:
    """Replace each maximal run of equal observations by one occurrence."""
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(x)
    return tuple(out)


def view_concrete(trace: Iterable[tuple[str, int]], obs: Observer) -> tuple:
    """Observer's view of a concrete trace of (kind, address) events."""
    if obs.kind == "instruction":
        wanted = ("I",)
    elif obs.kind == "data":
        wanted = ("D",)
    else:
        wanted = ("I", "D")
    seq = [obs.proj.apply(a) for k, a in trace if k in wanted]
    if obs.stuttering:
        return stutter_collapse(seq)
    return tuple(seq)
