"""Handover rate tables between neighboring cells."""

from __future__ import annotations

from dataclasses import dataclass

from .dataset import CellId
from .errors import DataError, InconsistentHandoverError

DIRECTIONS = ("in", "out")

_RATE_SUM_SLACK = 1e-9


@dataclass(frozen=True)
class HandoverRate:
    target: CellId
    neighbor: CellId
    direction: str  # "in": traffic handed into target; "out": handed out of it
    rate_percent: float

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise DataError(f"handover direction must be in/out, got {self.direction!r}")
        if self.rate_percent < 0:
            raise DataError(f"handover rate must be non-negative, got {self.rate_percent}")
        if self.target == self.neighbor:
            raise DataError(f"cell {self.target} cannot hand over to itself")


@dataclass(frozen=True)
class HandoverMatrix:
    """Per ordered cell pair, the share of handovers in each direction.

    Listed rates per (target, direction) may sum to less than 100% because
    minor neighbors are omitted from measurement tables.
    """

    rows: tuple[HandoverRate, ...]

    def __post_init__(self):
        seen = set()
        sums: dict[tuple[CellId, str], float] = {}
        for row in self.rows:
            key = (row.target, row.neighbor, row.direction)
            if key in seen:
                raise InconsistentHandoverError(f"duplicate handover row {key}")
            seen.add(key)
            total = sums.get((row.target, row.direction), 0.0) + row.rate_percent
            if total > 100.0 + _RATE_SUM_SLACK:
                raise InconsistentHandoverError(
                    f"{row.direction}coming rates of {row.target} sum to {total:.2f}%"
                )
            sums[(row.target, row.direction)] = total

    def _listed(self, target: CellId, direction: str) -> tuple[tuple[CellId, float], ...]:
        return tuple(
            (r.neighbor, r.rate_percent)
            for r in self.rows
            if r.target == target and r.direction == direction
        )

    def incoming(self, target: CellId) -> tuple[tuple[CellId, float], ...]:
        return self._listed(target, "in")

    def outgoing(self, target: CellId) -> tuple[tuple[CellId, float], ...]:
        return self._listed(target, "out")

    def rate(self, target: CellId, neighbor: CellId, direction: str) -> float:
        for r in self.rows:
            if r.target == target and r.neighbor == neighbor and r.direction == direction:
                return r.rate_percent
        raise DataError(f"no {direction} handover rate for {target} <- {neighbor}")

    def cells(self) -> frozenset[CellId]:
        out = set()
        for r in self.rows:
            out.add(r.target)
            out.add(r.neighbor)
        return frozenset(out)

    def targets(self) -> frozenset[CellId]:
        return frozenset(r.target for r in self.rows)

    def restricted_to(self, cells) -> "HandoverMatrix":
        """Keep only rows whose target and neighbor are both in ``cells``."""
        keep = frozenset(cells)
        return HandoverMatrix(
            tuple(r for r in self.rows if r.target in keep and r.neighbor in keep)
        )


# Measured handover shares of the GU14 reference cell: ten in-neighbors and
# ten out-neighbors, as percentages of its total handover traffic.
_GU14_INCOMING = (
    ("GU12", 66.79),
    ("MS34", 6.08),
    ("VO14", 5.69),
    ("SY24", 4.68),
    ("VO12", 4.45),
    ("GU24", 3.36),
    ("MS37", 2.05),
    ("SY22", 1.99),
    ("GU13", 1.49),
    ("GU22", 1.15),
)

_GU14_OUTGOING = (
    ("GU12", 26.86),
    ("SY24", 17.24),
    ("VO14", 12.48),
    ("GU17", 8.72),
    ("MS34", 8.31),
    ("GU24", 4.54),
    ("GU13", 3.96),
    ("VO12", 1.88),
    ("VO13", 1.88),
    ("RE37", 1.55),
)


def gu14_reference_matrix() -> HandoverMatrix:
    """Handover rate table of the GU14 reference cell and its neighborhood."""
    gu14 = CellId.parse("GU14")
    rows = [
        HandoverRate(gu14, CellId.parse(name), "in", rate)
        for name, rate in _GU14_INCOMING
    ]
    rows += [
        HandoverRate(gu14, CellId.parse(name), "out", rate)
        for name, rate in _GU14_OUTGOING
    ]
    return HandoverMatrix(tuple(rows))
