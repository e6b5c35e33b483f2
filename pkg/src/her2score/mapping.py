"""Inter-modality patch coordinate mapping.

Pairs each H&E grid coordinate with exactly one IHC grid coordinate. The map
is declared in run configuration (identity when both slides were tiled with
the same spec, or an affine grid transform); content-based registration is
out of scope, so the map depends only on coordinates and its parameters.

A mapping is usable only if it is a bijection between the two finite grids.
``verify_bijection`` checks that exhaustively and reports collisions,
unreached targets and coordinates the transform throws out of range. An
affine map that exits the grid is rejected rather than clamped inward, since
clamping silently breaks injectivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Tuple

from .errors import InvalidArgumentError, MappingOutOfRangeError, NotInvertibleError
from .tiling import GridSpec, PatchCoord


class MappingKind(str, Enum):
    IDENTITY = "identity"
    AFFINE_GRID = "affine_grid"


@dataclass(frozen=True)
class ModalityMapping:
    kind: MappingKind
    he_spec: GridSpec
    ihc_spec: GridSpec
    scale_row: float = 1.0
    scale_col: float = 1.0
    offset_row: float = 0.0
    offset_col: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MappingKind(self.kind))
        he_n = self.he_spec.rows * self.he_spec.cols
        ihc_n = self.ihc_spec.rows * self.ihc_spec.cols
        if he_n != ihc_n:
            raise InvalidArgumentError(
                f"grids have different cardinality ({he_n} vs {ihc_n}); "
                "no bijection can exist"
            )
        if self.kind is MappingKind.IDENTITY and self.he_spec != self.ihc_spec:
            raise InvalidArgumentError("identity mapping requires equal grid specs")


@dataclass
class BijectionReport:
    injective: bool
    surjective: bool
    # target coordinate -> the >=2 source coordinates that land on it
    collisions: List[Tuple[PatchCoord, List[PatchCoord]]]
    unreached: List[PatchCoord]
    # source coordinates the transform sends outside the IHC grid
    out_of_range: List[PatchCoord]

    @property
    def bijective(self) -> bool:
        return self.injective and self.surjective and not self.out_of_range


def _round_half_away(x: float) -> int:
    # deterministic and symmetric about zero
    return math.floor(x + 0.5) if x >= 0 else math.ceil(x - 0.5)


def _map_axis(index: int, scale: float, offset: float, size: int) -> int:
    y = scale * index + offset
    r = _round_half_away(y)
    # A value exactly on the half-open cell boundary of the last/first cell
    # rounds out of the grid by half a pixel; clamp only that exact tie.
    if r == size and y == size - 0.5:
        return size - 1
    if r == -1 and y == -0.5:
        return 0
    return r


def map_coord(coord: PatchCoord, mapping: ModalityMapping) -> PatchCoord:
    """Map an H&E patch coordinate to its IHC counterpart.

    Raises MappingOutOfRangeError when the transform leaves the IHC grid;
    the result is never clamped inward.
    """
    coord = PatchCoord(*coord)
    if not mapping.he_spec.contains(coord):
        raise InvalidArgumentError(f"{coord} outside H&E grid {mapping.he_spec}")
    if mapping.kind is MappingKind.IDENTITY:
        return coord
    row = _map_axis(coord.row, mapping.scale_row, mapping.offset_row, mapping.ihc_spec.rows)
    col = _map_axis(coord.col, mapping.scale_col, mapping.offset_col, mapping.ihc_spec.cols)
    target = PatchCoord(row, col)
    if not mapping.ihc_spec.contains(target):
        raise MappingOutOfRangeError(
            f"{coord} maps to {target}, outside IHC grid "
            f"{mapping.ihc_spec.rows}x{mapping.ihc_spec.cols}"
        )
    return target


def verify_bijection(mapping: ModalityMapping) -> BijectionReport:
    """Exhaustively check the mapping over both finite grids.

    A coordinate thrown out of range makes the mapping a partial function,
    which can be neither injective nor surjective onto the IHC grid; such
    coordinates are listed separately so callers can diagnose them.
    """
    hits: Dict[PatchCoord, List[PatchCoord]] = {}
    out_of_range: List[PatchCoord] = []
    for coord in mapping.he_spec.coords():
        try:
            target = map_coord(coord, mapping)
        except MappingOutOfRangeError:
            out_of_range.append(coord)
            continue
        hits.setdefault(target, []).append(coord)
    collisions = sorted(
        (target, sources) for target, sources in hits.items() if len(sources) > 1
    )
    unreached = sorted(c for c in mapping.ihc_spec.coords() if c not in hits)
    injective = not collisions and not out_of_range
    surjective = not unreached
    return BijectionReport(injective, surjective, collisions, unreached, out_of_range)


def invert(mapping: ModalityMapping) -> ModalityMapping:
    """Algebraic inverse, verified pointwise over the whole grid."""
    report = verify_bijection(mapping)
    if not report.bijective:
        raise NotInvertibleError(
            f"mapping is not bijective (collisions={len(report.collisions)}, "
            f"unreached={len(report.unreached)}, out_of_range={len(report.out_of_range)})"
        )
    if mapping.kind is MappingKind.IDENTITY:
        return mapping
    if mapping.scale_row == 0 or mapping.scale_col == 0:
        # unreachable after the bijection check; kept as a guard
        raise NotInvertibleError("zero scale cannot be inverted")
    inverse = ModalityMapping(
        kind=MappingKind.AFFINE_GRID,
        he_spec=mapping.ihc_spec,
        ihc_spec=mapping.he_spec,
        scale_row=1.0 / mapping.scale_row,
        scale_col=1.0 / mapping.scale_col,
        offset_row=-mapping.offset_row / mapping.scale_row,
        offset_col=-mapping.offset_col / mapping.scale_col,
    )
    # Rounding can defeat the algebra for fractional scales; accept the
    # inverse only if the round trip is the identity on every coordinate.
    for coord in mapping.he_spec.coords():
        if map_coord(map_coord(coord, mapping), inverse) != coord:
            raise NotInvertibleError(
                f"algebraic inverse does not round-trip at {coord}"
            )
    return inverse


def identity_mapping(he_spec: GridSpec, ihc_spec: GridSpec | None = None) -> ModalityMapping:
    return ModalityMapping(MappingKind.IDENTITY, he_spec, ihc_spec or he_spec)
