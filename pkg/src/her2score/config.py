"""Run configuration: TOML file plus command-line overrides.

Example run config:

    case_id = "case6"
    he_slide = "slides/case6_he.png"
    ihc_slide = "slides/case6_ihc.png"
    tile_size_px = 512
    output_dir = "out"
    workers = 4
    scoring_mode = "fourway"

    [mapping]
    kind = "identity"          # or "affine_grid"
    scale = [1.0, 1.0]         # row, col
    offset = [0.0, 0.0]

    [models.tumor]
    backend = "builtin"        # or "sidecar"
    input_size_px = 244
    # sidecar_command = "her2-sidecar --roles tumor --rule"
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import InvalidArgumentError
from .mapping import MappingKind, ModalityMapping
from .models import Backend, ModelBinding, ModelRole, default_bindings
from .scoring import ScoringMode
from .tiling import GridSpec

MIN_TILE_SIZE = 16


@dataclass
class MappingConfig:
    kind: MappingKind = MappingKind.IDENTITY
    scale: tuple = (1.0, 1.0)    # (row, col)
    offset: tuple = (0.0, 0.0)

    def build(self, he_spec: GridSpec, ihc_spec: GridSpec) -> ModalityMapping:
        return ModalityMapping(
            kind=self.kind,
            he_spec=he_spec,
            ihc_spec=ihc_spec,
            scale_row=float(self.scale[0]),
            scale_col=float(self.scale[1]),
            offset_row=float(self.offset[0]),
            offset_col=float(self.offset[1]),
        )


@dataclass
class RunConfig:
    he_slide_path: Path
    ihc_slide_path: Path
    case_id: str = ""
    tile_size_px: int = 512
    mapping: MappingConfig = field(default_factory=MappingConfig)
    bindings: Dict[ModelRole, ModelBinding] = field(default_factory=default_bindings)
    scoring_mode: ScoringMode = ScoringMode.FOURWAY
    output_dir: Path = Path("out")
    workers: int = 1

    def __post_init__(self):
        self.he_slide_path = Path(self.he_slide_path)
        self.ihc_slide_path = Path(self.ihc_slide_path)
        self.output_dir = Path(self.output_dir)
        if not self.case_id:
            self.case_id = self.he_slide_path.stem
        if self.tile_size_px < MIN_TILE_SIZE:
            raise InvalidArgumentError(f"tile_size_px must be >= {MIN_TILE_SIZE}")
        if self.workers < 1:
            raise InvalidArgumentError("workers must be >= 1")

    def validate_paths(self):
        for path in (self.he_slide_path, self.ihc_slide_path):
            if not path.exists():
                raise InvalidArgumentError(f"slide file not found: {path}")


def _pair(value, name) -> tuple:
    if isinstance(value, (int, float)):
        return (float(value), float(value))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (float(value[0]), float(value[1]))
    raise InvalidArgumentError(f"{name} must be a number or a [row, col] pair")


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


def config_from_dict(data: dict, base_dir: Optional[Path] = None) -> RunConfig:
    base = Path(base_dir) if base_dir else Path(".")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    for key in ("he_slide", "ihc_slide"):
        if key not in data:
            raise InvalidArgumentError(f"config is missing required key {key!r}")

    mapping_data = data.get("mapping", {})
    mapping = MappingConfig(
        kind=MappingKind(mapping_data.get("kind", "identity")),
        scale=_pair(mapping_data.get("scale", 1.0), "mapping.scale"),
        offset=_pair(mapping_data.get("offset", 0.0), "mapping.offset"),
    )

    bindings = default_bindings()
    for role_name, spec in data.get("models", {}).items():
        role = ModelRole(role_name)
        defaults = bindings[role]
        bindings[role] = ModelBinding(
            role=role,
            backend=Backend(spec.get("backend", "builtin")),
            input_size_px=int(spec.get("input_size_px", defaults.input_size_px)),
            sidecar_command=spec.get("sidecar_command"),
        )

    return RunConfig(
        he_slide_path=resolve(data["he_slide"]),
        ihc_slide_path=resolve(data["ihc_slide"]),
        case_id=data.get("case_id", ""),
        tile_size_px=int(data.get("tile_size_px", 512)),
        mapping=mapping,
        bindings=bindings,
        scoring_mode=ScoringMode(data.get("scoring_mode", "fourway")),
        output_dir=resolve(data.get("output_dir", "out")),
        workers=int(data.get("workers", 1)),
    )
