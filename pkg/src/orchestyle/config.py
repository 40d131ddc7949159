"""Project configuration file (JSON)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .attributes import BinTable
from .decoder import SamplingParams
from .errors import InputError
from .instruments import InstrumentRegistry, default_registry
from .score import Grid


@dataclass(frozen=True)
class ProjectConfig:
    """Grid, resource files, model hyper-parameters and sampling defaults.

    Relative paths resolve against the directory holding the config file.
    """

    grid: Grid = field(default_factory=Grid)
    registry_path: Path | None = None
    bins_path: Path | None = None
    model: dict = field(default_factory=dict)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    corpus_dir: Path | None = None
    checkpoint_dir: Path | None = None
    output_dir: Path | None = None

    @classmethod
    def load(cls, path: str | Path | None) -> ProjectConfig:
        if path is None:
            return cls()
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: {exc}") from None
        base = path.parent
        resolve = lambda p: None if p is None else (base / p)  # noqa: E731
        paths = doc.get("paths", {})
        config = cls(
            grid=Grid(**doc.get("grid", {})),
            registry_path=resolve(doc.get("registry")),
            bins_path=resolve(doc.get("bins")),
            model=dict(doc.get("model", {})),
            sampling=SamplingParams(**doc.get("sampling", {})),
            corpus_dir=resolve(paths.get("corpus")),
            checkpoint_dir=resolve(paths.get("checkpoints")),
            output_dir=resolve(paths.get("outputs")),
        )
        config.check()
        return config

    def check(self) -> None:
        for name in ("registry_path", "bins_path"):
            p = getattr(self, name)
            if p is not None and not p.is_file():
                raise InputError(f"config {name.removesuffix('_path')}: no such file {p}")
        if self.bins_path is not None:
            bins = self.bins()
            if bins.grid != self.grid:
                raise InputError(f"bin table was fitted on grid {bins.grid}, config says {self.grid}")

    def registry(self) -> InstrumentRegistry:
        return default_registry() if self.registry_path is None else InstrumentRegistry.from_file(self.registry_path)

    def bins(self) -> BinTable | None:
        if self.bins_path is None:
            return None
        return load_bins(self.bins_path)

    def to_json(self) -> dict:
        s = lambda p: None if p is None else str(p)  # noqa: E731
        return {
            "grid": {"beats_per_bar": self.grid.beats_per_bar, "subbeats_per_beat": self.grid.subbeats_per_beat},
            "registry": s(self.registry_path),
            "bins": s(self.bins_path),
            "model": self.model,
            "sampling": asdict(self.sampling),
            "paths": {"corpus": s(self.corpus_dir), "checkpoints": s(self.checkpoint_dir), "outputs": s(self.output_dir)},
        }


def load_bins(path: str | Path) -> BinTable:
    try:
        return BinTable.from_json(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: cannot read bin table ({exc})") from None
