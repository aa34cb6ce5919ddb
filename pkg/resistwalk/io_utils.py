"""File formats, output paths and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import GraphError, IoError, SchemaError
from .graphs import WeightedGraph, build_graph
from .resistance import ResistanceMatrix

GRAPH_SCHEMA = "resistwalk.graph"
GRAPH_SCHEMA_VERSION = 2
MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"


def _data_dir() -> Path:
    path = Path(os.getenv("RESISTWALK_OUTPUT_DIR", "./data"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def resolve_path(filename: str | os.PathLike, output_dir: str | os.PathLike | None = None) -> Path:
    path = Path(filename)
    if path.is_absolute():
        return path
    base = Path(output_dir) if output_dir is not None else _data_dir()
    base.mkdir(parents=True, exist_ok=True)
    return base / path


@contextmanager
def atomic_write(path: Path, newline: str | None = None) -> Iterator:
    """Write to a temporary file beside ``path`` and rename it into place on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline=newline) as fh:
            yield fh
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def write_dataset_to_csv(dataset: Sequence[Mapping] | pd.DataFrame, filename: str | os.PathLike, output_dir=None) -> Path:
    filepath = resolve_path(filename, output_dir)
    if isinstance(dataset, pd.DataFrame):
        with atomic_write(filepath, newline="") as fh:
            dataset.to_csv(fh, index=False, lineterminator="\n")
        return filepath
    if not dataset:
        with atomic_write(filepath) as fh:
            fh.write("")
        return filepath

    fieldnames = list(dataset[0].keys())
    with atomic_write(filepath, newline="") as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in dataset:
            writer.writerow(row)
    return filepath


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    return str(value)


def write_dataset_to_json(data, filename: str | os.PathLike, output_dir=None) -> Path:
    filepath = resolve_path(filename, output_dir)
    try:
        with atomic_write(filepath) as fh:
            json.dump(data, fh, indent=4, sort_keys=True, default=_jsonable, ensure_ascii=False)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"could not write {filepath}: {exc}") from exc
    return filepath


# Graph documents -------------------------------------------------------------------


def graph_to_dict(g: WeightedGraph) -> dict:
    """Vertices are written as [id] or [id, x, y]; edges as [u, v, repr(weight)]."""
    coords = g.coords if g.coords is not None else (None,) * g.n
    return {
        "schema": GRAPH_SCHEMA,
        "version": GRAPH_SCHEMA_VERSION,
        "vertices": [[v] if p is None else [v, p[0], p[1]] for v, p in zip(g.vertices, coords)],
        "edges": [[u, v, repr(w)] for u, v, w in g.edges],
        "meta": dict(g.meta),
    }


def export_graph(g: WeightedGraph, filename: str | os.PathLike, output_dir=None) -> Path:
    """Write ``g`` as JSON; weights are stored as repr strings so they read back exactly."""
    return write_dataset_to_json(graph_to_dict(g), filename, output_dir)


def _is_id(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _parse_edge(entry) -> tuple[int, int, float]:
    if not isinstance(entry, list) or len(entry) != 3:
        raise SchemaError(f"edge must be a [u, v, weight] list, got {entry!r}")
    u, v, w = entry
    if not (_is_id(u) and _is_id(v)):
        raise SchemaError(f"edge endpoints must be integers, got {entry!r}")
    if isinstance(w, bool):
        raise SchemaError(f"edge weight must be numeric, got {w!r}")
    try:
        return u, v, float(w)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"edge weight must be numeric, got {w!r}") from exc


def _parse_vertex(entry, expected: int) -> tuple[float, float] | None:
    if _is_id(entry):
        vertex, point = entry, []
    elif isinstance(entry, list) and len(entry) in (1, 3) and _is_id(entry[0]):
        vertex, point = entry[0], entry[1:]
    else:
        raise SchemaError(f"vertex entry must be an id, [id] or [id, x, y], got {entry!r}")
    if vertex != expected:
        raise SchemaError(f"'vertices' must list the ids 0..n-1 in order; found {vertex} at position {expected}")
    if not point:
        return None
    if not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in point):
        raise SchemaError(f"vertex coordinates must be numeric, got {entry!r}")
    return float(point[0]), float(point[1])


def graph_from_dict(document) -> WeightedGraph:
    if not isinstance(document, dict):
        raise SchemaError("graph document must be a JSON object")
    for key in ("vertices", "edges"):
        if key not in document:
            raise SchemaError(f"graph document is missing '{key}'")
    vertices, edges = document["vertices"], document["edges"]
    if not isinstance(vertices, list):
        raise SchemaError("'vertices' must be a list")
    points = [_parse_vertex(entry, index) for index, entry in enumerate(vertices)]
    if not isinstance(edges, list):
        raise SchemaError("'edges' must be a list")
    parsed = [_parse_edge(entry) for entry in edges]
    n = len(vertices)
    for u, v, _ in parsed:
        if not (0 <= u < n and 0 <= v < n):
            raise SchemaError(f"edge ({u}, {v}) names a vertex outside 0..{n - 1}")

    coords = None if all(p is None for p in points) else points
    meta = document.get("meta") or {}
    if not isinstance(meta, dict):
        raise SchemaError("'meta' must be an object")
    try:
        return build_graph(parsed, n_vertices=n, coords=coords, meta=meta)
    except GraphError as exc:
        raise SchemaError(f"graph document is not a valid graph: {exc}") from exc


def import_graph(path: str | os.PathLike) -> WeightedGraph:
    filepath = Path(path)
    try:
        with filepath.open("r", encoding="utf-8") as fh:
            document = json.load(fh)
    except FileNotFoundError as exc:
        raise IoError(f"graph file not found: {filepath}") from exc
    except OSError as exc:
        raise IoError(f"could not read {filepath}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"graph file is not valid JSON: {filepath}") from exc
    return graph_from_dict(document)


def write_resistance_csv(matrix: ResistanceMatrix, filename: str | os.PathLike, output_dir=None) -> Path:
    """One row per unordered pair: row, col, R(row, col), R(row, col) / r."""
    rows = [
        {"row": x, "col": y, "R": repr(value), "rescaled": repr(value / matrix.r_diam)}
        for x, y, value in matrix.pairs()
    ]
    return write_dataset_to_csv(rows, filename, output_dir)


def write_pair_resistances_csv(
    pairs: Sequence[tuple[int, int, float]], filename: str | os.PathLike, output_dir=None
) -> Path:
    """Requested pairs only; without the diameter there is no rescaled column."""
    rows = [{"row": x, "col": y, "R": repr(float(value))} for x, y, value in pairs]
    return write_dataset_to_csv(rows, filename, output_dir)


# Manifests --------------------------------------------------------------------------


def file_sha256(path: str | os.PathLike) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def library_version() -> str:
    try:
        return metadata.version("resistwalk")
    except metadata.PackageNotFoundError:
        from . import __version__

        return __version__


@dataclass
class RunManifest:
    """Deterministic record of one run; wall-clock times live in a sidecar."""

    command: str
    config_hash: str
    version: str
    files: dict[str, str] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)

    def add_file(self, path: Path, output_dir: Path) -> None:
        try:
            name = Path(path).resolve().relative_to(Path(output_dir).resolve())
        except ValueError as exc:
            raise IoError(f"{path} was written outside the output directory {output_dir}") from exc
        self.files[name.as_posix()] = file_sha256(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "version": self.version,
            "files": dict(sorted(self.files.items())),
            "steps": dict(sorted(self.steps.items())),
        }

    def write(self, output_dir: str | os.PathLike) -> Path:
        """Write the timing sidecar, then the manifest last."""
        output_dir = Path(output_dir)
        write_dataset_to_json(self.timing, TIMING_NAME, output_dir)
        return write_dataset_to_json(self.to_dict(), MANIFEST_NAME, output_dir)


def load_manifest(path: str | os.PathLike) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise IoError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest is not valid JSON: {path}") from exc
