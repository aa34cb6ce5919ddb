import csv
import json

import pandas as pd
import pytest

from resistwalk.errors import IoError, SchemaError
from resistwalk.graphs import build_graph, family_graph
from resistwalk.io_utils import (
    GRAPH_SCHEMA,
    RunManifest,
    export_graph,
    file_sha256,
    graph_from_dict,
    graph_to_dict,
    import_graph,
    load_manifest,
    resolve_path,
    write_dataset_to_csv,
    write_dataset_to_json,
    write_pair_resistances_csv,
    write_resistance_csv,
)
from resistwalk.resistance import resistance_matrix


def test_resolve_path_uses_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RESISTWALK_OUTPUT_DIR", str(tmp_path / "data"))

    path = resolve_path("out.csv")

    assert path == tmp_path / "data" / "out.csv"
    assert path.parent.is_dir()
    assert resolve_path(tmp_path / "abs.csv") == tmp_path / "abs.csv"


def test_write_dataset_to_csv(tmp_path):
    rows = [{"x": 0, "y": 1}, {"x": 2, "y": 3}]

    path = write_dataset_to_csv(rows, "rows.csv", tmp_path)

    with path.open(newline="", encoding="utf-8") as fh:
        assert list(csv.DictReader(fh)) == [{"x": "0", "y": "1"}, {"x": "2", "y": "3"}]
    assert b"\r\n" not in path.read_bytes()


def test_write_dataset_to_csv_empty(tmp_path):
    path = write_dataset_to_csv([], "empty.csv", tmp_path)

    assert path.read_text(encoding="utf-8") == ""


def test_write_dataset_to_csv_accepts_frames(tmp_path):
    frame = pd.DataFrame({"a": [1, 2], "b": [0.5, 0.25]})

    path = write_dataset_to_csv(frame, "frame.csv", tmp_path)

    assert path.read_text(encoding="utf-8") == "a,b\n1,0.5\n2,0.25\n"


def test_write_dataset_to_json_is_sorted(tmp_path):
    path = write_dataset_to_json({"b": 1, "a": (1, 2)}, "data.json", tmp_path)

    text = path.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [1, 2], "b": 1}
    assert not list(tmp_path.glob(".data.json.*"))


def test_graph_document_replays_exactly(tmp_path):
    g = family_graph("gasket", 2, weight=0.1)

    path = export_graph(g, "graph.json", tmp_path)
    loaded = import_graph(path)

    assert path == tmp_path / "graph.json"
    assert loaded.edges == g.edges
    assert loaded.coords == g.coords
    assert loaded.meta["family"] == "gasket"
    document = json.loads(path.read_text())
    assert document["schema"] == GRAPH_SCHEMA
    assert document["vertices"][1] == [1, *g.coords[1]]


def test_graph_document_vertices_without_positions():
    g = build_graph([(0, 1, 1.0), (1, 2, 2.0)])

    document = graph_to_dict(g)

    assert document["vertices"] == [[0], [1], [2]]
    assert graph_from_dict(document).coords is None
    document["vertices"] = [0, 1, [2, 0.5, 1.0]]
    assert graph_from_dict(document).coords == (None, None, (0.5, 1.0))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda doc: doc.pop("edges"),
        lambda doc: doc.update(vertices=[0, 2, 1]),
        lambda doc: doc.update(edges=[[0, 1]]),
        lambda doc: doc.update(edges=[[0, "one", "1.0"]]),
        lambda doc: doc.update(edges=[[0, 1, "heavy"]]),
        lambda doc: doc.update(edges=[[0, 99, "1.0"]]),
        lambda doc: doc.update(edges=[[0, 1, "-1.0"], [1, 2, "1.0"]]),
        lambda doc: doc.update(vertices=[[0, 0.0], [1], [2]]),
        lambda doc: doc.update(vertices=[[0, "a", 0.0], [1], [2]]),
        lambda doc: doc.update(vertices=[[0], [2], [1]]),
        lambda doc: doc.update(vertices={"0": [0.0, 0.0]}),
        lambda doc: doc.update(meta="path"),
    ],
)
def test_graph_from_dict_rejects_bad_documents(mutate):
    document = graph_to_dict(family_graph("path", 2))
    mutate(document)

    with pytest.raises(SchemaError):
        graph_from_dict(document)


def test_import_graph_errors(tmp_path):
    with pytest.raises(IoError):
        import_graph(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError):
        import_graph(broken)


def test_write_resistance_csv(tmp_path):
    matrix = resistance_matrix(family_graph("path", 2))

    path = write_resistance_csv(matrix, "resistance.csv", tmp_path)

    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["row", "col", "R", "rescaled"]
    assert [(r["row"], r["col"]) for r in rows] == [("0", "1"), ("0", "2"), ("1", "2")]
    assert float(rows[1]["R"]) == pytest.approx(2.0)
    assert float(rows[1]["rescaled"]) == pytest.approx(1.0)


def test_write_pair_resistances_csv(tmp_path):
    path = write_pair_resistances_csv([(0, 2, 2.0), (1, 0, 1.0)], "pairs.csv", tmp_path)

    assert path.read_text(encoding="utf-8") == "row,col,R\n0,2,2.0\n1,0,1.0\n"


def test_manifest_is_written_last_and_excludes_timing(tmp_path):
    data = write_dataset_to_json({"value": 1}, "result.json", tmp_path)
    manifest = RunManifest(command="gen", config_hash="abc", version="0.1.0")
    manifest.add_file(data, tmp_path)
    manifest.steps["walk"] = 10
    manifest.timing["seconds"] = 1.5

    path = manifest.write(tmp_path)

    loaded = load_manifest(path)
    assert loaded["files"] == {"result.json": file_sha256(data)}
    assert loaded["steps"] == {"walk": 10}
    assert "timing" not in loaded
    assert json.loads((tmp_path / "timing.json").read_text()) == {"seconds": 1.5}
    assert path.stat().st_mtime_ns >= (tmp_path / "timing.json").stat().st_mtime_ns


def test_manifest_rejects_files_outside_the_output_dir(tmp_path):
    outside = write_dataset_to_json({"value": 1}, "stray.json", tmp_path / "elsewhere")
    manifest = RunManifest(command="gen", config_hash="abc", version="0.1.0")

    with pytest.raises(IoError):
        manifest.add_file(outside, tmp_path / "out")


def test_load_manifest_errors(tmp_path):
    with pytest.raises(IoError):
        load_manifest(tmp_path / "manifest.json")
