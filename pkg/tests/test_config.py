import pytest

from resistwalk.config import (
    ExperimentConfig,
    config_from_document,
    load_runtime_config,
    parse_config,
    parse_pairs,
)
from resistwalk.errors import ParseError, RangeError, UnknownKey


def test_load_runtime_config_defaults(monkeypatch):
    for name in ("RESISTWALK_OUTPUT_DIR", "RESISTWALK_WORKERS", "RESISTWALK_LOG_LEVEL", "RESISTWALK_ALL_PAIRS_BUDGET"):
        monkeypatch.delenv(name, raising=False)

    settings = load_runtime_config()

    assert settings.output_dir == "./data"
    assert settings.workers == 1
    assert settings.log_level == "WARNING"
    assert settings.all_pairs_budget == 3_000


def test_load_runtime_config_reads_environment(monkeypatch):
    monkeypatch.setenv("RESISTWALK_OUTPUT_DIR", "/tmp/out")
    monkeypatch.setenv("RESISTWALK_WORKERS", "4")
    monkeypatch.setenv("RESISTWALK_LOG_LEVEL", "info")

    settings = load_runtime_config()

    assert settings.output_dir == "/tmp/out"
    assert settings.workers == 4
    assert settings.log_level == "INFO"


@pytest.mark.parametrize(
    "name, value",
    [
        ("RESISTWALK_WORKERS", "many"),
        ("RESISTWALK_WORKERS", "0"),
        ("RESISTWALK_ALL_PAIRS_BUDGET", "-5"),
        ("RESISTWALK_LOG_LEVEL", "LOUD"),
    ],
)
def test_load_runtime_config_rejects_bad_values(monkeypatch, caplog, name, value):
    monkeypatch.setenv(name, value)

    with pytest.raises(RangeError):
        load_runtime_config()
    assert name in caplog.text


def test_parse_config_fills_defaults():
    config = parse_config('command = "gen"\n[graph]\nfamily = "vicsek"\nlevel = 3\n')

    assert config.command == "gen"
    assert config.graph.family == "vicsek"
    assert config.graph.level == 3
    assert config.graph.weight == 1.0
    assert config.experiment.levels == (1, 2, 3)
    assert not config.stochastic


def test_parse_config_converts_lists_to_tuples():
    text = """
command = "exp"
seed = 3
[experiment]
study = "thm-b"
family = "path"
levels = [2, 4]
lambda_grid = [0.0, 1.0, 2.0]
n_trials = 500
"""
    config = parse_config(text)

    assert config.experiment.levels == (2, 4)
    assert config.experiment.lambda_grid == (0.0, 1.0, 2.0)
    assert config.stochastic


def test_stochastic_commands_need_a_seed():
    with pytest.raises(RangeError, match="seed"):
        parse_config('command = "walk"\n')


def test_deterministic_studies_do_not_need_a_seed():
    config = config_from_document({"command": "exp", "experiment": {"study": "uvd", "family": "path", "levels": [4]}})

    assert not config.stochastic


@pytest.mark.parametrize(
    "text, error",
    [
        ("command = ", ParseError),
        ("seed = 1\n", ParseError),
        ('command = "gen"\ncolour = "red"\n', UnknownKey),
        ('command = "gen"\n[graph]\nshape = "round"\n', UnknownKey),
        ('command = "gen"\ngraph = 3\n', ParseError),
        ('command = "dance"\n', RangeError),
        ('command = "gen"\nschema_version = 2\n', RangeError),
        ('command = "gen"\n[graph]\nfamily = "torus"\n', RangeError),
        ('command = "gen"\n[graph]\nfamily = "gasket"\nlevel = 99\n', RangeError),
        ('command = "gen"\n[graph]\nweight = 0\n', RangeError),
        ('command = "exp"\nseed = 1\n[experiment]\nn_trials = 10\n', RangeError),
        ('command = "exp"\nseed = 1\n[experiment]\nlambda_grid = [1.0, 0.5]\n', RangeError),
        ('command = "exp"\nseed = 1\n[experiment]\nL = 0.5\n', RangeError),
        ('command = "exp"\nseed = -1\n', RangeError),
        ('command = "gen"\nworkers = 0\n', RangeError),
        ('command = "oracle"\n[oracle]\nkind = "mystery"\n', RangeError),
        ('command = "exp"\nseed = 1\noutput_file = "curves.csv"\n', RangeError),
        ('command = "gen"\noutput_file = "/tmp/g.json"\n', RangeError),
        ('command = "resist"\n[resist]\npairs = "0-2"\n', RangeError),
        ('command = "resist"\n[resist]\npairs = [[0, 2]]\n', RangeError),
        ('command = "resist"\n[resist]\nsubset = "all"\n', UnknownKey),
    ],
)
def test_parse_config_rejects_bad_documents(text, error):
    with pytest.raises(error):
        parse_config(text)


def test_parse_pairs():
    assert parse_pairs("all") is None
    assert parse_pairs("0:2, 3:1") == [(0, 2), (3, 1)]
    with pytest.raises(RangeError):
        parse_pairs("0:2,")


def test_output_file_names_the_primary_output():
    config = parse_config('command = "resist"\noutput_file = "R.csv"\n[resist]\npairs = "0:1"\n')

    assert config.output_file == "R.csv"
    assert config.resist.pairs == "0:1"


def test_graph_input_skips_family_checks():
    config = parse_config('command = "resist"\n[graph]\ninput = "graph.json"\nfamily = "torus"\n')

    assert config.graph.input == "graph.json"


def test_digest_ignores_worker_count():
    one = ExperimentConfig(command="gen", workers=1)
    many = ExperimentConfig(command="gen", workers=8)
    other = ExperimentConfig(command="gen", seed=5)

    assert one.digest() == many.digest()
    assert one.digest() != other.digest()
    assert len(one.digest()) == 64
