import os

import pytest

from rainreplay import cli
from rainreplay.cli import (
    EXIT_BAD_KEY, EXIT_BAD_METHOD, EXIT_MISSING_FILE, EXIT_OK, main,
)

SPEC = """\
# two-dataset stream
datasets=a,b
image_size=16
pair_count=5
seed=9
a.angle_mean=40
a.density=30
b.angle_mean=130
b.density=12
"""


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "stream.txt"
    path.write_text(SPEC)
    return str(path)


def _run(spec_file, out, *extra):
    return main(["run", "--config", spec_file, "--out", out,
                 "--iterations", "4", "--batch-size", "2", *extra])


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# error handling
# ---------------------------------------------------------------------------


def test_missing_config_file(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.txt"),
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_MISSING_FILE
    assert "nope.txt" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text(SPEC + "lamda=1\n")  # typo for a config key
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == EXIT_BAD_KEY
    assert "lamda" in capsys.readouterr().err


def test_malformed_line_rejected(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("datasets=a\njust some words\na.angle_mean=50\n")
    code = main(["gen", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == EXIT_BAD_KEY


def test_unknown_method(spec_file, tmp_path, capsys):
    code = _run(spec_file, str(tmp_path / "o"), "--method", "finetune")
    assert code == EXIT_BAD_METHOD
    assert "finetune" in capsys.readouterr().err


def test_missing_required_dataset_key(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("datasets=a\na.density=10\n")
    assert main(["gen", "--config", str(path),
                 "--out", str(tmp_path / "o")]) == EXIT_BAD_KEY


# ---------------------------------------------------------------------------
# gen / similarity / cost
# ---------------------------------------------------------------------------


def test_gen_writes_ppm_pairs(spec_file, tmp_path):
    out = tmp_path / "data"
    assert main(["gen", "--config", spec_file, "--out", str(out)]) == EXIT_OK
    for ds in ("a", "b"):
        assert (out / ds / "spec.txt").exists()
        assert (out / ds / "0_rain.ppm").exists()
        assert (out / ds / "0_clean.ppm").exists()
        assert (out / ds / "4_clean.ppm").exists()


def test_similarity_prints_chain(spec_file, capsys):
    assert main(["similarity", "--config", spec_file]) == EXIT_OK
    out = capsys.readouterr().out
    assert "stage 1 (a): bootstrap" in out
    assert "stage 2 (b):" in out and "S_hat=" in out


def test_cost_command(tmp_path, capsys):
    consts = tmp_path / "c.txt"
    consts.write_text("\n".join(
        f"{k}=1.0" for k in sorted(cli._CONSTANT_KEYS)) + "\n")
    code = main(["cost", "--sizes", "100,100,100,100,100,100",
                 "--constants", str(consts)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "naive=500" in out
    assert "counted=228" in out
    assert "P_GAN=6" in out


def test_cost_missing_constant(tmp_path, capsys):
    consts = tmp_path / "c.txt"
    consts.write_text("p_g=1.0\n")
    assert main(["cost", "--sizes", "10,10",
                 "--constants", str(consts)]) == EXIT_BAD_KEY


# ---------------------------------------------------------------------------
# run determinism and equivalences
# ---------------------------------------------------------------------------


def test_run_deterministic(spec_file, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert _run(spec_file, a) == EXIT_OK
    assert _run(spec_file, b) == EXIT_OK
    for name in ("memory.csv", "generalization.csv", "cost.csv"):
        assert _read(os.path.join(a, name)) == _read(os.path.join(b, name))


def test_ablated_clgid_equals_sf(spec_file, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert _run(spec_file, a, "--method", "clgid",
                "--no-replay", "--no-distill") == EXIT_OK
    assert _run(spec_file, b, "--method", "sf") == EXIT_OK
    for name in ("memory.csv", "generalization.csv", "cost.csv"):
        assert _read(os.path.join(a, name)) == _read(os.path.join(b, name))


def test_manifest_rerun_reproduces(spec_file, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert _run(spec_file, a, "--method", "clgid-fast", "--seed", "17") == EXIT_OK
    assert main(["run", "--manifest", os.path.join(a, "manifest.txt"),
                 "--out", b]) == EXIT_OK
    for name in ("memory.csv", "generalization.csv", "cost.csv"):
        assert _read(os.path.join(a, name)) == _read(os.path.join(b, name))


def test_run_individual(spec_file, tmp_path):
    out = str(tmp_path / "ind")
    assert _run(spec_file, out, "--method", "individual") == EXIT_OK
    with open(os.path.join(out, "memory.csv")) as fh:
        lines = fh.read().strip().splitlines()
    # header plus the two diagonal entries
    assert len(lines) == 3


def test_compare_merges_runs(spec_file, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert _run(spec_file, a, "--method", "clgid") == EXIT_OK
    assert _run(spec_file, b, "--method", "sf") == EXIT_OK
    out = str(tmp_path / "comparison.csv")
    assert main(["compare", a, b, "--out", out]) == EXIT_OK
    with open(out) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0].startswith("method,")
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "clgid"
    assert lines[2].split(",")[0] == "sf"


def test_compare_missing_dir(tmp_path):
    assert main(["compare", str(tmp_path / "ghost")]) == EXIT_MISSING_FILE
