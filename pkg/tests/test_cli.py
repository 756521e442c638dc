import subprocess
import sys

import pytest

from crowdflux.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

pytestmark = pytest.mark.filterwarnings("ignore::crowdflux.errors.CoverageWarning")

RUN = ["--b", "8", "--T", "10", "--d", "3", "--lam", "0.3", "--epochs", "4", "--restarts", "1", "--n-pool", "50"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "scene"), "--preset", "panic", "--width", "96", "--height", "72",
                 "--frames", "81", "--t_anomaly", "60", "--agents", "20", "--seed", "3", "--grid", "8"]) == EXIT_OK
    return d


def test_full_chain(workdir, capsys):
    d = workdir
    flows = str(d / "scene" / "flow")
    assert main(["train", "--flows", flows, "--frames", "40", "--out", str(d / "model.txt"), *RUN]) == EXIT_OK
    assert main(["detect", "--flows", flows, "--start", "40", "--model", str(d / "model.txt"),
                 "--out", str(d / "det"), *RUN]) == EXIT_OK
    masks = sorted(p.name for p in (d / "det" / "masks").iterdir())
    assert masks[0] == "det_000040.pgm" and len(masks) == 40
    assert main(["eval", "--records", str(d / "det" / "records.csv"), "--truth", str(d / "scene" / "gt"),
                 "--out", str(d / "eval.csv"), *RUN]) == EXIT_OK
    out = capsys.readouterr().out
    assert "auc=" in out and "rd=" in out
    assert main(["report", str(d / "eval.csv"), "--out", str(d / "table.csv")]) == EXIT_OK
    assert (d / "table.csv").read_text().startswith("name,auc,eer,rd,points\neval,")


def test_usage_errors_exit_1(workdir, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE
    assert main(["train", "--flows", "x", "--out", "y", "--lam", "-1"]) == EXIT_USAGE
    assert main(["train", "--flows", "x", "--out", "y", "--profile", "mall"]) == EXIT_USAGE
    assert main(["synth", "--out", str(workdir / "z"), "--preset", "riot"]) == EXIT_USAGE


def test_data_errors_exit_2(workdir, tmp_path):
    assert main(["train", "--flows", str(tmp_path), "--out", str(tmp_path / "m")]) == EXIT_DATA
    (tmp_path / "frame_000000.flo").write_bytes(b"junk" * 4)
    assert main(["train", "--flows", str(tmp_path), "--out", str(tmp_path / "m")]) == EXIT_DATA
    flows = str(workdir / "scene" / "flow")
    model = workdir / "model_b8.txt"
    assert main(["train", "--flows", flows, "--frames", "20", "--out", str(model), *RUN]) == EXIT_OK
    # detection under a different grid than the model was trained with
    assert main(["detect", "--flows", flows, "--model", str(model), "--out", str(tmp_path / "d"),
                 *RUN, "--b", "6"]) == EXIT_DATA


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "crowdflux", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
