import json

import pytest

from amr.cli import main
from amr.experiments import read_csv
from amr.pathgen import load_pathset


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--learners", "40", "--kcs", "120", "--interactions", "4",
                 "--seed", "2"]) == 0
    return root


def _descriptor(root):
    (desc,) = [p for p in (root / "data").iterdir() if p.suffix == ".desc"]
    return desc


TINY = ["--set", "epochs=1", "--set", "n_aspects=2", "--set", "h=3", "--set", "m=3", "--set", "max_len=4",
        "--set", "p=3"]


def test_end_to_end(workdir, capsys):
    root = workdir
    synth = json.loads((root / "data" / "synth.json").read_text())
    assert synth["config_hash"] and (root / "data" / "kc_attributes.csv").read_text().startswith("# config_hash=")

    store = root / "graph.npz"
    assert main(["ingest", str(_descriptor(root)), "--out", str(store)]) == 0
    summary = json.loads(store.with_suffix(".json").read_text())
    assert summary["nodes"]["learner"] == 40 and summary["nodes"]["kc"] == 120

    assert main(["walk", str(store), "--out", str(root / "paths"), "--max-len", "4", "--p", "3"]) == 0
    ps = load_pathset(root / "paths" / "kc.paths")
    assert ps.max_len == 4 and len(ps) > 0

    run = root / "run"
    assert main(["train", "--data", str(store), "--paths", str(root / "paths"), "--out", str(run), *TINY]) == 0
    log = (run / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("# config_hash=") and len(log) == 3

    assert main(["evaluate", str(run / "checkpoint.pt"), "--out", str(root / "report.json")]) == 0
    rep = json.loads((root / "report.json").read_text())
    assert rep["groups"] == 40 and 0 <= rep["HR@5"] <= 1

    assert main(["ablate", "--data", str(store), "--axis", "gnn_variant", "--values", "gcn,sage",
                 "--out", str(run / "ablation.csv"), *TINY]) == 0
    assert [r["value"] for r in read_csv(run / "ablation.csv")] == ["gcn", "sage"]

    out = root / "plots"
    assert main(["export-plots", str(run / "checkpoint.pt"), "--out", str(out), "--pairs", "50"]) == 0
    for name in ("aspect_importance.csv", "aspect_importance.png", "ablation.png", "export_summary.json"):
        assert (out / name).stat().st_size > 0
    capsys.readouterr()


def test_train_is_reproducible(workdir):
    store = workdir / "graph2.npz"
    main(["ingest", str(_descriptor(workdir)), "--out", str(store)])
    logs = []
    for name in ("r1", "r2"):
        main(["train", "--data", str(store), "--out", str(workdir / name), *TINY])
        logs.append((workdir / name / "train_log.csv").read_bytes())
    assert logs[0] == logs[1]


def test_bad_override_rejected(workdir):
    with pytest.raises(SystemExit):
        main(["train", "--data", "x", "--out", str(workdir / "bad"), "--set", "nonsense"])
