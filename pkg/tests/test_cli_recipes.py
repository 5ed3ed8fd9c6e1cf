"""Micro-scale end-to-end runs of the experiment recipe subcommands."""

import json

import pytest

from segadapt.cli import main

pytestmark = pytest.mark.acceptance

MICRO_ARGS = [
    "--image_size", "32,32", "--feature_dim", "8",
    "--n_source", "24", "--n_target_train", "24", "--n_target_val", "8", "--n_target2_val", "8",
    "--warmup_epochs", "2", "--st_epochs", "2", "--label_refresh_epochs", "1",
    "--batch_source", "8", "--batch_target", "8",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("recipes") / "data"
    assert main(["gen-data", "--out", str(root), "--seed", "2", *MICRO_ARGS]) == 0
    return root


def test_ablate_emits_five_rows_in_ladder_order(dataset, tmp_path):
    run = tmp_path / "ablate"
    assert main(["ablate", "--data", str(dataset), "--run", str(run), "--seeds", "1", *MICRO_ARGS]) == 0
    report = json.loads((run / "report.json").read_text())
    names = [row["name"] for row in report["rows"]]
    assert names == ["source_only", "distill_b", "distill_bc", "crdomix", "selftrain"]
    assert all("miou" in row for row in report["rows"])
    assert (run / "config.resolved").is_file()


def test_generalize_reports_both_domains(dataset, tmp_path):
    run = tmp_path / "gen"
    assert main(["generalize", "--data", str(dataset), "--run", str(run), "--seeds", "1", *MICRO_ARGS]) == 0
    report = json.loads((run / "report.json").read_text())
    names = [row["name"] for row in report["rows"]]
    assert names == ["supervised_only", "distillation"]
    for row in report["rows"]:
        assert "miou_target" in row and "miou_target2" in row


def test_compare_pseudo_covers_four_strategies(dataset, tmp_path):
    run = tmp_path / "pseudo"
    assert main(["compare-pseudo", "--data", str(dataset), "--run", str(run), *MICRO_ARGS]) == 0
    report = json.loads((run / "report.json").read_text())
    assert set(report) == {"feat", "warm", "threshold", "consensus"}
    for name in report:
        assert (run / f"metrics_{name}.jsonl").is_file()
