import csv
import json
import shutil
from pathlib import Path

import pytest
import yaml

from opennsq.cli import EXIT_MANIFEST, EXIT_OK, EXIT_STAGE, main
from opennsq.pipeline import STAGES, Manifest, ManifestError, read_run_report

ARTIFACTS = ["applications.jsonl", "extraction.jsonl", "records.jsonl", "citation_index.tsv", "results.csv"]


def results(out):
    with open(Path(out) / "results.csv", newline="") as fh:
        return {r["app_id"]: r for r in csv.DictReader(fh)}


def cli(*args):
    return main([str(a) for a in args])


def test_two_candidates_run(pair_dir, tmp_path, capsys, no_network):
    out = tmp_path / "out"
    assert cli("run", "--manifest", pair_dir / "manifest.yaml", "--out", out) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["stages"]["report"]["overall"]["AP"] == {"n": 2, "pct_overall": 50.0}
    res = results(out)
    assert res["cand1"]["passed"] == "true" and res["cand2"]["passed"] == "false"
    assert res["cand1"]["agree_overall"] == "true" and res["cand2"]["agree_overall"] == "false"
    level_table = (out / "report" / "agreement_by_level.csv").read_text().splitlines()
    assert "Overall agreement,50.00" in level_table
    assert (out / "report" / "figures" / "sa_ranking.svg").exists()
    assert no_network == []


def test_run_report_bookkeeping(pair_dir, tmp_path):
    out = tmp_path / "out"
    assert cli("run", "--manifest", pair_dir / "manifest.yaml", "--out", out) == EXIT_OK
    rep = read_run_report(out)
    assert set(rep["seconds"]) == set(STAGES)
    s = rep["stages"]
    assert s["extract"]["cvs_read"] == 2
    assert s["resolve"]["valid"] + s["resolve"]["invalid"] + s["resolve"]["unknown"] == s["extract"]["unique_dois"]
    assert s["resolve"]["found"] + s["resolve"]["not_found"] + s["resolve"]["failed"] == s["resolve"]["dois"]
    assert s["resolve"]["not_found"] == 1 and s["resolve"]["undated"] == 1
    assert s["ingest"]["total_edges"] == 224 and s["ingest"]["duplicates"] == 2
    assert s["evaluate"]["evaluated"] == 2 and s["evaluate"]["zero_doi"] == 0


def test_rerun_is_byte_identical(e2e_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli("run", "--manifest", e2e_dir / "manifest.yaml", "--out", a) == EXIT_OK
    assert cli("run", "--manifest", e2e_dir / "manifest.yaml", "--out", b, "--jobs", "4") == EXIT_OK
    for name in ARTIFACTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for p in sorted((a / "report").rglob("*.*")):
        assert p.read_bytes() == (b / p.relative_to(a)).read_bytes(), p.name


def test_chained_stages_equal_run(e2e_dir, tmp_path):
    whole, chained = tmp_path / "whole", tmp_path / "chained"
    assert cli("run", "--manifest", e2e_dir / "manifest.yaml", "--out", whole) == EXIT_OK
    for stage in STAGES:
        assert cli(stage, "--manifest", e2e_dir / "manifest.yaml", "--out", chained) == EXIT_OK
    for name in ARTIFACTS:
        assert (whole / name).read_bytes() == (chained / name).read_bytes(), name
    for p in sorted((whole / "report").rglob("*.*")):
        assert p.read_bytes() == (chained / p.relative_to(whole)).read_bytes(), p.name
    assert read_run_report(whole)["stages"] == read_run_report(chained)["stages"]


def test_e2e_offline_run_makes_no_network_calls(e2e_dir, tmp_path, no_network):
    assert cli("run", "--manifest", e2e_dir / "manifest.yaml", "--out", tmp_path / "o", "--offline") == EXIT_OK
    assert no_network == []


def _write_manifest(tmp_path, **data):
    path = tmp_path / "manifest.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_empty_cv_directory(tmp_path, pair_dir):
    (tmp_path / "cvs").mkdir()
    (tmp_path / "meta.csv").write_text("app_id,rf,level,session_year,official_a,official_b,official_c,official_passed\n")
    manifest = _write_manifest(tmp_path, cv_dir="cvs", cv_metadata="meta.csv",
                               thresholds=str(pair_dir / "thresholds.csv"),
                               metadata_fixture=str(pair_dir / "crossref.jsonl"), offline=True, out="out")
    assert cli("run", "--manifest", manifest) == EXIT_OK
    s = read_run_report(tmp_path / "out")["stages"]
    assert s["extract"]["cvs_read"] == 0 and s["extract"].get("dois_extracted", 0) == 0
    assert s["resolve"]["dois"] == 0
    assert s["ingest"]["total_edges"] == 0
    assert s["evaluate"]["applications"] == 0
    assert s["report"]["records"] == 0 and s["report"]["figures"] == 0
    assert list(results(tmp_path / "out")) == []


def test_bad_applications_are_counted_not_fatal(tmp_path, pair_dir):
    apps = [
        {"app_id": "ok", "rf": "09/H1", "level": "AP", "session_year": 2016, "dois": ["10.5555/cand1.p1"],
         "official": [1, 2, 3], "official_passed": False},
        {"app_id": "nd", "rf": "08/C1", "level": "AP", "session_year": 2016, "dois": []},
        {"app_id": "bad", "rf": "99/Z9", "level": "AP", "session_year": 2016, "dois": []},
        {"app_id": "nothr", "rf": "01/B1", "level": "AP", "session_year": 2016, "dois": [],
         "official_passed": False},
        {"app_id": "noofficial", "rf": "09/H1", "level": "FP", "session_year": 2016, "dois": ["not-a-doi"]},
    ]
    (tmp_path / "apps.jsonl").write_text("".join(json.dumps(a) + "\n" for a in apps))
    manifest = _write_manifest(tmp_path, applications="apps.jsonl", coci=str(pair_dir / "coci.csv"),
                               thresholds=str(pair_dir / "thresholds.csv"),
                               metadata_fixture=str(pair_dir / "crossref.jsonl"), offline=True, out="out")
    assert cli("run", "--manifest", manifest) == EXIT_OK
    s = read_run_report(tmp_path / "out")["stages"]
    assert s["extract"]["applications"] == 3
    assert s["extract"]["applications_rejected_nd"] == 1
    assert s["extract"]["applications_malformed"] == 1
    assert s["extract"]["rejected_spans"] == 1
    assert s["evaluate"]["missing_thresholds"] == 1 and "nothr" in s["evaluate"]["missing_threshold_apps"]
    assert s["evaluate"]["missing_official"] == 1
    res = results(tmp_path / "out")
    assert set(res) == {"ok", "noofficial"}
    assert res["noofficial"]["agree_overall"] == ""


def test_missing_cv_file_is_counted(tmp_path, pair_dir):
    (tmp_path / "cvs").mkdir()
    (tmp_path / "cvs" / "a1.txt").write_text("doi:10.5555/cand1.p1\n")
    (tmp_path / "meta.csv").write_text(
        "app_id,rf,level,session_year,official_a,official_b,official_c,official_passed\n"
        "a1,09/H1,AP,2016,1,2,3,false\n"
        "a2,09/H1,AP,2016,1,2,3,false\n")
    manifest = _write_manifest(tmp_path, cv_dir="cvs", cv_metadata="meta.csv", coci=str(pair_dir / "coci.csv"),
                               thresholds=str(pair_dir / "thresholds.csv"),
                               metadata_fixture=str(pair_dir / "crossref.jsonl"), offline=True, out="out")
    assert cli("run", "--manifest", manifest) == EXIT_OK
    s = read_run_report(tmp_path / "out")["stages"]
    assert s["extract"]["applications"] == 1
    assert "a2" in s["extract"]["rejected_applications"]
    assert results(tmp_path / "out")["a1"]["sim_b"] == "100"


def test_overrides(pair_dir, tmp_path):
    out = tmp_path / "gt"
    assert cli("run", "--manifest", pair_dir / "manifest.yaml", "--out", out, "--comparator", "gt") == EXIT_OK
    assert results(out)["cand2"]["exceeds_c"] == "false"
    out = tmp_path / "age"
    assert cli("run", "--manifest", pair_dir / "manifest.yaml", "--out", out, "--normalization", "age") == EXIT_OK
    assert float(results(out)["cand1"]["sim_b"]) == pytest.approx(146 / 12)


@pytest.mark.parametrize("edit", [
    {"thresholds": "nope.csv"},
    {"comparator": "approx"},
    {"normalization": "log"},
    {"surprise": 1},
    {"coci": "no-such-dump-*.csv"},
    {"metadata_fixture": None},
    {"jobs": 0},
    {"cv_dir": "."},
])
def test_invalid_manifest_exit_code(pair_dir, tmp_path, edit, capsys):
    for f in pair_dir.iterdir():
        shutil.copy(f, tmp_path / f.name)
    data = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    data.update(edit)
    data = {k: v for k, v in data.items() if v is not None}
    (tmp_path / "manifest.yaml").write_text(yaml.safe_dump(data))
    assert cli("run", "--manifest", tmp_path / "manifest.yaml") == EXIT_MANIFEST
    assert "manifest error" in capsys.readouterr().err


def test_missing_manifest_file(tmp_path):
    assert cli("run", "--manifest", tmp_path / "none.yaml") == EXIT_MANIFEST


def test_stage_out_of_order_fails(pair_dir, tmp_path, capsys):
    assert cli("evaluate", "--manifest", pair_dir / "manifest.yaml", "--out", tmp_path / "o") == EXIT_STAGE
    assert "[evaluate]" in capsys.readouterr().err


def test_broken_threshold_table_is_a_stage_failure(pair_dir, tmp_path, capsys):
    for f in pair_dir.iterdir():
        shutil.copy(f, tmp_path / f.name)
    with open(tmp_path / "thresholds.csv", "a") as fh:
        fh.write("09/H1,AP,1,1,1\n")
    assert cli("run", "--manifest", tmp_path / "manifest.yaml") == EXIT_STAGE
    err = capsys.readouterr().err
    assert "[evaluate]" in err and "thresholds.csv" in err


def test_manifest_paths_resolve_relative_to_manifest(pair_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    m = Manifest.load(pair_dir / "manifest.yaml", out=str(tmp_path / "o"))
    assert m.thresholds == (pair_dir / "thresholds.csv").resolve()
    assert m.coci == [str(pair_dir / "coci.csv")]


def test_manifest_requires_one_input(pair_dir, tmp_path):
    with pytest.raises(ManifestError):
        Manifest.from_dict({"out": str(tmp_path), "thresholds": str(pair_dir / "thresholds.csv")})


def test_help_lists_stages(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for stage in ("run",) + STAGES:
        assert stage in text
