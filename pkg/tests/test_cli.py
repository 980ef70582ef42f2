import json
from pathlib import Path

import pytest

import main
from app.poc import movie_workflow, poc_policy, poc_workflow
from app.policy import load_policy
from app.workflow import load_workflow
from init_poc import DATA_DIR, write_fixtures


@pytest.fixture
def data(tmp_path):
    write_fixtures(tmp_path / "data")
    return tmp_path / "data"


def simulate(data, out, *extra):
    return main.main(["simulate", "--workflow", str(data / "poc_workflow.json"),
                      "--policy", str(data / "poc_policy.json"), "--out", str(out), *extra])


def verify(data, captures, report):
    return main.main(["verify", "--policy", str(data / "poc_policy.json"),
                      "--captures", str(captures), "--report", str(report)])


def test_shipped_data_matches_reference_objects():
    assert load_workflow(DATA_DIR / "movie_workflow.json") == movie_workflow()
    assert load_workflow(DATA_DIR / "poc_workflow.json") == poc_workflow()
    assert load_policy(DATA_DIR / "poc_policy.json") == poc_policy()


def test_version(capsys):
    assert main.main(["--version"]) == 0
    assert "1.0.0" in capsys.readouterr().out


def test_unknown_flag_is_usage_error():
    assert main.main(["compile", "--nope"]) == 2


# compile

def test_compile(data, tmp_path, capsys):
    out = tmp_path / "policy.json"
    assert main.main(["compile", "--workflow", str(data / "movie_workflow.json"), "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == "8 permissions"
    manifest = json.loads((tmp_path / "policy.json.manifest.json").read_text())
    assert manifest["subcommand"] == "compile"

    again = tmp_path / "again.json"
    main.main(["compile", "--workflow", str(data / "movie_workflow.json"), "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_compile_with_time_window(data, tmp_path):
    out = tmp_path / "policy.json"
    code = main.main(["compile", "--workflow", str(data / "movie_workflow.json"), "--out", str(out),
                      "--time-window", "C2=9-17"])
    assert code == 0
    rules = {r.user: r for r in load_policy(out).allow_rules}
    assert [(w.min_hour, w.max_hour) for w in rules["C2"].time_windows] == [(9, 17)]
    assert rules["O"].time_windows == []


def test_compile_reports_defects(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({
        "owner": "O",
        "agents": [{"actor": n, "agent": n} for n in ("O", "A", "B")],
        "edges": [{"src": "O", "dst": "A"}, {"src": "A", "dst": "B"}, {"src": "B", "dst": "A"}],
    }))
    assert main.main(["compile", "--workflow", str(path), "--out", str(tmp_path / "p.json")]) == 2
    assert "defect: cycle: A,B" in capsys.readouterr().err
    assert not (tmp_path / "p.json").exists()


def test_compile_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main.main(["compile", "--workflow", str(path), "--out", str(tmp_path / "p.json")]) == 2


# evaluate

@pytest.mark.parametrize("args,code", [
    (["--user", "owner", "--path", "/api/vfx-1"], 0),
    (["--user", "owner", "--path", "/api/vfx-1", "--method", "GET"], 1),
    (["--user", "vfx-3", "--path", "/api/sound", "--hour", "20"], 1),
    (["--user", "vfx-3", "--path", "/api/sound", "--hour", "20", "--attr", "tenure=11"], 0),
    (["--user", "owner", "--path", "no-slash"], 2),
    (["--user", "owner", "--path", "/api/vfx-1", "--attr", "oops"], 2),
])
def test_evaluate(data, args, code):
    assert main.main(["evaluate", "--policy", str(data / "poc_policy.json"), *args]) == code


def test_evaluate_prints_decision(data, capsys):
    main.main(["evaluate", "--policy", str(data / "poc_policy.json"), "--user", "owner", "--path", "/api/vfx-1"])
    decision = json.loads(capsys.readouterr().out)
    assert decision["verdict"] == "allow"
    assert decision["matched_rule_index"] == 0


def test_evaluate_requires_policy():
    assert main.main(["evaluate", "--user", "owner", "--path", "/api/vfx-1"]) == 2


# simulate / verify

def test_sweep_and_verify(data, tmp_path, capsys):
    captures = tmp_path / "captures.jsonl"
    assert simulate(data, captures) == 0
    assert "7 pods, 216 capture records" in capsys.readouterr().out
    assert Path(f"{captures}.identity.jsonl").exists()
    manifest = json.loads(Path(f"{captures}.manifest.json").read_text())
    assert manifest["config"]["mode"] == "sweep"
    assert manifest["config"]["services"] == ["owner", "vfx-1", "vfx-2", "vfx-3", "color", "sound", "hdr"]

    report_path = tmp_path / "report.json"
    assert verify(data, captures, report_path) == 0
    report = json.loads(report_path.read_text())
    assert report["verdict"] == "compliant"
    assert report["total_checks"] == report["required_checks"] == 1176


def test_sweep_is_byte_identical(data, tmp_path):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert simulate(data, first, "--seed", "4") == 0
    assert simulate(data, second, "--seed", "4") == 0
    assert first.read_bytes() == second.read_bytes()
    assert Path(f"{first}.identity.jsonl").read_bytes() == Path(f"{second}.identity.jsonl").read_bytes()


@pytest.mark.fault
@pytest.mark.parametrize("fault", ["disable-policy:vfx-2", "plaintext:owner,vfx-1",
                                   "rogue-edge:owner,color", "tamper-cert:hdr"])
def test_faulty_sweep_fails_verification(data, tmp_path, capsys, fault):
    captures = tmp_path / "captures.jsonl"
    assert simulate(data, captures, "--fault", fault) == 0
    assert verify(data, captures, tmp_path / "report.json") == 1
    assert "violations" in capsys.readouterr().out


def test_destination_enforcement_round_trip(data, tmp_path):
    captures = tmp_path / "captures.jsonl"
    assert simulate(data, captures, "--enforcement-point", "destination") == 0
    assert verify(data, captures, tmp_path / "report.json") == 0


def test_truncated_captures_are_an_error(data, tmp_path):
    captures = tmp_path / "captures.jsonl"
    simulate(data, captures)
    lines = captures.read_text().splitlines(keepends=True)
    captures.write_text("".join(lines[:-1]))
    assert verify(data, captures, tmp_path / "report.json") == 2


def test_script_mode(data, tmp_path, capsys):
    captures = tmp_path / "captures.jsonl"
    assert simulate(data, captures, "--script", str(data / "poc_script.json")) == 0
    assert "7 pods, 12 capture records" in capsys.readouterr().out
    assert json.loads(Path(f"{captures}.manifest.json").read_text())["config"]["mode"] == "script"


@pytest.mark.parametrize("extra", [["--fault", "bogus:x"], ["--fault", "disable-policy:nobody"],
                                   ["--methods", "FETCH"]])
def test_simulate_rejects_bad_input(data, tmp_path, extra):
    assert simulate(data, tmp_path / "captures.jsonl", *extra) == 2


# bench / stats

def test_bench_startup(tmp_path):
    out = tmp_path / "startup.csv"
    assert main.main(["bench", "--kind", "startup", "--samples", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "label,value,pod"
    assert len(lines) == 1 + 2 * 2 * 7


@pytest.mark.parametrize("extra", [["--samples", "0"], ["--levels", "minimal,bogus"]])
def test_bench_rejects(tmp_path, extra):
    assert main.main(["bench", "--kind", "request", "--out", str(tmp_path / "r.csv"), *extra]) == 2


def write_csv(path, groups, tag="intra"):
    rows = ["label,value,region"]
    for label, values in groups.items():
        rows += [f"{label},{v!r},{tag}" for v in values]
    path.write_text("\n".join(rows) + "\n")
    return path


def test_stats_ttest(tmp_path, capsys):
    csv = write_csv(tmp_path / "s.csv", {"a": [1.0, 2.0, 3.0], "b": [1.0, 2.0, 3.0]})
    out = tmp_path / "report.json"
    assert main.main(["stats", "--kind", "ttest", "--csv", str(csv), "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("t(4) = 0.00, p = 1")
    assert json.loads(out.read_text())["ttest"]["p"] == 1.0


def test_stats_anova_with_filter(tmp_path):
    groups = {f"L{k}": [0.001 * k + 0.0001 * (i % 7) for i in range(160)] for k in range(5)}
    csv = write_csv(tmp_path / "s.csv", groups)
    with csv.open("a") as f:
        f.write("L0,9.0,inter\nL0,9.5,inter\n")
    out = tmp_path / "report.json"
    assert main.main(["stats", "--kind", "anova", "--csv", str(csv), "--out", str(out),
                      "--where", "region=intra"]) == 0
    anova = json.loads(out.read_text())["anova"]
    assert (anova["df_between"], anova["df_within"]) == (4, 795)


def test_stats_pairwise(tmp_path, capsys):
    csv = write_csv(tmp_path / "s.csv", {"a": [1.0, 1.1, 0.9], "b": [5.0, 5.1, 4.9], "c": [1.0, 1.2, 0.8]})
    assert main.main(["stats", "--kind", "pairwise", "--csv", str(csv), "--out", str(tmp_path / "r.json")]) == 0
    assert len(json.loads((tmp_path / "r.json").read_text())["pairwise"]) == 3


@pytest.mark.parametrize("kind,groups", [
    ("anova", {"a": [2.0, 2.0], "b": [2.0, 2.0]}),
    ("ttest", {"a": [1.0, 2.0], "b": [1.0, 2.0], "c": [1.0, 2.0]}),
])
def test_stats_errors(tmp_path, kind, groups):
    csv = write_csv(tmp_path / "s.csv", groups)
    assert main.main(["stats", "--kind", kind, "--csv", str(csv), "--out", str(tmp_path / "r.json")]) == 2
