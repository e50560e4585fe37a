import json

import numpy as np
import pytest

from knnrobust.cli import RobustnessReport, RunConfig, bench, main, run


@pytest.fixture
def fix_files(tmp_path):
    files = {}
    (tmp_path / "fixA.csv").write_text("1,-1\n2,3\n")
    (tmp_path / "fixA_query.csv").write_text("1,0\n")
    (tmp_path / "fixB.csv").write_text("1,1,1\n2,2,0\n")
    (tmp_path / "fixB_query.csv").write_text("1,0,0\n")
    (tmp_path / "fixC.csv").write_text("1,-0.5\n1,-1\n2,2\n2,3\n2,4\n")
    (tmp_path / "fixC_query.csv").write_text("1,0\n")
    for name in ("fixA", "fixB", "fixC"):
        files[name] = str(tmp_path / f"{name}.csv")
        files[name + "_q"] = str(tmp_path / f"{name}_query.csv")
    files["out"] = str(tmp_path / "report.json")
    files["dir"] = tmp_path
    return files


class TestRun:
    def test_exact_fix_a(self, fix_files):
        report = run(RunConfig(command="exact", data_path=fix_files["fixA"],
                               query_path=fix_files["fixA_q"], k=1))
        rec = report.queries[0]
        assert rec["epsilon"] == pytest.approx(1.0, abs=1e-9)
        assert rec["kind"] == "exact"
        assert report.aggregates["mean_epsilon"] == pytest.approx(1.0, abs=1e-9)

    def test_verify_k3_fix_c(self, fix_files):
        report = run(RunConfig(command="verify", data_path=fix_files["fixC"],
                               query_path=fix_files["fixC_q"], k=3))
        assert report.queries[0]["epsilon"] == pytest.approx(1.0, abs=1e-6)
        assert report.queries[0]["kind"] == "lower_bound"

    def test_attack_naive_fix_b(self, fix_files):
        report = run(RunConfig(command="attack", data_path=fix_files["fixB"],
                               query_path=fix_files["fixB_q"], k=1,
                               method="naive", m=1))
        rec = report.queries[0]
        assert rec["epsilon"] == pytest.approx(1.0, abs=1e-6)
        assert rec["kind"] == "upper_bound"

    def test_exact_linf_norm(self, fix_files):
        report = run(RunConfig(command="exact", data_path=fix_files["fixB"],
                               query_path=fix_files["fixB_q"], norm="linf"))
        assert report.queries[0]["epsilon"] == pytest.approx(0.5, abs=1e-9)

    def test_round_trip(self, fix_files):
        report = run(RunConfig(command="exact", data_path=fix_files["fixA"],
                               query_path=fix_files["fixA_q"]))
        payload = json.loads(report.to_json())
        again = RobustnessReport.from_dict(payload)
        assert again.to_json() == report.to_json()

    def test_deterministic_without_timing(self, fix_files):
        cfg = RunConfig(command="exact", data_path=fix_files["fixA"],
                        query_path=fix_files["fixA_q"], omit_timing=True, seed=3)
        a = run(cfg).to_json()
        b = run(cfg).to_json()
        assert a == b

    def test_workers_match_serial(self, fix_files, tmp_path):
        rng = np.random.default_rng(5)
        cells = rng.choice(121, size=28, replace=False)
        pts = np.stack(np.unravel_index(cells, (11, 11)), axis=1) - 5
        data = tmp_path / "multi.csv"
        rows = ["%d,%.1f,%.1f" % (1 + i % 2, *pts[i]) for i in range(20)]
        data.write_text("\n".join(rows) + "\n")
        queries = tmp_path / "multi_q.csv"
        queries.write_text("\n".join("%d,%.1f,%.1f" % (1 + i % 2, *pts[20 + i])
                                     for i in range(8)) + "\n")
        base = dict(command="exact", data_path=str(data), query_path=str(queries),
                    omit_timing=True)
        serial = run(RunConfig(**base, workers=1)).to_dict()
        threaded = run(RunConfig(**base, workers=4)).to_dict()
        serial.pop("config")
        threaded.pop("config")
        assert serial == threaded

    def test_emit_deltas(self, fix_files):
        report = run(RunConfig(command="exact", data_path=fix_files["fixA"],
                               query_path=fix_files["fixA_q"], emit_deltas=True))
        assert report.queries[0]["delta"] == pytest.approx([1.0], abs=1e-8)


class TestBench:
    def test_fix_a_table(self, fix_files):
        cfg = RunConfig(command="bench", data_path=fix_files["fixA"],
                        query_path=fix_files["fixA_q"], k=1,
                        methods=("exact", "verifier", "naive-1"))
        report = bench(cfg)
        values = {row["method"]: row["mean_epsilon"] for row in report.table}
        assert values["exact"] == pytest.approx(1.0, abs=1e-6)
        assert values["verifier"] == pytest.approx(1.0, abs=1e-6)
        assert values["naive-1"] == pytest.approx(1.0, abs=1e-6)

    def test_bound_ordering_enforced(self, fix_files):
        cfg = RunConfig(command="bench", data_path=fix_files["fixC"],
                        query_path=fix_files["fixC_q"], k=1,
                        methods=("exact", "verifier", "qp-1", "qp-10", "naive-1", "mean"))
        report = bench(cfg)
        values = {row["method"]: row["mean_epsilon"] for row in report.table}
        assert values["verifier"] <= values["exact"] + 1e-9
        assert values["exact"] <= values["qp-10"] + 1e-9
        assert values["qp-10"] <= values["qp-1"] + 1e-9

    def test_nscr_sweep_emitted(self, fix_files):
        cfg = RunConfig(command="bench", data_path=fix_files["fixC"],
                        query_path=fix_files["fixC_q"], k=1,
                        methods=("exact",), nscr_sweep=(1, 2, 8))
        report = bench(cfg)
        assert [row["n_scr"] for row in report.sweep] == [1, 2, 8]

    def test_knn_default_rows(self, fix_files):
        cfg = RunConfig(command="bench", data_path=fix_files["fixC"],
                        query_path=fix_files["fixC_q"], k=3)
        report = bench(cfg)
        assert {row["method"] for row in report.table} == {
            "verifier", "qp-greedy", "naive-1", "mean"
        }


class TestMainExitCodes:
    def test_ok(self, fix_files, capsys):
        code = main(["exact", "--data", fix_files["fixA"],
                     "--queries", fix_files["fixA_q"], "--k", "1",
                     "--output", fix_files["out"]])
        assert code == 0
        payload = json.loads(open(fix_files["out"]).read())
        assert payload["schema_version"] == 1
        assert payload["queries"][0]["epsilon"] == pytest.approx(1.0)

    def test_table_csv_written(self, fix_files, capsys):
        table = str(fix_files["dir"] / "table.csv")
        code = main(["bench", "--data", fix_files["fixA"],
                     "--queries", fix_files["fixA_q"],
                     "--methods", "exact,verifier",
                     "--table-csv", table])
        assert code == 0
        lines = open(table).read().strip().splitlines()
        assert lines[0].startswith("method,")
        assert len(lines) == 3

    def test_config_error_exit_2(self, fix_files, capsys):
        code = main(["exact", "--data", fix_files["fixA"],
                     "--queries", fix_files["fixA_q"], "--k", "2"])
        assert code == 2

    def test_io_error_exit_3(self, fix_files, capsys):
        code = main(["exact", "--data", str(fix_files["dir"] / "nope.csv"),
                     "--queries", fix_files["fixA_q"]])
        assert code == 3

    def test_even_k_verify_error(self, fix_files, capsys):
        code = main(["verify", "--data", fix_files["fixC"],
                     "--queries", fix_files["fixC_q"], "--k", "4"])
        assert code == 2

    def test_exact_k3_rejected(self, fix_files, capsys):
        code = main(["exact", "--data", fix_files["fixC"],
                     "--queries", fix_files["fixC_q"], "--k", "3"])
        assert code == 2
