"""Command-line surface: batch robustness runs and benchmark tables.

Four subcommands share one structured JSON report format:

* ``exact``  -- exact minimum perturbation per query (1-NN; or the LP
  pipeline when ``--norm linf/l1``)
* ``verify`` -- certified lower bound per query for any odd K
* ``attack`` -- one upper-bound method (``qp``, ``qp-greedy``, ``naive``,
  ``mean``)
* ``bench``  -- several methods over the same query sample, emitted as a
  comparison table with a built-in bound-ordering self check

Exit codes: 0 ok, 2 bad configuration, 3 I/O or data format problem,
4 solver failure, 5 internal certification violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import attack as attack_mod
from .attack import CertificateKind, PerturbationCertificate
from .data import Dataset, Query, TieRule, knn_predict, load_csv, load_queries
from .errors import CertificationError, DataFormatError, KnnRobustError, SolverError
from .lp import exact_1nn_lp
from .qp_solver import SolverConfig
from .verify import verify_knn

SCHEMA_VERSION = 1
_ORDER_TOL = 1e-7

ATTACK_METHODS = ("qp", "qp-greedy", "naive", "mean")
_BENCH_1NN = ("exact", "verifier", "qp-1", "qp-10", "qp-greedy", "naive-1", "naive-10", "mean")
_BENCH_KNN = ("verifier", "qp-greedy", "naive-1", "mean")


@dataclass(frozen=True)
class RunConfig:
    command: str
    data_path: str
    query_path: str
    k: int = 1
    norm: str = "l2"
    method: str = "qp-greedy"
    m: int = 1
    n_scr: int = 8
    tolerance: float = 1e-8
    workers: int = 1
    seed: int = 0
    output_path: str | None = None
    sample: int = 100
    repeats: int = 1
    emit_deltas: bool = False
    omit_timing: bool = False
    screening: bool = True
    sorting: bool = True
    has_header: bool = False
    methods: tuple[str, ...] | None = None
    nscr_sweep: tuple[int, ...] | None = None
    table_csv: str | None = None
    inflation: float = 1e-9

    def __post_init__(self) -> None:
        if self.command not in ("exact", "verify", "attack", "bench"):
            raise ValueError(f"unknown command {self.command!r}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and >= 1, got {self.k}")
        if self.norm not in ("l2", "linf", "l1"):
            raise ValueError(f"norm must be l2, linf or l1, got {self.norm!r}")
        if self.command == "attack" and self.method not in ATTACK_METHODS:
            raise ValueError(f"method must be one of {ATTACK_METHODS}, got {self.method!r}")
        if self.m < 1 or self.n_scr < 1 or self.workers < 1 or self.repeats < 1:
            raise ValueError("m, n_scr, workers and repeats must all be >= 1")
        if self.sample < 1:
            raise ValueError("sample must be >= 1")
        if self.command == "exact" and self.k != 1:
            raise ValueError("exact computation is defined for k=1 only")
        if self.command != "exact" and self.norm != "l2":
            raise ValueError("--norm linf/l1 applies to the exact command only")
        if self.command == "attack" and self.method == "qp" and self.k != 1:
            raise ValueError("the qp (top-m) attack is defined for k=1 only")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tolerance=self.tolerance, screening_enabled=self.screening)

    def tie_rule(self) -> TieRule:
        return TieRule(inflation=self.inflation)


@dataclass
class RobustnessReport:
    """Per-query records plus aggregate statistics; JSON round-trippable."""

    command: str
    config: dict
    queries: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    table: list = field(default_factory=list)
    sweep: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": self.config,
            "queries": self.queries,
            "aggregates": self.aggregates,
        }
        if self.table:
            out["table"] = self.table
        if self.sweep:
            out["sweep"] = self.sweep
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "RobustnessReport":
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise DataFormatError(f"unsupported schema_version {payload.get('schema_version')!r}")
        return cls(
            command=payload["command"],
            config=payload["config"],
            queries=payload["queries"],
            aggregates=payload["aggregates"],
            table=payload.get("table", []),
            sweep=payload.get("sweep", []),
        )


def _certificate_record(index: int, q: Query, predicted: int,
                        cert: PerturbationCertificate, cfg: RunConfig) -> dict:
    stats = asdict(cert.stats)
    if cfg.omit_timing:
        stats.pop("wall_time")
    record = {
        "query_index": index,
        "true_label": q.true_label,
        "predicted_label": predicted,
        "epsilon": cert.epsilon,
        "kind": cert.kind.value,
        "method": cert.method,
        "stats": stats,
    }
    if cfg.emit_deltas and cert.delta is not None:
        record["delta"] = [float(v) for v in cert.delta]
    return record


def _run_method(ds: Dataset, q: Query, method: str, cfg: RunConfig) -> PerturbationCertificate:
    solver = cfg.solver_config()
    tie = cfg.tie_rule()
    if method == "exact":
        if cfg.norm == "l2":
            return attack_mod.exact_1nn(ds, q, solver, n_scr=cfg.n_scr,
                                        sort_candidates=cfg.sorting, tie=tie)
        return exact_1nn_lp(ds, q, cfg.norm, tie=tie)
    if method == "verifier":
        res = verify_knn(ds, q, cfg.k, tie)
        return PerturbationCertificate(
            delta=None, epsilon=res.epsilon_lower, kind=CertificateKind.LOWER_BOUND,
            method="verifier", misclassified=res.misclassified,
        )
    if method.startswith("qp-") and method[3:].isdigit():
        return attack_mod.qp_top_m(ds, q, int(method[3:]), solver, n_scr=cfg.n_scr, tie=tie)
    if method == "qp":
        return attack_mod.qp_top_m(ds, q, cfg.m, solver, n_scr=cfg.n_scr, tie=tie)
    if method == "qp-greedy":
        return attack_mod.qp_greedy_knn(ds, q, cfg.k, solver, tie=tie)
    if method.startswith("naive-") and method[6:].isdigit():
        return attack_mod.naive_attack(ds, q, cfg.k, int(method[6:]), tie=tie)
    if method == "naive":
        return attack_mod.naive_attack(ds, q, cfg.k, cfg.m, tie=tie)
    if method == "mean":
        return attack_mod.mean_attack(ds, q, cfg.k, tie=tie)
    raise ValueError(f"unknown method {method!r}")


def _sample_queries(ds: Dataset, queries: list[Query], cfg: RunConfig) -> list[tuple[int, Query]]:
    """Seeded uniform sample of correctly classified queries, index order."""
    tie = cfg.tie_rule()
    correct = [
        (i, q) for i, q in enumerate(queries)
        if q.z.size == ds.d
        and knn_predict(ds, q.z, cfg.k, tie, true_label=q.true_label) == q.true_label
    ]
    if any(q.z.size != ds.d for q in queries):
        raise DataFormatError("query dimension does not match the dataset")
    if len(correct) > cfg.sample:
        rng = np.random.default_rng(cfg.seed)
        chosen = rng.choice(len(correct), size=cfg.sample, replace=False)
        correct = [correct[i] for i in sorted(chosen)]
    return correct


def _evaluate(ds: Dataset, sample: list[tuple[int, Query]], method: str,
              cfg: RunConfig) -> list[tuple[int, Query, PerturbationCertificate]]:
    def work(item):
        index, q = item
        return index, q, _run_method(ds, q, method, cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(work, sample))
    return [work(item) for item in sample]


def _aggregates(results, cfg: RunConfig) -> dict:
    eps = [cert.epsilon for _, _, cert in results if not cert.misclassified]
    built = [cert.stats.subproblems_built for _, _, cert in results]
    solved = [cert.stats.subproblems_solved for _, _, cert in results]
    screened = [cert.stats.subproblems_screened for _, _, cert in results]
    agg = {
        "count": len(results),
        "mean_epsilon": float(np.mean(eps)) if eps else None,
        "mean_subproblems_built": float(np.mean(built)) if built else None,
        "mean_subproblems_solved": float(np.mean(solved)) if solved else None,
        "mean_subproblems_screened": float(np.mean(screened)) if screened else None,
    }
    if not cfg.omit_timing:
        agg["total_wall_time"] = float(sum(cert.stats.wall_time for _, _, cert in results))
    return agg


def _config_echo(cfg: RunConfig) -> dict:
    echo = asdict(cfg)
    echo["methods"] = list(cfg.methods) if cfg.methods else None
    echo["nscr_sweep"] = list(cfg.nscr_sweep) if cfg.nscr_sweep else None
    return echo


def run(cfg: RunConfig) -> RobustnessReport:
    """Execute a non-bench command and assemble its report."""
    ds = load_csv(cfg.data_path, cfg.has_header)
    queries = load_queries(cfg.query_path, cfg.has_header)
    sample = _sample_queries(ds, queries, cfg)
    method = {"exact": "exact", "verify": "verifier", "attack": cfg.method}[cfg.command]
    results = _evaluate(ds, sample, method, cfg)
    tie = cfg.tie_rule()
    report = RobustnessReport(command=cfg.command, config=_config_echo(cfg))
    for index, q, cert in results:
        predicted = knn_predict(ds, q.z, cfg.k, tie, true_label=q.true_label)
        report.queries.append(_certificate_record(index, q, predicted, cert, cfg))
    report.aggregates = _aggregates(results, cfg)
    return report


def _check_bound_ordering(per_method: dict[str, list], methods: list[str]) -> None:
    """Abort with a certification error if any certified ordering is violated.

    Lower bounds must not exceed any upper bound or the exact value; the
    exact value must not exceed any upper bound; and qp-10 <= qp-1.
    """
    def eps_by_query(name):
        return {rec[0]: rec[2].epsilon for rec in per_method[name]}

    kinds = {name: {rec[0]: rec[2].kind for rec in per_method[name]} for name in methods}
    for low_name in methods:
        for high_name in methods:
            if low_name == high_name:
                continue
            lows, highs = eps_by_query(low_name), eps_by_query(high_name)
            for qi in lows.keys() & highs.keys():
                lo_kind = kinds[low_name][qi]
                hi_kind = kinds[high_name][qi]
                ordered = (
                    (lo_kind is CertificateKind.LOWER_BOUND and hi_kind is not CertificateKind.LOWER_BOUND)
                    or (lo_kind is CertificateKind.EXACT and hi_kind is CertificateKind.UPPER_BOUND)
                )
                if ordered and lows[qi] > highs[qi] + _ORDER_TOL * (1.0 + abs(highs[qi])):
                    raise CertificationError(
                        f"bound ordering violated on query {qi}: "
                        f"{low_name}={lows[qi]:.9g} > {high_name}={highs[qi]:.9g}"
                    )
    if "qp-1" in per_method and "qp-10" in per_method:
        one, ten = eps_by_query("qp-1"), eps_by_query("qp-10")
        for qi in one.keys() & ten.keys():
            if ten[qi] > one[qi] + _ORDER_TOL * (1.0 + abs(one[qi])):
                raise CertificationError(
                    f"bound ordering violated on query {qi}: qp-10 > qp-1"
                )


def bench(cfg: RunConfig) -> RobustnessReport:
    """Run the comparison table over one shared query sample."""
    ds = load_csv(cfg.data_path, cfg.has_header)
    queries = load_queries(cfg.query_path, cfg.has_header)
    sample = _sample_queries(ds, queries, cfg)
    methods = list(cfg.methods) if cfg.methods else list(
        _BENCH_1NN if cfg.k == 1 else _BENCH_KNN
    )

    report = RobustnessReport(command="bench", config=_config_echo(cfg))
    per_method = {}
    for method in methods:
        runtimes = []
        for _ in range(cfg.repeats):
            started = time.perf_counter()
            results = _evaluate(ds, sample, method, cfg)
            runtimes.append(time.perf_counter() - started)
        per_method[method] = results
        agg = _aggregates(results, cfg)
        row = {
            "method": method,
            "mean_epsilon": agg["mean_epsilon"],
            "count": agg["count"],
            "mean_subproblems_built": agg["mean_subproblems_built"],
            "mean_subproblems_solved": agg["mean_subproblems_solved"],
            "mean_subproblems_screened": agg["mean_subproblems_screened"],
        }
        if not cfg.omit_timing:
            row["runtime_seconds"] = float(np.mean(runtimes))
        report.table.append(row)
        for index, q, cert in results:
            predicted = knn_predict(ds, q.z, cfg.k, cfg.tie_rule(), true_label=q.true_label)
            report.queries.append(_certificate_record(index, q, predicted, cert, cfg))
    _check_bound_ordering(per_method, methods)

    if cfg.nscr_sweep:
        for n_scr in cfg.nscr_sweep:
            sweep_cfg = replace(cfg, n_scr=n_scr)
            started = time.perf_counter()
            results = _evaluate(ds, sample, "exact", sweep_cfg)
            elapsed = time.perf_counter() - started
            agg = _aggregates(results, cfg)
            entry = {
                "n_scr": n_scr,
                "mean_subproblems_built": agg["mean_subproblems_built"],
                "mean_subproblems_solved": agg["mean_subproblems_solved"],
                "mean_subproblems_screened": agg["mean_subproblems_screened"],
            }
            if not cfg.omit_timing:
                entry["runtime_seconds"] = elapsed
            report.sweep.append(entry)
    report.aggregates = {"count": len(sample)}
    return report


def _format_table(report: RobustnessReport) -> str:
    lines = [f"{'method':>12}  {'mean epsilon':>14}  {'solved':>8}  {'runtime (s)':>12}"]
    for row in report.table:
        eps = f"{row['mean_epsilon']:.6g}" if row["mean_epsilon"] is not None else "-"
        solved = f"{row['mean_subproblems_solved']:.3g}" if row["mean_subproblems_solved"] is not None else "-"
        rt = f"{row['runtime_seconds']:.3f}" if "runtime_seconds" in row else "-"
        lines.append(f"{row['method']:>12}  {eps:>14}  {solved:>8}  {rt:>12}")
    return "\n".join(lines)


def _write_outputs(report: RobustnessReport, cfg: RunConfig) -> None:
    payload = report.to_json()
    if cfg.output_path:
        with open(cfg.output_path, "w", encoding="utf-8") as handle:
            handle.write(payload)
    if cfg.command == "bench":
        print(_format_table(report))
        if cfg.table_csv:
            cols = ["method", "mean_epsilon", "count", "mean_subproblems_built",
                    "mean_subproblems_solved", "mean_subproblems_screened"]
            if not cfg.omit_timing:
                cols.append("runtime_seconds")
            with open(cfg.table_csv, "w", encoding="utf-8") as handle:
                handle.write(",".join(cols) + "\n")
                for row in report.table:
                    handle.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
    else:
        agg = report.aggregates
        eps = f"{agg['mean_epsilon']:.6g}" if agg["mean_epsilon"] is not None else "-"
        print(f"{cfg.command}: {agg['count']} queries, mean epsilon {eps}")
    if not cfg.output_path:
        print(payload, end="")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knnrobust",
        description="Minimum adversarial perturbations and certified bounds for K-NN",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("exact", "verify", "attack", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--data", "--data-path", dest="data_path", required=True)
        p.add_argument("--queries", "--query-path", dest="query_path", required=True)
        p.add_argument("--k", type=int, default=1)
        p.add_argument("--norm", choices=("l2", "linf", "l1"), default="l2")
        p.add_argument("--m", type=int, default=1,
                       help="truncation count for qp, tries for naive")
        p.add_argument("--n-scr", dest="n_scr", type=int, default=8)
        p.add_argument("--tolerance", type=float, default=1e-8)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output", "--output-path", dest="output_path", default=None)
        p.add_argument("--sample", type=int, default=100)
        p.add_argument("--repeats", type=int, default=1)
        p.add_argument("--emit-deltas", action="store_true")
        p.add_argument("--omit-timing", action="store_true")
        p.add_argument("--no-screening", dest="screening", action="store_false")
        p.add_argument("--no-sorting", dest="sorting", action="store_false")
        p.add_argument("--has-header", action="store_true")
        p.add_argument("--inflation", type=float, default=1e-9)
        if name == "attack":
            p.add_argument("--method", choices=ATTACK_METHODS, required=True)
        if name == "bench":
            p.add_argument("--methods", default=None,
                           help="comma list of table rows (default depends on k)")
            p.add_argument("--nscr-sweep", dest="nscr_sweep", default=None,
                           help="comma list of n_scr values to sweep")
            p.add_argument("--table-csv", dest="table_csv", default=None)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    methods = tuple(s.strip() for s in args.methods.split(",")) \
        if getattr(args, "methods", None) else None
    sweep = tuple(int(s) for s in args.nscr_sweep.split(",")) \
        if getattr(args, "nscr_sweep", None) else None
    return RunConfig(
        command=args.command,
        data_path=args.data_path,
        query_path=args.query_path,
        k=args.k,
        norm=args.norm,
        method=getattr(args, "method", "qp-greedy") or "qp-greedy",
        m=args.m,
        n_scr=args.n_scr,
        tolerance=args.tolerance,
        workers=args.workers,
        seed=args.seed,
        output_path=args.output_path,
        sample=args.sample,
        repeats=args.repeats,
        emit_deltas=args.emit_deltas,
        omit_timing=args.omit_timing,
        screening=args.screening,
        sorting=args.sorting,
        has_header=args.has_header,
        methods=methods,
        nscr_sweep=sweep,
        table_csv=getattr(args, "table_csv", None),
        inflation=args.inflation,
    )


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        report = bench(cfg) if cfg.command == "bench" else run(cfg)
        _write_outputs(report, cfg)
    except CertificationError as exc:
        print(f"certification violation: {exc}", file=sys.stderr)
        return 5
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4
    except (DataFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except KnnRobustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
