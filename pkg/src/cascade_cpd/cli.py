"""Command-line front end: simulate, detect, bench, calibrate, convert."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from .bench import (
    CSV_FIELDS,
    ExperimentSpec,
    MetricReport,
    SpecError,
    Scenario,
    build_graph,
    calibrate_threshold,
    make_bank,
    make_detector,
    run_experiment,
)
from .cascade_sim import (
    PostChangeParams,
    gen_measurements,
    read_cascade_csv,
    read_panel_csv,
    sample_cascade,
    write_cascade_csv,
    write_panel_csv,
)
from .detector import CascadeDetector, DetectorConfig
from .topology import (
    Graph,
    InfluenceMatrix,
    TopologyError,
    emit_edge_list,
    from_json,
    load_edge_list,
    parse_matpower_branches,
    to_json,
    uniform_alpha,
)


class CliError(Exception):
    pass


def load_graph(path: str, alpha0: float | None) -> tuple[Graph, InfluenceMatrix]:
    """Edge-list CSV, MATPOWER ``.m`` or canonical ``.json``.

    ``alpha0`` replaces any stored rates with a uniform rate; MATPOWER input
    carries no rates and requires it.
    """
    text = Path(path).read_text()
    if path.endswith(".m"):
        graph, _ = parse_matpower_branches(text)
        if alpha0 is None:
            raise CliError("MATPOWER input needs --alpha0")
        return graph, uniform_alpha(graph, alpha0)
    graph, alpha = from_json(text) if path.endswith(".json") else load_edge_list(text)
    if alpha0 is not None:
        alpha = uniform_alpha(graph, alpha0)
    return graph, alpha


def _config(args) -> DetectorConfig:
    cfg = DetectorConfig.from_file(args.config) if args.config else DetectorConfig()
    overrides = {k: getattr(args, k) for k in ("L", "m", "P", "q", "l1", "eta") if getattr(args, k, None) is not None}
    if getattr(args, "threshold", None) is not None:
        overrides["b"] = args.threshold
    return cfg.replace(**overrides) if overrides else cfg


def cmd_simulate(args) -> int:
    graph, alpha = load_graph(args.graph, args.alpha0)
    rng = np.random.default_rng(args.seed)
    if not 1 <= args.seed_node <= graph.n:
        raise CliError(f"--seed-node must be in 1..{graph.n}")
    horizon = args.horizon if args.horizon is not None else float(args.T)
    tau = sample_cascade(graph, alpha, args.seed_node - 1, args.seed_time, horizon, rng)
    panel = gen_measurements(tau, PostChangeParams.uniform(graph.n, args.mu, args.sigma), args.T, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cascade.csv", "w", newline="") as fh:
        write_cascade_csv(tau, fh)
    with open(out / "panel.csv", "w", newline="") as fh:
        write_panel_csv(panel, fh)
    print(f"wrote {out / 'cascade.csv'} and {out / 'panel.csv'}", file=sys.stderr)
    return 0


def _tick_lines(src: TextIO, n: int) -> Iterator[np.ndarray]:
    """Yield one length-n vector per input line.

    Lines are either ``x_1..x_n`` or ``t,x_1..x_n``; a header starting with
    ``t`` and ``#`` comments are skipped.
    """
    for lineno, raw in enumerate(src, start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("t,") or line == "t":
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError:
            raise CliError(f"line {lineno}: malformed tick line") from None
        if len(vals) == n + 1:
            vals = vals[1:]
        if len(vals) != n:
            raise CliError(f"line {lineno}: expected {n} values, got {len(vals)} (width mismatch)")
        yield np.asarray(vals)


def cmd_detect(args) -> int:
    graph, alpha = load_graph(args.graph, args.alpha0)
    cfg = _config(args)
    cfg.check_graph(graph.n)
    det = CascadeDetector(graph, alpha, cfg, np.random.default_rng(args.seed))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    src = sys.stdin if args.panel == "-" else open(args.panel)
    try:
        out.write(f"# config: {cfg.to_json()}\n")
        out.write("t,S_eta,alarm\n")
        for x_t in _tick_lines(src, graph.n):
            s = det.update(x_t)
            if s is None:
                continue
            alarm = s > cfg.b
            out.write(f"{det.tick},{s!r},{int(alarm)}\n")
            out.flush()
            if alarm:
                path = det.last.alternative.best_path
                nodes = " ".join(f"{x + 1}@{t}" for x, t in zip(path.nodes, path.ticks))
                print(f"ALARM at tick {det.tick}: S={s:.4f} path={nodes}", file=sys.stderr)
                return 0
        print(f"no alarm; censored at tick {det.tick}", file=sys.stderr)
        return 0
    finally:
        if src is not sys.stdin:
            src.close()
        if out is not sys.stdout:
            out.close()


def _load_spec(args) -> ExperimentSpec:
    doc = json.loads(Path(args.spec).read_text()) if args.spec != "-" else json.load(sys.stdin)
    if not isinstance(doc, dict):
        raise SpecError("experiment spec must be a JSON object")
    for key in ("trials", "seed", "jobs"):
        if getattr(args, key, None) is not None:
            doc[key] = getattr(args, key)
    return ExperimentSpec.from_mapping(doc)


def cmd_bench(args) -> int:
    spec = _load_spec(args)
    report = run_experiment(spec)
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_calibrate(args) -> int:
    spec = _load_spec(args)
    graph = build_graph(spec.graph)
    alpha = uniform_alpha(graph, spec.alpha0)
    params = PostChangeParams.uniform(graph.n, spec.mu, spec.sigma)
    h0 = Scenario("noise") if spec.h0 == "noise" else Scenario("contaminated", n_affected=spec.detector.eta - 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "target_arl", "threshold", "arl", "arl_se", "censored_frac"])
    for method in spec.methods:
        bank = make_bank(lambda rng, m=method: make_detector(m, graph, alpha, spec.detector, rng),
                         graph, alpha, params, h0, spec.trials, spec.seed, spec.run_cap, spec.jobs)
        for target in spec.target_arl:
            b = calibrate_threshold(bank, target, spec.tol)
            est = bank.arl(b)
            w.writerow([method.label, repr(target), repr(b), repr(est.mean), repr(est.se), repr(est.censored_frac)])
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _csv_to_json(text: str) -> dict:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    body = "\n".join(lines)
    if header == ["node", "tau"]:
        tau = read_cascade_csv(io.StringIO(body))
        return {"kind": "cascade", "tau": [None if math.isinf(v) else v for v in tau]}
    if header[0] == "t" and all(h.startswith("x_") for h in header[1:]):
        ticks, panel = read_panel_csv(io.StringIO(body))
        return {"kind": "panel", "ticks": ticks.tolist(), "x": panel.tolist()}
    if header == ["t", "S_eta", "alarm"]:
        rows = list(csv.DictReader(io.StringIO(body)))
        return {"kind": "trace", "t": [int(r["t"]) for r in rows],
                "S_eta": [float(r["S_eta"]) for r in rows], "alarm": [int(r["alarm"]) for r in rows]}
    if header == CSV_FIELDS:
        rep = MetricReport.from_csv(body)
        return {"kind": "results", "rows": [r.__dict__ for r in rep.rows]}
    if header[:3] == ["method", "target_arl", "threshold"]:
        return {"kind": "calibration", "rows": list(csv.DictReader(io.StringIO(body)))}
    raise CliError(f"unrecognised CSV header: {','.join(header)}")


def cmd_convert(args) -> int:
    path = args.input
    text = Path(path).read_text()
    first = next((ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")), "")
    is_graph = path.endswith((".m", ".json")) or (first and first[0].isdigit())
    if is_graph:
        graph, alpha = load_graph(path, args.alpha0)
        result = to_json(graph, alpha) + "\n" if args.to == "json" else emit_edge_list(graph, alpha)
    else:
        if args.to != "json":
            raise CliError("CSV artifacts convert to json only")
        result = json.dumps(_csv_to_json(text), sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(result)
    else:
        sys.stdout.write(result)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascade-cpd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample a cascade and its measurement panel")
    s.add_argument("--graph", required=True)
    s.add_argument("--alpha0", type=float)
    s.add_argument("--seed-node", type=int, default=1, help="1-based")
    s.add_argument("--seed-time", type=float, default=1.0)
    s.add_argument("--horizon", type=float)
    s.add_argument("--T", type=int, default=200)
    s.add_argument("--mu", type=float, default=1.0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("detect", help="run the detector on a panel file or stdin")
    d.add_argument("--panel", default="-", help="panel CSV path or '-' for stdin")
    d.add_argument("--graph", required=True)
    d.add_argument("--alpha0", type=float)
    d.add_argument("--config")
    d.add_argument("--threshold", type=float)
    for name, typ in (("L", int), ("m", int), ("P", int), ("q", float), ("l1", float), ("eta", int)):
        d.add_argument(f"--{name}", type=typ)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_detect)

    for name, func, hlp in (("bench", cmd_bench, "run an experiment spec"),
                            ("calibrate", cmd_calibrate, "calibrate thresholds to target ARLs")):
        b = sub.add_parser(name, help=hlp)
        b.add_argument("spec")
        b.add_argument("--trials", type=int)
        b.add_argument("--seed", type=int)
        b.add_argument("--jobs", type=int)
        b.add_argument("--out")
        b.set_defaults(func=func)

    c = sub.add_parser("convert", help="convert graphs or re-ingest CSV artifacts")
    c.add_argument("input")
    c.add_argument("--to", choices=["json", "edgelist"], default="json")
    c.add_argument("--alpha0", type=float)
    c.add_argument("--out")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, SpecError, TopologyError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
