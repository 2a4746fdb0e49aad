"""Command-line entry point: ``hybridsim <command> --network FILE [options]``.

Exit codes: 0 success, 2 usage error, 3 network parse error, 4 runtime
simulation error.  Failures print one line ``error: <category>: <message>``
to stderr.  Every run writes ``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, bundled_network_path
from .errors import HybridSimError, NetworkSyntaxError, NetworkValidationError
from .exact import ssa_simulate
from .harness import (
    convergence_study,
    histogram,
    ks_two_sample,
    resolve_partition,
    run_ensemble,
    speedup_benchmark,
)
from .hybrid import HybridConfig, hybrid_simulate
from .network import (
    combinatorial_weight,
    diffusion_validity,
    parse_network,
    partition_reactions,
    serialize_network,
)
from .streams import HybridStreams, ssa_generator
from .trajectory import sample_times

COMMANDS = ("ssa", "hybrid", "compare", "converge", "bench", "check")
EXIT_USAGE, EXIT_PARSE, EXIT_RUNTIME = 2, 3, 4
DEFAULT_BENCH_H = (0.1, 0.5, 1.0, 2.0)


class UsageError(Exception):
    pass


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridsim", description="Hybrid jump-diffusion simulation of reaction networks.")
    p.add_argument("--version", action="version", version=f"hybridsim {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--network", required=True, help="network file, or the name of a bundled example")
    p.add_argument("--T", dest="T", type=_positive(float), default=2000.0, help="time horizon")
    p.add_argument("--h", type=_positive(float), nargs="+", default=None,
                   help="step size (bench: list of step sizes; converge: finest step)")
    p.add_argument("--lambda-max", type=_positive(float), default=None, help="reference jump intensity")
    p.add_argument("--lambda-policy", choices=("fail", "retry"), default="fail")
    p.add_argument("--replicates", type=_positive(int), default=1)
    p.add_argument("--seed", type=int, default=None, help="master seed (fallback: $HYBRIDSIM_SEED, then 0)")
    p.add_argument("--sample-dt", type=_positive(float), default=None, help="sampling step for single runs")
    p.add_argument("--h-threshold", type=_positive(float), default=100.0, help="diffusion threshold on h_r")
    p.add_argument("--parallelism", type=_positive(int), default=1)
    p.add_argument("--levels", type=_positive(int), default=5, help="converge: number of dyadic step sizes")
    p.add_argument("--out", default="hybridsim_out", help="output directory")
    return p


def _resolve_network(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    bundled = bundled_network_path(path.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"network file not found: {arg}")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("HYBRIDSIM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"HYBRIDSIM_SEED is not an integer: {env!r}") from None


def _single_h(args) -> float:
    if args.h is None:
        return 0.1
    if len(args.h) != 1:
        raise UsageError(f"{args.command} takes a single --h value")
    return args.h[0]


def _config(args, h: float) -> HybridConfig:
    if args.lambda_max is None:
        raise UsageError(f"{args.command} needs --lambda-max")
    policy = "retry_doubled" if args.lambda_policy == "retry" else "fail"
    return HybridConfig(h=h, lambda_max=args.lambda_max, t_max=args.T, lambda_policy=policy)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _cmd_check(args, net, out: Path) -> dict:
    part = partition_reactions(net, args.h_threshold)
    s0 = net.initial_state()
    print("R1 = {" + ", ".join(part.diffusion) + "}")
    print("R_d = {" + ", ".join(part.jump) + "}")
    rows = []
    valid = {r.reaction: r.ok for r in diffusion_validity(net, part, s0, args.h_threshold)}
    for r in net.reactions:
        w = combinatorial_weight(net, r, s0)
        group = "R1" if r.id in part.diffusion else "R_d"
        flag = "" if r.id not in valid else ("  ok" if valid[r.id] else "  below threshold")
        print(f"{r.id}: {group} h_r={float(w):g}{flag}")
        rows.append({"reaction": r.id, "group": group, "h_r": float(w)})
    _write_json(out / "check.json", {"diffusion": list(part.diffusion), "jump": list(part.jump), "weights": rows})
    return {"diffusion": list(part.diffusion), "jump": list(part.jump)}


def _cmd_single(args, net, out: Path, seed: int) -> dict:
    engine = args.command
    config = _config(args, _single_h(args)) if engine == "hybrid" else None
    if args.replicates == 1:
        grid = sample_times(args.T, args.sample_dt)
        if engine == "ssa":
            traj = ssa_simulate(net, None, args.T, ssa_generator(seed, 0), sample_grid=grid)
        else:
            part = partition_reactions(net, args.h_threshold)
            traj = hybrid_simulate(net, part, None, config, HybridStreams(seed, 0), sample_grid=grid)
        traj.to_csv(out / "trajectory.csv")
        traj.diagnostics.to_json(out / "diagnostics.json")
        print(f"{engine}: wrote {len(traj)} samples to {out / 'trajectory.csv'}")
        return {"diagnostics": traj.diagnostics.to_dict()}
    res = run_ensemble(net, engine, None, args.T, args.replicates, seed, args.parallelism,
                       config=config, h_threshold=args.h_threshold)
    res.to_csv(out / f"{engine}_final.csv")
    res.write_stats(out / f"{engine}_stats.json")
    print(f"{engine}: {res.replicates} replicates in {res.wall_time:.3g} s, {len(res.failures)} failed")
    return {"stats": res.stats()}


def _cmd_compare(args, net, out: Path, seed: int) -> dict:
    config = _config(args, _single_h(args))
    ens = {}
    for engine in ("ssa", "hybrid"):
        ens[engine] = run_ensemble(net, engine, None, args.T, args.replicates, seed, args.parallelism,
                                   config=config if engine == "hybrid" else None,
                                   h_threshold=args.h_threshold)
        ens[engine].to_csv(out / f"{engine}_final.csv")
        ens[engine].write_stats(out / f"{engine}_stats.json")
    part = resolve_partition(net, "hybrid", None, args.h_threshold)
    names = [net.species_names[i] for i in net.continuous_idx] or net.species_names
    report = {}
    for name in names:
        a, b = ens["ssa"].column(name), ens["hybrid"].column(name)
        d, p = ks_two_sample(a, b)
        report[name] = {"D": d, "p_value": p}
        edges, _, _ = histogram(np.concatenate([a, b]), bins=50)
        fa = np.histogram(a, bins=edges)[0] / a.size
        fb = np.histogram(b, bins=edges)[0] / b.size
        with open(out / f"hist_{name}.csv", "w", encoding="utf-8") as fh:
            fh.write("left,right,ssa,hybrid\n")
            for i in range(fa.size):
                fh.write(f"{edges[i]:.10g},{edges[i + 1]:.10g},{fa[i]:.10g},{fb[i]:.10g}\n")
        print(f"KS {name}: D={d:.4g} p={p:.4g}")
    _write_json(out / "ks_report.json", {"partition": {"diffusion": list(part.diffusion)}, "ks": report})
    return {"ks": report}


def _cmd_converge(args, net, out: Path, seed: int) -> dict:
    h_ref = _single_h(args)
    if args.levels < 4:
        raise UsageError("converge needs --levels >= 4 to span a decade")
    h_list = [h_ref * 2 ** k for k in range(args.levels)]
    lam = args.lambda_max if args.lambda_max is not None else 1.0
    part = partition_reactions(net, args.h_threshold)
    table = convergence_study(net, part, None, args.T, h_list, args.replicates, seed, lambda_max=lam)
    table.to_csv(out / "convergence.csv")
    for h, e, n in table.rows():
        print(f"h={h:g} mse={e:.6g} n={n}")
    print(f"slope={table.slope:.4g}")
    return {"slope": table.slope, "rows": table.rows()}


def _cmd_bench(args, net, out: Path, seed: int) -> dict:
    if args.lambda_max is None:
        raise UsageError("bench needs --lambda-max")
    h_list = args.h if args.h is not None else list(DEFAULT_BENCH_H)
    policy = "retry_doubled" if args.lambda_policy == "retry" else "fail"
    table = speedup_benchmark(net, None, args.T, h_list, args.replicates, seed, args.lambda_max,
                              partition=partition_reactions(net, args.h_threshold), lambda_policy=policy)
    table.to_csv(out / "benchmark.csv")
    for h, ts, th, r in table.rows():
        print(f"h={h:g} t_ssa={ts:.4g}s t_hybrid={th:.4g}s ratio={r:.3g}")
    return {"rows": table.rows()}


def _run(args) -> dict:
    path = _resolve_network(args.network)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read network file: {exc}") from None
    net = parse_network(text)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory: {exc}") from None
    seed = _seed(args)
    manifest = {
        "version": __version__,
        "command": args.command,
        "network_path": str(path),
        "network": serialize_network(net),
        "seed": seed,
        "options": {k: v for k, v in vars(args).items() if k not in ("command", "network")},
    }
    _write_json(out / "manifest.json", manifest)
    if args.command == "check":
        result = _cmd_check(args, net, out)
    elif args.command in ("ssa", "hybrid"):
        result = _cmd_single(args, net, out, seed)
    elif args.command == "compare":
        result = _cmd_compare(args, net, out, seed)
    elif args.command == "converge":
        result = _cmd_converge(args, net, out, seed)
    else:
        result = _cmd_bench(args, net, out, seed)
    manifest["status"] = "ok"
    manifest["result"] = result
    _write_json(out / "manifest.json", manifest)
    return result


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _run(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NetworkSyntaxError, NetworkValidationError) as exc:
        print(f"error: parse: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (HybridSimError, ValueError) as exc:
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
