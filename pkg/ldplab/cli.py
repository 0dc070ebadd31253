import argparse
import logging
import math
import sys
from pathlib import Path

from ldplab.config import ConfigError, CurveSpec, EventSpec, ExperimentConfig, ProbeConfig, SpaceSpec, load_json
from ldplab.dirichlet import log_heat_kernel_matrix
from ldplab.experiment import EXIT_CONFIG, EXIT_OK, EXIT_PROBE, exit_status, run_experiment, run_probe, write_csv
from ldplab.lab import Lab
from ldplab.probes import ProbeError
from ldplab.space import save_space, validate_space
from ldplab.utils import set_threads

logger = logging.getLogger("ldplab")


def _probe(args, lab: Lab | None, kind: str, params: dict) -> int:
    probe = ProbeConfig.from_dict({"kind": kind, "id": kind, **params})
    try:
        result = run_probe(lab, probe, getattr(args, "seed", 0))
    except ProbeError as e:
        logger.error("%s", e)
        return EXIT_PROBE
    write_csv(Path(args.out), result.table)
    print(f"{kind}: {result.headline!r}" + (f" (target {result.target!r})" if result.target is not None else ""))
    for flag in result.flags:
        print(f"  {flag}")
    return EXIT_OK


def _point(value: str):
    """Vertex indices are integers, coordinates contain a dot or comma."""
    if "," in value:
        return [float(v) for v in value.split(",")]
    return float(value) if "." in value or "e" in value.lower() else int(value)


def cmd_space(args) -> int:
    if args.action == "build":
        space = SpaceSpec.load(args.config).build()
        save_space(space, args.out)
        print(f"wrote {space.n} vertices to {args.out}")
        return EXIT_OK
    report = validate_space(SpaceSpec.load(args.file).build())
    print("passed" if report.passed else "failed")
    for issue in report.issues:
        print(f"  {issue}")
    return EXIT_OK if report.passed else EXIT_PROBE


def cmd_kernel(args) -> int:
    lab = Lab.load(args.space)
    log_p, flags = log_heat_kernel_matrix(lab.cache, args.t)
    rows = [
        {"x_index": x, "y_index": y, "t": args.t, "p": math.exp(v), "log_p": v}
        for x, row in enumerate(log_p.tolist())
        for y, v in enumerate(row)
    ]
    write_csv(Path(args.out), rows)
    for flag in flags:
        print(f"  {flag}")
    return EXIT_OK


def cmd_metric(args) -> int:
    lab = Lab.load(args.space, progress_bar=True)
    if args.all:
        n = lab.space.n
        pairs = [[x, y] for x in range(n) for y in range(x + 1, n)]
    else:
        pairs = [[int(args.pair[0]), int(args.pair[1])]]
    return _probe(args, lab, "metric", {"pairs": pairs, "tol": args.tol})


def cmd_inequalities(args) -> int:
    lab = Lab.load(args.space)
    params = load_json(args.params) if args.params else {}
    return _probe(args, lab, args.kind, params)


def cmd_varadhan(args) -> int:
    lab = Lab.load(args.space)
    grid = {"t_min": args.tmin, "t_max": args.tmax, "points": args.points}
    if args.pair:
        return _probe(args, lab, "varadhan_kernel", {"x": _point(args.pair[0]), "y": _point(args.pair[1]), **grid})
    region = load_json(args.set_probe[0]) if Path(args.set_probe[0]).is_file() else [int(args.set_probe[0])]
    return _probe(args, lab, "varadhan_indicator", {"region": region, "x": _point(args.set_probe[1]), **grid})


def cmd_fdd(args) -> int:
    lab = Lab.load(args.space)
    event = load_json(args.event)
    beta = event.pop("beta", None)
    EventSpec.from_dict(event)
    params = {"event": event, "s_min": args.smin, "s_max": args.smax, "points": args.points, "beta": beta}
    return _probe(args, lab, "fdd", params)


def _curve_lab(args) -> Lab | None:
    curve = load_json(args.curve)
    space = args.space or curve.pop("space", None)
    if space is None:
        return None
    if not args.space:
        space = Path(args.curve).parent / space
    return Lab.load(space)


def cmd_energy(args) -> int:
    curve = load_json(args.curve)
    curve.pop("space", None)
    CurveSpec.from_dict(curve)
    lab = _curve_lab(args)
    if lab is None and curve.get("context", "space") == "space":
        raise ConfigError("a curve on a state space needs --space or a 'space' entry in the curve file")
    return _probe(args, lab, "energy", {"curve": curve, "op": args.op})


def cmd_tube(args) -> int:
    lab = Lab.load(args.space)
    curve = load_json(args.curve)
    curve.pop("space", None)
    params = {
        "curve": curve,
        "delta": args.delta,
        "checkpoints": args.checkpoints,
        "s_min": args.smin,
        "s_max": args.smax,
        "samples": args.samples,
    }
    return _probe(args, lab, "tube", params)


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None:
        config.threads = args.threads
    rows = run_experiment(config, args.out, progress_bar=True)
    for row in rows:
        print(f"{row.probe_id:>24s} {row.kind:<20s} {row.headline!r:>24s}  {';'.join(row.flags)}")
    return exit_status(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldplab", description="Dirichlet forms, heat kernels and path large deviations")
    parser.add_argument("--log-level", default="WARNING", help="logging level (Default = WARNING)")
    parser.add_argument("--threads", type=int, default=None, help="torch intra-op threads (LDPLAB_THREADS wins)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space", help="Build or validate a space description")
    space_sub = p.add_subparsers(dest="action", required=True)
    b = space_sub.add_parser("build", help="Expand a builder spec into an explicit space file")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    v = space_sub.add_parser("validate", help="Check the space invariants")
    v.add_argument("file")
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("kernel", help="Dump p_t(x, y) for all pairs")
    p.add_argument("--space", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("metric", help="Intrinsic distance brackets")
    p.add_argument("--space", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pair", nargs=2, metavar=("X", "Y"))
    group.add_argument("--all", action="store_true")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("inequalities", help="Doubling, Poincare, Harnack and volume scaling constants")
    p.add_argument("--space", required=True)
    p.add_argument("--kind", required=True, choices=["vd", "pi", "hi", "volscale"])
    p.add_argument("--params", help="JSON file with the probe parameters (radii, centers, ...)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inequalities)

    p = sub.add_parser("varadhan", help="Short-time kernel asymptotics")
    p.add_argument("--space", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pair", nargs=2, metavar=("X", "Y"))
    group.add_argument("--set-probe", nargs=2, metavar=("REGION", "X"), help="region file (or vertex) and a point")
    p.add_argument("--tmin", type=float, default=2e-3)
    p.add_argument("--tmax", type=float, default=2e-2)
    p.add_argument("--points", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_varadhan)

    p = sub.add_parser("fdd", help="Finite-dimensional distribution asymptotics")
    p.add_argument("--space", required=True)
    p.add_argument("--event", required=True)
    p.add_argument("--smin", type=float, default=2e-3)
    p.add_argument("--smax", type=float, default=2e-2)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fdd)

    p = sub.add_parser("energy", help="Path energy of a curve")
    p.add_argument("--curve", required=True)
    p.add_argument("--space", help="space file for curves on a state space")
    p.add_argument("--op", required=True, choices=["discrete", "sup", "derivative", "ac2", "gap"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("tube", help="Tube probabilities around a curve")
    p.add_argument("--space", required=True)
    p.add_argument("--curve", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--checkpoints", type=int, default=5)
    p.add_argument("--smin", type=float, default=5e-3)
    p.add_argument("--smax", type=float, default=5e-2)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tube)

    p = sub.add_parser("run", help="Run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    # also accepted before the subcommand; SUPPRESS keeps that value when this one is absent
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="same as --threads before the subcommand")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        return args.func(args)
    except (ConfigError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
