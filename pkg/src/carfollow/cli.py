"""Command-line experiment runner.

    carfollow sweep-r          r grid: analytic spacing/throughput + braking runs
    carfollow compare-models   Scenario I across car-following laws
    carfollow scenario KIND    any of Scenarios I-IV for one law
    carfollow curves WHICH     fig7 (gap ratio) or fig8 (acceleration vs distance)

Exit status: 0 success, 2 configuration error, 3 collision in some trial,
4 some trial hit t_max without stabilizing.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from carfollow import config as cfgmod
from carfollow.config import ConfigError, RunConfig
from carfollow.metrics import MetricsReport, throughput
from carfollow.models import (
    KMH,
    ModelKind,
    NoEquilibriumError,
    Observation,
    ParameterError,
    desired_gap,
    equilibrium_gap,
    idm_acceleration,
    seidm_acceleration,
)
from carfollow.output import (
    SUMMARY_COLUMNS,
    fmt,
    line_chart,
    summary_row,
    write_csv,
    write_trajectory,
)
from carfollow.scenarios import TrialResult, aggregate, run_trials

LOG = logging.getLogger("carfollow")

EXIT_OK, EXIT_CONFIG, EXIT_COLLISION, EXIT_TIMEOUT = 0, 2, 3, 4

R_GRID = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
ALL_MODELS = ("IDM", "SEIDM", "Krauss", "DerbelIDM", "ClampedIDM")
FIG8_FRACTIONS = (0.85, 0.90, 0.95, 1.00)
FIG8_FOLLOWER_SPEED = 90 * KMH


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file with [models] [dynamics] [scenarios] [metrics]")
    common.add_argument("--out-dir", default="results", help="directory for CSV and SVG output (default: results)")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--trials", type=int, help="trials per model (default depends on scenario)")
    common.add_argument("--dt", type=float, help="time step in s")
    common.add_argument("--t-max", type=float, help="simulation horizon in s")
    common.add_argument("--profile", help="lead vehicle profile, e.g. hold:5,ramp:-6:9.9 (s, m/s^2, m/s)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value, e.g. --set models.T=1.2 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="carfollow", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep-r", parents=[common], help="risk exponent sweep")
    p.add_argument("--r", type=_floats, default=list(R_GRID), help="comma-separated r grid")

    p = sub.add_parser("compare-models", parents=[common], help="Scenario I across models")
    p.add_argument("--model", default=",".join(ALL_MODELS), help="comma-separated model list")
    p.add_argument("--r", type=float, help="SEIDM risk exponent")

    p = sub.add_parser("scenario", parents=[common], help="run one scenario")
    p.add_argument("kind", choices=["I", "II", "III", "IV"])
    p.add_argument("--model", default="SEIDM")
    p.add_argument("--r", type=float, help="SEIDM risk exponent")
    p.add_argument("--trajectory-every", type=float,
                   help="trajectory CSV sampling interval in s (default: dt for II/III, 1 s for I/IV)")
    p.add_argument("--all-trajectories", action="store_true", help="write a trajectory CSV for every trial")

    p = sub.add_parser("curves", parents=[common], help="static curve data")
    p.add_argument("which", choices=["fig7", "fig8"])
    p.add_argument("--model", default="IDM", help="law for fig8 accelerations besides IDM (default IDM only)")

    sub.add_parser("defaults", help="print a config file with every default")
    return parser


def make_run_config(args) -> RunConfig:
    values = cfgmod.parse_config(args.config) if args.config else cfgmod.default_values()
    direct = {
        "seed": ("scenarios", "seed"),
        "trials": ("scenarios", "trials"),
        "workers": ("scenarios", "workers"),
        "dt": ("dynamics", "dt"),
        "t_max": ("dynamics", "t_max"),
        "profile": ("dynamics", "profile"),
    }
    for attr, (section, key) in direct.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfgmod.apply_override(values, f"{section}.{key}", str(value))
    if isinstance(getattr(args, "r", None), float):
        cfgmod.apply_override(values, "models.r", str(args.r))
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfgmod.apply_override(values, key.strip(), raw)
    return RunConfig(subcommand=args.command, config_path=args.config, out_dir=args.out_dir, values=values)


def _slug(label: str) -> str:
    return label.replace("(r=", "_r").replace(")", "").lower()


def _group_status(results: list[TrialResult]) -> str:
    statuses = {r.status for r in results}
    for worst in ("collision", "timeout"):
        if worst in statuses:
            return worst
    return "stabilized"


def _summary_rows(label: str, r, scenario: str, results: list[TrialResult], mean: MetricsReport,
                  mean_status: str | None = None) -> list[list]:
    rows = [summary_row(label, r, scenario, res.trial, res.metrics, res.status) for res in results]
    rows.append(summary_row(label, r, scenario, "mean", mean, mean_status or _group_status(results)))
    return rows


def _exit_code(results: list[TrialResult]) -> int:
    statuses = {r.status for r in results}
    if "collision" in statuses:
        return EXIT_COLLISION
    if "timeout" in statuses:
        return EXIT_TIMEOUT
    return EXIT_OK


def _r_column(model) -> float | None:
    return model.risk.r if model.kind is ModelKind.SEIDM else None


def _emit(out: Path, name: str, lines: list[str]) -> None:
    text = "\n".join(lines) + "\n"
    (out / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def regime(r: float) -> str:
    """Qualitative regime of the risk exponent; 0.4 and 0.8 are shared boundaries."""
    if r == 0:
        return "plain IDM (no risk response)"
    if r in (0.4, 0.8):
        return "boundary (smoothness/balanced)" if r == 0.4 else "boundary (balanced/efficiency)"
    if r < 0.4:
        return "smoothness-priority"
    if r < 0.8:
        return "balanced"
    return "efficiency-priority"


def cmd_sweep_r(rc: RunConfig, grid: list[float]) -> int:
    if not grid:
        raise ConfigError("r grid is empty")
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v_max = rc.step("II").v_max
    rows, all_results, lines = [], [], []
    spacings = []
    iso_limit = rc.get("metrics", "iso_threshold")
    lines.append(f"r sweep at v_max = {fmt(v_max / KMH)} km/h; braking runs use profile {rc.profile().describe()}")
    lines.append(f"{'r':>5} {'spacing_m':>10} {'thru_vph':>9} {'brake_s':>8} {'peak':>8} {'iso2s':>7}  regime")
    for r in grid:
        model = rc.model(ModelKind.SEIDM, r=r)
        try:
            spacing = equilibrium_gap(model, v_max)
            flow = throughput(spacing, v_max)
        except (NoEquilibriumError, ValueError) as exc:
            LOG.warning("r=%g: %s", r, exc)
            spacing = flow = None
        spacings.append(spacing)
        results = run_trials(rc.scenario("II", model, trials=1), rc.get("scenarios", "workers"))
        all_results += results
        for res in results:
            res.metrics.stabilization_spacing = spacing
            res.metrics.throughput = flow
        mean = aggregate(results)
        rows += _summary_rows(model.label, r, "II", results, mean)
        iso = mean.iso_windowed_decel
        flag = "" if iso is None or iso <= iso_limit else f"  ISO 2-s mean {fmt(iso)} > {fmt(iso_limit)}"
        lines.append(f"{r:5g} {fmt(spacing):>10} {fmt(flow):>9} {fmt(mean.braking_duration):>8} "
                     f"{fmt(mean.peak_decel):>8} {fmt(iso):>7}  {regime(r)}{flag}")
    write_csv(out / "sweep_r.csv", SUMMARY_COLUMNS, rows)
    ok = [(r, s) for r, s in zip(grid, spacings) if s is not None]
    line_chart(out / "sweep_r.svg", [("equilibrium spacing", [r for r, _ in ok], [s for _, s in ok])],
               title="Equilibrium spacing vs risk exponent", xlabel="r", ylabel="spacing (m)")
    lines.append("regimes: r < 0.4 smoothness-priority, 0.4-0.8 balanced, r > 0.8 efficiency-priority")
    _emit(out, "sweep_r.txt", lines)
    return _exit_code(all_results)


def cmd_compare_models(rc: RunConfig, names: list[str]) -> int:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = [ModelKind.parse(n) for n in names]
    v_max = rc.step("I").v_max
    stall_limit = rc.get("metrics", "stall_fraction") * v_max
    rows, eq_rows, lines, all_results = [], [], [], []
    lines.append(f"Scenario I comparison, v_max = {fmt(v_max / KMH)} km/h")
    lines.append(f"{'model':<14} {'spacing_m':>10} {'period_s':>9} {'thru_vph':>9} {'eq_spacing':>10}  status")
    for kind in kinds:
        model = rc.model(kind)
        try:
            eq = equilibrium_gap(model, v_max)
        except NoEquilibriumError:
            eq = None
        eq_rows.append([model.label, _r_column(model), eq, None if eq is None else throughput(eq, v_max),
                        v_max, v_max / KMH])
        results = run_trials(rc.scenario("I", model), rc.get("scenarios", "workers"))
        all_results += results
        mean = aggregate(results)
        stalled = mean.rear_half_speed is not None and mean.rear_half_speed < stall_limit
        status = "stalled" if stalled else _group_status(results)
        rows += _summary_rows(model.label, _r_column(model), "I", results, mean, status)
        lines.append(f"{model.label:<14} {fmt(mean.stabilization_spacing):>10} {fmt(mean.stabilization_period):>9} "
                     f"{fmt(mean.throughput):>9} {fmt(eq):>10}  {status}"
                     f"  (rear-half speed {fmt(mean.rear_half_speed)} m/s)")
    write_csv(out / "compare_models.csv", SUMMARY_COLUMNS, rows)
    write_csv(out / "equilibrium.csv",
              ("model", "r", "equilibrium_spacing_m", "throughput_vph", "v_max_mps", "v_max_kmh"), eq_rows)
    _emit(out, "compare_models.txt", lines)
    return _exit_code(all_results)


def cmd_scenario(rc: RunConfig, kind: str, model_name: str, every: float | None, all_traj: bool) -> int:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = rc.model(ModelKind.parse(model_name))
    slug = _slug(model.label)
    results = run_trials(rc.scenario(kind, model), rc.get("scenarios", "workers"), keep_trajectories=True)
    mean = aggregate(results)
    rows = _summary_rows(model.label, _r_column(model), kind, results, mean)
    write_csv(out / f"scenario_{kind}_{slug}.csv", SUMMARY_COLUMNS, rows)
    if every is None:
        every = rc.get("dynamics", "dt") if kind in ("II", "III") else 1.0
    for res in results if all_traj else results[:1]:
        write_trajectory(out / f"trajectory_{kind}_{slug}_trial{res.trial}.csv", res.trajectory, every)
    lines = [f"scenario {kind} {model.label}: {len(results)} trial(s), status {_group_status(results)}"]
    if kind in ("II", "III"):
        final = mean.final_spacing or ()
        reduction = mean.spacing_reduction or ()
        vehicles = rc.scenario(kind, model).vehicles
        table = [[i, final[i] if i < len(final) else None, reduction[i] if i < len(reduction) else None]
                 for i in range(vehicles)]
        write_csv(out / f"platoon_{kind}_{slug}.csv", ("vehicle", "final_spacing_m", "spacing_reduction_m"), table)
        lines.append("vehicle 0 is rearmost; the last vehicle leads and has no gap")
        for i, f, red in table:
            lines.append(f"  vehicle {i}: final {fmt(f) or '-'} m, reduction {fmt(red) or '-'} m")
        lines.append(f"braking duration {fmt(mean.braking_duration)} s, peak accel {fmt(mean.peak_decel)} m/s^2, "
                     f"2-s ISO window {fmt(mean.iso_windowed_decel)} m/s^2")
    else:
        lines.append(f"mean period {fmt(mean.stabilization_period)} s, spacing {fmt(mean.stabilization_spacing)} m, "
                     f"throughput {fmt(mean.throughput)} veh/h")
        if kind == "IV":
            lines.append(f"mean response time {fmt(mean.response_time)} s")
    _emit(out, f"scenario_{kind}_{slug}.txt", lines)
    return _exit_code(results)


def fig7_rows(rc: RunConfig) -> list[list[float]]:
    model = rc.model(ModelKind.IDM)
    p = model.params
    rows = []
    for ratio in np.round(np.arange(0.01, 1.0, 0.01), 2):
        v = float(ratio) * p.v0
        eq = equilibrium_gap(model, v)
        s_star = float(desired_gap(v, 0.0, p))
        rows.append([float(ratio), v, v / KMH, eq, s_star, eq / s_star])
    return rows


def fig8_rows(rc: RunConfig, distances=None) -> list[list]:
    idm = rc.model(ModelKind.IDM)
    seidm = rc.model(ModelKind.SEIDM)
    if distances is None:
        distances = np.round(np.arange(5.0, 100.0 + 1e-9, 0.5), 1)
    v = FIG8_FOLLOWER_SPEED
    rows = []
    for frac in FIG8_FRACTIONS:
        vl = frac * v
        for d in distances:
            obs = Observation(float(d), v, vl)
            closing = v - vl
            ttc = d / closing if closing > 1e-12 else None
            rows.append([frac, vl, vl / KMH, float(d), closing, ttc,
                         idm_acceleration(obs, idm.params), seidm_acceleration(obs, seidm.params, seidm.risk)])
    return rows


FIG7_COLUMNS = ("v_ratio", "v_mps", "v_kmh", "equilibrium_gap_m", "desired_gap_m", "gap_ratio")
FIG8_COLUMNS = ("leader_fraction", "leader_speed_mps", "leader_speed_kmh", "distance_m",
                "approach_rate_mps", "ttc_s", "idm_accel_mps2", "seidm_accel_mps2")


def cmd_curves(rc: RunConfig, which: str) -> int:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if which == "fig7":
        rows = fig7_rows(rc)
        write_csv(out / "fig7.csv", FIG7_COLUMNS, rows)
        line_chart(out / "fig7.svg", [
            ("equilibrium gap", [r[0] for r in rows], [r[3] for r in rows]),
            ("desired gap", [r[0] for r in rows], [r[4] for r in rows]),
        ], title="IDM equilibrium vs desired gap", xlabel="v / v0", ylabel="gap (m)")
        line_chart(out / "fig7_ratio.svg", [("ratio", [r[0] for r in rows], [r[5] for r in rows])],
                   title="Equilibrium / desired gap", xlabel="v / v0", ylabel="ratio")
    else:
        rows = fig8_rows(rc)
        write_csv(out / "fig8.csv", FIG8_COLUMNS, rows)
        series = []
        for frac in FIG8_FRACTIONS:
            sel = [r for r in rows if r[0] == frac]
            series.append((f"leader {frac:.0%}", [r[3] for r in sel], [r[6] for r in sel]))
        line_chart(out / "fig8.svg", series, title="IDM acceleration at 90 km/h follower",
                   xlabel="distance (m)", ylabel="acceleration (m/s^2)")
    sys.stdout.write(f"wrote {which}.csv ({len(rows)} rows) to {out}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "defaults":
        sys.stdout.write(cfgmod.render_defaults())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = make_run_config(args)
        if args.command == "sweep-r":
            return cmd_sweep_r(rc, args.r)
        if args.command == "compare-models":
            return cmd_compare_models(rc, [m for m in args.model.split(",") if m.strip()])
        if args.command == "scenario":
            return cmd_scenario(rc, args.kind, args.model, args.trajectory_every, args.all_trajectories)
        return cmd_curves(rc, args.which)
    except (ConfigError, ParameterError, NoEquilibriumError, ValueError) as exc:
        sys.stderr.write(f"carfollow: error: {exc}\n")
        return EXIT_CONFIG
