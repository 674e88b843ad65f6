"""Command-line entry point.

Subcommands: ``run`` (one estimation), ``campaign`` (Monte Carlo over one or
more decision parameters), ``fit`` (re-analyse record files), ``compare``
(parallel vs sequential) and ``verify`` (oracle equivalence batteries).

Settings resolve as built-in defaults < INI config file < command-line flags.
Exit codes: 0 success, 1 flagged run(s), 2 configuration error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import records as rec_io
from . import reports
from .circuit import InvalidNoiseError, NoiseModel
from .experiments import (
    CORRELATIONS,
    HEISENBERG_FITS,
    SINGLE_PHASE_CONSTANTS,
    CampaignStats,
    NotApplicableError,
    campaign_error_rate,
    combination_plateau,
    correlation_advantage_fraction,
    correlation_ratio,
    fit_error_model,
    fit_heisenberg_constant,
    heisenberg_reference,
    load_campaign,
    matched_epsilon,
    noise_crossover_analysis,
    parallel_difference_reference,
    run_campaign,
    sequential_baseline_variance,
)
from .protocol import ConfigError, RunConfig, run_estimation

log = logging.getLogger("multiphase_qpe")

EXIT_OK, EXIT_FLAGGED, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3
OUTPUT_ENV = "MPQPE_OUTPUT_DIR"
DEFAULT_OUTPUT = "mpqpe-output"


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(",", " ").split()]


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (destination, parser); destinations match argparse dests
SCHEMA = {
    "estimation": {
        "d": ("d", int),
        "epsilon": ("epsilon", float),
        "k_max": ("k_max", int),
        "g": ("G", int),
        "gamma": ("gamma", _floats),
        "seed": ("seed", int),
        "m_max": ("m_max", int),
        "theta": ("theta", _floats),
    },
    "campaign": {
        "repetitions": ("repetitions", int),
        "threads": ("threads", int),
        "tail_rounds": ("tail_rounds", int),
        "epsilons": ("epsilons", _floats),
        "p_err": ("p_err", float),
    },
    "output": {"dir": ("output_dir", str), "plots": ("plots", _bool)},
}

DEFAULTS = {
    "d": 2,
    "epsilon": 1e-3,
    "k_max": 10,
    "G": None,
    "gamma": None,
    "seed": 0,
    "m_max": 1000,
    "theta": None,
    "repetitions": 50,
    "threads": 1,
    "tail_rounds": 3,
    "epsilons": None,
    "p_err": 1e-3,
    "output_dir": None,
    "plots": True,
}


def read_config_file(path) -> dict:
    """Parse an INI file into a flat settings dict, rejecting unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
            dest, conv = SCHEMA[section][key]
            try:
                out[dest] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {exc}") from exc
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["output_dir"] is None:
        settings["output_dir"] = os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    if settings["repetitions"] < 1:
        raise ConfigError(f"repetitions must be >= 1, got {settings['repetitions']}")
    if settings["tail_rounds"] < 1:
        raise ConfigError(f"tail_rounds must be >= 1, got {settings['tail_rounds']}")
    if settings["threads"] < 0:
        raise ConfigError("threads must be >= 0 (0 = one per CPU)")
    if settings["epsilons"] is not None and not settings["epsilons"]:
        raise ConfigError("epsilons is empty")
    return settings


def build_run_config(settings: dict, epsilon: float | None = None) -> RunConfig:
    d = settings["d"]
    gamma = settings["gamma"]
    try:
        noise = NoiseModel(tuple(gamma)) if gamma is not None else NoiseModel.noiseless(d)
    except InvalidNoiseError as exc:
        raise ConfigError(str(exc)) from exc
    theta = settings["theta"]
    return RunConfig(
        d=d,
        epsilon=settings["epsilon"] if epsilon is None else epsilon,
        k_max=settings["k_max"],
        G=settings["G"],
        noise=noise,
        seed=settings["seed"],
        m_max=settings["m_max"],
        theta_true="random" if theta is None else tuple(theta),
    )


def _outdir(settings: dict) -> Path:
    out = Path(settings["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(items):
    for key, value in items:
        print(f"{key} = {reports.format_value(value)}")


def _public(settings: dict) -> dict:
    """Settings that affect results (the output location does not)."""
    return {k: v for k, v in settings.items() if k not in ("output_dir", "threads")}


# ------------------------------------------------------------------ run


def cmd_run(args, settings) -> int:
    config = build_run_config(settings)
    result = run_estimation(config)
    out = _outdir(settings)
    meta = reports.make_meta("run", config.to_dict(), settings=_public(settings), seed=config.seed)
    stem = args.name or "run"
    rec_io.write_records(out / f"{stem}.jsonl", [result], meta)

    items = [("d", config.d), ("epsilon", config.epsilon), ("rounds", len(result.records))]
    if result.records:
        last = result.records[-1]
        items += [
            ("estimate", last.estimate % (2 * np.pi)),
            ("covariance", last.covariance),
            ("N_T", last.cumulative_resources),
            ("M_per_round", " ".join(str(r.M) for r in result.records)),
            ("m_per_round", " ".join(str(r.m_k) for r in result.records)),
        ]
    items += [
        ("theta_true", result.theta_true),
        ("truth_in_C_per_round", " ".join("1" if r.truth_in_C else "0" for r in result.records)),
        ("stalled", result.stalled),
        ("abort_reason", result.abort_reason or "none"),
    ]
    reports.write_summary(out / f"{stem}_summary.txt", meta, items)
    _echo(items)
    if result.flagged:
        log.warning("run flagged (stalled=%s, aborted=%s)", result.stalled, result.aborted)
        return EXIT_FLAGGED
    return EXIT_OK


# ------------------------------------------------------------- campaign


def _eps_tag(eps: float) -> str:
    return f"{eps:.3g}".replace("+", "")


def campaign_items(stats: CampaignStats, tail: int) -> list[tuple[str, object]]:
    d = stats.d
    rate = campaign_error_rate(stats)
    items = [
        ("epsilon", stats.config.epsilon),
        ("runs", stats.n_runs),
        ("rounds", stats.n_rounds),
        ("flagged_runs", int(stats.flagged.sum())),
        ("stalled_runs", int(stats.stalled.sum())),
        ("aborted_runs", int(stats.aborted.sum())),
        ("N_err", stats.n_err),
        ("N_sim", stats.n_sim),
        ("N_err_first_round", stats.n_err_first_round),
        ("P_err_per_round", rate.p_err),
        ("P_err_delta", rate.delta),
        ("P_err_degenerate", rate.degenerate),
    ]
    if stats.usable.any():
        ch = fit_heisenberg_constant(stats, tail)
        items += [("C_H", ch.value), ("C_H_std", ch.std), ("C_H_median", ch.median),
                  ("C_H_samples", ch.n_samples)]
        if d in HEISENBERG_FITS:
            items.append(("C_H_reported_fit", heisenberg_reference(d, stats.config.epsilon)))
        if d >= 2:
            rho = correlation_ratio(stats, tail)
            items += [("correlation", rho.value), ("correlation_std", rho.std)]
            if d in CORRELATIONS:
                items.append(("correlation_reported", CORRELATIONS[d]))
            items.append(("correlation_advantage_fraction", correlation_advantage_fraction(stats, tail)))
    if d == 1:
        items += [(f"C_s[{k}]", v) for k, v in SINGLE_PHASE_CONSTANTS.items()]
    if not stats.config.noise.is_noiseless:
        rep = noise_crossover_analysis(stats)
        items += [
            ("crossover_N_T", rep.crossover_NT),
            ("early_slope", rep.early_slope),
            ("late_slope", rep.late_slope),
            ("late_N_T*V_jj", rep.late_NTV),
            ("late_sub_shot_noise", rep.sub_shot_noise),
            ("late_N_T*V_jj_constant", rep.late_constant),
        ]
    return items


def _emit_campaign(stats, out: Path, tag: str, meta: dict, tail: int, plots: bool):
    names, cols = reports.scaling_columns(stats)
    reports.write_table(out / f"scaling_{tag}.dat", meta, names, cols)
    items = campaign_items(stats, tail)
    reports.write_summary(out / f"summary_{tag}.txt", meta, items)
    if plots:
        from . import plotting

        plateau = fit_heisenberg_constant(stats, tail) if stats.usable.any() else None
        plotting.plot_scaling(stats, out / f"scaling_{tag}.png", meta, plateau)
        if not stats.config.noise.is_noiseless:
            plotting.plot_noise(stats, out / f"noise_{tag}.png", meta)
    return items


def _emit_error_tables(rows, out: Path, meta: dict, plots: bool, d: int):
    eps = [r[0] for r in rows]
    reports.write_table(out / "ch_vs_eps.dat", meta, ["epsilon", "C_H"], [eps, [r[1] for r in rows]])
    reports.write_table(out / "perr_vs_eps.dat", meta, ["epsilon", "P_err"], [eps, [r[2] for r in rows]])
    items = []
    positive = [(e, p) for e, _, p in rows if p > 0]
    if len(positive) >= 3:
        fit = fit_error_model(positive)
        items = [("fit_c1", fit.c1), ("fit_c2", fit.c2), ("fit_c_linear", fit.c_linear)]
    if plots and len(rows) >= 2:
        from . import plotting

        plotting.plot_error_scaling(eps, [r[1] for r in rows], [r[2] for r in rows],
                                    out / "error_scaling.png", meta, d)
    return items


def cmd_campaign(args, settings) -> int:
    out = _outdir(settings)
    eps_list = settings["epsilons"] or [settings["epsilon"]]
    tail = settings["tail_rounds"]
    flagged = 0
    rows = []
    for eps in eps_list:
        config = build_run_config(settings, eps)
        if config.theta_true != "random":
            raise ConfigError("campaigns draw theta per run; remove 'theta'")
        tag = f"eps{_eps_tag(eps)}"
        meta = reports.make_meta("campaign", config.to_dict(), settings=_public(settings),
                                 seed=settings["seed"], repetitions=settings["repetitions"])
        stats = run_campaign(
            config,
            settings["repetitions"],
            campaign_seed=settings["seed"],
            threads=settings["threads"],
            records_path=out / f"campaign_{tag}.jsonl",
            meta={"settings": _public(settings)},
        )
        print(f"[{tag}]")
        items = _emit_campaign(stats, out, tag, meta, tail, settings["plots"])
        _echo(items)
        flagged += int(stats.flagged.sum())
        values = dict(items)
        rows.append((eps, values.get("C_H", np.nan), values["P_err_per_round"]))
    if len(eps_list) > 1:
        rows.sort()
        meta = reports.make_meta("campaign", build_run_config(settings).to_dict(),
                                 settings=_public(settings), seed=settings["seed"])
        items = _emit_error_tables(rows, out, meta, settings["plots"], settings["d"])
        reports.write_summary(out / "error_model.txt", meta, items)
        _echo(items)
    return EXIT_FLAGGED if flagged else EXIT_OK


# ------------------------------------------------------------------ fit


def cmd_fit(args, settings) -> int:
    out = _outdir(settings)
    tail = settings["tail_rounds"]
    rows = []
    d = None
    for path in args.records:
        if not Path(path).is_file():
            raise ConfigError(f"records file not found: {path}")
        stats = load_campaign(path)
        if d is not None and stats.d != d:
            raise ConfigError("record files mix different numbers of phases")
        d = stats.d
        eps = stats.config.epsilon
        tag = f"eps{_eps_tag(eps)}"
        meta = reports.make_meta("fit", stats.config.to_dict(), source=str(path),
                                 seed=stats.campaign_seed, tail_rounds=tail)
        print(f"[{tag}]")
        items = _emit_campaign(stats, out, f"fit_{tag}", meta, tail, settings["plots"])
        _echo(items)
        rows.append((eps, dict(items).get("C_H", np.nan), dict(items)["P_err_per_round"]))
    if len(rows) > 1:
        rows.sort()
        meta = reports.make_meta("fit", {"d": d}, sources=[str(p) for p in args.records])
        items = _emit_error_tables(rows, out, meta, settings["plots"], d)
        reports.write_summary(out / "error_model.txt", meta, items)
        _echo(items)
    return EXIT_OK


# -------------------------------------------------------------- compare


def cmd_compare(args, settings) -> int:
    p_err = settings["p_err"]
    if not 0 < p_err < 1:
        raise ConfigError("p_err must lie in (0, 1)")
    if args.records:
        stats = load_campaign(args.records)
    else:
        d = settings["d"]
        if d not in HEISENBERG_FITS:
            raise ConfigError(f"no reported error fit to match P_err for d={d}")
        config = build_run_config(settings, matched_epsilon(d, p_err))
        stats = run_campaign(config, settings["repetitions"], campaign_seed=settings["seed"],
                             threads=settings["threads"])
    d = stats.d
    if d < 2:
        raise ConfigError("compare needs at least two phases")
    tail = settings["tail_rounds"]
    items = [("d", d), ("P_err_target", p_err), ("epsilon", stats.config.epsilon),
             ("P_err_measured", campaign_error_rate(stats).p_err)]
    for i in range(d):
        for j in range(i + 1, d):
            n = np.zeros(d)
            n[i], n[j] = 1.0, -1.0
            par = combination_plateau(stats, n, tail)
            seq = sequential_baseline_variance(d, n, p_err, 1.0)
            items += [
                (f"parallel_V(theta{i + 1}-theta{j + 1})*N_T^2", par.value),
                (f"parallel_std(theta{i + 1}-theta{j + 1})", par.std),
                (f"sequential_V(theta{i + 1}-theta{j + 1})*N_T^2", seq),
                (f"parallel_advantage(theta{i + 1}-theta{j + 1})", bool(par.value < seq)),
            ]
    if d in HEISENBERG_FITS:
        items.append(("parallel_reported*N_T^2", parallel_difference_reference(d, p_err, 1.0)))
    items.append(("correlation_advantage_fraction", correlation_advantage_fraction(stats, tail)))
    out = _outdir(settings)
    meta = reports.make_meta("compare", stats.config.to_dict(), settings=_public(settings),
                             seed=settings["seed"])
    reports.write_summary(out / "compare_summary.txt", meta, items)
    _echo(items)
    return EXIT_FLAGGED if stats.flagged.any() else EXIT_OK


# --------------------------------------------------------------- verify


def cmd_verify(args, settings) -> int:
    from .verification import run_all

    if args.cases < 1:
        raise ConfigError("--cases must be >= 1")
    results = run_all(args.cases, seed=settings["seed"], inject=1e-6 if args.inject_failure else 0.0)
    status = EXIT_OK
    for res in results:
        mark = "PASS" if res.passed else "FAIL"
        print(f"{mark} {res.name}: cases={res.n_cases} max|dev|={res.max_deviation:.3e} "
              f"tol={res.tolerance:.0e}")
        for seed, dev in res.failures[:20]:
            print(f"    failing case seed={seed} deviation={dev:.3e}")
        if not res.passed:
            status = EXIT_VERIFY
    return status


# ------------------------------------------------------------- parsing


def _add_estimation_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("estimation")
    g.add_argument("--config", help="INI file with [estimation], [campaign], [output] sections")
    g.add_argument("--d", type=int, help="number of phases")
    g.add_argument("--epsilon", type=float, help="decision parameter")
    g.add_argument("--kmax", dest="k_max", type=int, help="number of rounds")
    g.add_argument("--G", dest="G", type=int, help="grid points per axis")
    g.add_argument("--gamma", type=_floats, help="comma-separated dephasing rates")
    g.add_argument("--seed", type=int, help="run seed, or campaign seed")
    g.add_argument("--m-max", dest="m_max", type=int, help="measurement cap per round")
    g.add_argument("--output-dir", dest="output_dir",
                   help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")


def _add_campaign_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("campaign")
    g.add_argument("--repetitions", type=int)
    g.add_argument("--threads", type=int, help="worker processes, 0 = one per CPU")
    g.add_argument("--tail-rounds", dest="tail_rounds", type=int, help="rounds in the plateau fit")
    g.add_argument("--no-plots", dest="plots", action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpqpe", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one estimation run")
    _add_estimation_flags(p)
    p.add_argument("--theta", type=_floats, help="comma-separated true phases (default random)")
    p.add_argument("--name", help="stem of the output files (default 'run')")

    p = sub.add_parser("campaign", help="Monte Carlo campaign with fits and plot data")
    _add_estimation_flags(p)
    _add_campaign_flags(p)
    p.add_argument("--epsilons", type=_floats, help="comma-separated list of decision parameters")

    p = sub.add_parser("fit", help="re-analyse campaign record files")
    p.add_argument("records", nargs="+")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--tail-rounds", dest="tail_rounds", type=int)
    p.add_argument("--no-plots", dest="plots", action="store_false", default=None)

    p = sub.add_parser("compare", help="parallel vs sequential phase differences")
    _add_estimation_flags(p)
    _add_campaign_flags(p)
    p.add_argument("--p-err", dest="p_err", type=float, help="matched per-round error rate")
    p.add_argument("--records", help="analyse an existing campaign instead of running one")

    p = sub.add_parser("verify", help="closed form vs oracle equivalence batteries")
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--inject-failure", action="store_true", help="perturb one case (testing)")
    return parser


COMMANDS = {"run": cmd_run, "campaign": cmd_campaign, "fit": cmd_fit,
            "compare": cmd_compare, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](args, settings)
    except (ConfigError, NotApplicableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # remaining validation failures (bad epsilon, wrong gamma count, ...)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
