"""Command-line entry point: ``segshuffle {amplify,optimize,simulate,experiment}``.

Exit codes: 0 success, 1 usage error, 2 infeasible privacy level, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from typing import Optional, Sequence

import yaml

from segshuffle import amplify, data, experiment, optimize
from segshuffle.optimize import InfeasibleLevelError
from segshuffle.protocol import run_protocol

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("segshuffle")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_or_inf(text: str) -> float:
    if text.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _m_values(text: str):
    return "auto" if text.strip() == "auto" else _float_list(text)


def _delta(text: str):
    return text if "/n" in text else float(text)


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON experiment spec; flags override its keys")
    p.add_argument("--dataset", choices=("msnbc", "synthetic"))
    p.add_argument("--msnbc-path", dest="msnbc_path",
                   help="MSNBC .seq file; an MSNBC-like file is generated when omitted")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--d", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--levels", type=_float_list, help="comma-separated, e.g. 0.5,1,2")
    p.add_argument("--segmentation",
                   help="S1, S2, S3 or comma-separated fractions")
    p.add_argument("--delta", type=_delta, help="number or 0.01/n")
    p.add_argument("--m", dest="m_values", type=_m_values,
                   help="comma-separated blanket rates or 'auto'")
    p.add_argument("--methods", type=lambda t: tuple(t.split(",")))
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--workers", type=int, help="processes for experiment trials")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segshuffle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    amp = sub.add_parser("amplify", help="Hockey-stick divergence of the count-pair family")
    amp.add_argument("--p", type=_float_or_inf, default=math.inf)
    amp.add_argument("--beta", type=float, required=True)
    amp.add_argument("--q", type=float, required=True)
    amp.add_argument("--blanket-trials", dest="blanket_trials", type=int, required=True)
    amp.add_argument("--gamma", type=float, default=1.0)
    amp.add_argument("--epsilon", type=float, required=True)

    opt = sub.add_parser("optimize", help="choose blanket rate and per-level Poisson rates")
    _add_spec_flags(opt)

    sim = sub.add_parser("simulate", help="one protocol run on a dataset")
    _add_spec_flags(sim)
    sim.add_argument("--show-estimates", action="store_true")

    exp = sub.add_parser("experiment", help="MSE sweep over methods, m and trials -> CSV",
                         description=experiment.__doc__,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_spec_flags(exp)
    exp.add_argument("--out", required=True, help="CSV output path")
    return parser


_SPEC_FIELDS = {f.name for f in dataclasses.fields(experiment.ExperimentSpec)}


def load_spec(args: argparse.Namespace) -> experiment.ExperimentSpec:
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a mapping")
        unknown = set(loaded) - _SPEC_FIELDS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for name in _SPEC_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    seg = values.get("segmentation")
    if isinstance(seg, str) and seg not in data.SEGMENTATIONS:
        try:
            values["segmentation"] = _float_list(seg)
        except ValueError:
            raise UsageError(f"unknown segmentation {seg!r}") from None
    elif isinstance(seg, list):
        values["segmentation"] = tuple(seg)
    if isinstance(values.get("m_values"), list):
        values["m_values"] = tuple(values["m_values"])
    try:
        return experiment.ExperimentSpec(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_amplify(args) -> int:
    try:
        params = amplify.AmplifyParams(p=args.p, beta=args.beta, q=args.q,
                                       blanket_trials=args.blanket_trials, gamma=args.gamma)
        value = amplify.hockey_stick(params, args.epsilon)
    except amplify.ParameterDomainError as exc:
        raise UsageError(str(exc)) from exc
    print(f"{value:.12g}")
    return EXIT_OK


def _format_params(config: optimize.SegmentedConfig, params: optimize.ProtocolParams) -> str:
    lines = [f"blanket_rate: {params.blanket_rate:.12g}", "poisson_rates:"]
    for k, (level, rate) in enumerate(zip(config.levels, params.poisson_rates), start=1):
        lines.append(f"  - level: {k}\n    epsilon: {level:g}\n    rate: {rate:.12g}")
    lines.append(f"mse_bound: {params.mse_bound:.12g}")
    lo, hi = params.search_range
    if not (math.isnan(lo) or lo == hi):
        lines.append(f"search_range: [{lo:.6g}, {hi:.6g}]")
    return "\n".join(lines)


def _config_only(spec: experiment.ExperimentSpec) -> optimize.SegmentedConfig:
    counts = data.level_quotas(spec.n, spec.fractions)
    return optimize.SegmentedConfig(levels=spec.levels, level_counts=counts,
                                    delta=spec.resolved_delta(), domain_size=spec.d,
                                    set_size=spec.s, population=spec.n)


def _single_m(spec: experiment.ExperimentSpec) -> Optional[float]:
    if spec.m_values == "auto":
        return None
    if len(spec.m_values) != 1:
        raise UsageError("give a single --m value or 'auto'")
    return spec.m_values[0]


def cmd_optimize(args) -> int:
    spec = load_spec(args)
    config = _config_only(spec)
    params = optimize.optimize_parameters(config, grid_points=spec.grid_points,
                                          m_override=_single_m(spec))
    print(_format_params(config, params))
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = load_spec(args)
    dataset = experiment.build_dataset(spec)
    config = experiment.build_config(spec, dataset)
    params = optimize.optimize_parameters(config, grid_points=spec.grid_points,
                                          m_override=_single_m(spec))
    result = run_protocol(dataset, config, params, spec.seed)
    print(_format_params(config, params))
    print(f"mse: {experiment.squared_error(result.estimates, dataset.true_w):.12g}")
    print(f"messages: {int(result.raw_counts.sum())}")
    if args.show_estimates:
        print("estimates: [" + ", ".join(f"{v:.6g}" for v in result.estimates) + "]")
        print("true_w: [" + ", ".join(f"{v:.6g}" for v in dataset.true_w) + "]")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = load_spec(args)
    result = experiment.run_experiment(
        spec, progress=lambda meth, m, mse: log.info("%s m=%s mean mse=%.6g", meth, m, mse))
    result.write_csv(args.out)
    print(f"wrote {len(result.rows)} rows to {args.out}")
    return EXIT_OK


COMMANDS = {"amplify": cmd_amplify, "optimize": cmd_optimize,
            "simulate": cmd_simulate, "experiment": cmd_experiment}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"segshuffle: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleLevelError as exc:
        print(f"segshuffle: infeasible privacy level {exc.level_index}: {exc}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, data.MalformedLineError, data.InsufficientUsersError,
            yaml.YAMLError) as exc:
        print(f"segshuffle: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"segshuffle: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
