"""Command-line front end.

Every command reads plain files, writes its outputs atomically into
``--out`` and records the fully resolved configuration in ``manifest.json``.
Exit codes: 0 success, 2 bad arguments, 3 bad data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .errors import ArgumentError, DomainError, NumericalError, ParseError, SpecError
from .forecast import compare_models, curves_csv, error_curve, predict
from .impact import ImpactConfig, causal_impact, parse_range
from .model import ComponentSpec, ModelSpec
from .sampler import McmcConfig, PosteriorDraws, Priors, gibbs_fit, summarize
from .series import (
    QueryPanel,
    emit_series_csv,
    emit_trends_csv,
    ingest_trends_csv,
    pearson_correlation,
    read_series_csv,
    simple_average,
    to_annual,
)

SEED_ENV = "TRENDCAST_SEED"

# values used when neither a flag nor the config file sets an option
DEFAULTS = {
    "out": ".",
    "iterations": 2000,
    "burnin": 500,
    "thinning": 1,
    "horizon": 12,
    "trajectories": 1,
    "level": 0.95,
    "lt_half": True,
    "annualize": False,
    "model": None,
    "pre": None,
    "post": None,
}


def _seed_default() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ArgumentError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--config", help="JSON file of option values; flags take precedence")
    common.add_argument("--seed", type=int, help=f"top-level seed (default: ${SEED_ENV} or 0)")

    mcmc = argparse.ArgumentParser(add_help=False)
    mcmc.add_argument("--model", help="model spec JSON (default: local linear trend)")
    mcmc.add_argument("--iterations", type=int)
    mcmc.add_argument("--burnin", type=int)
    mcmc.add_argument("--thinning", type=int)

    p = _Parser(prog="trendcast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"trendcast {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="parse trends exports into one panel")
    s.add_argument("paths", nargs="+")
    lt = s.add_mutually_exclusive_group()
    lt.add_argument("--lt-half", dest="lt_half", action="store_const", const=True,
                    help='read "<1" cells as 0.5 (default)')
    lt.add_argument("--no-lt-half", dest="lt_half", action="store_const", const=False,
                    help='read "<1" cells as 0')

    s = sub.add_parser("average", parents=[common], help="simple average of a panel")
    s.add_argument("panel")

    s = sub.add_parser("fit", parents=[common, mcmc], help="Gibbs-sample a structural model")
    s.add_argument("series")

    s = sub.add_parser("forecast", parents=[common], help="posterior-predictive forecast from draws")
    s.add_argument("draws")
    s.add_argument("--horizon", type=int)
    s.add_argument("--trajectories", type=int, help="trajectories per retained draw")

    s = sub.add_parser("compare", parents=[common], help="cumulative one-step error comparison")
    s.add_argument("draws", nargs="+")

    s = sub.add_parser("correlate", parents=[common], help="Pearson correlation of two series")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--annualize", action="store_const", const=True,
                   help="convert a monthly series to annual means to match the other")

    s = sub.add_parser("impact", parents=[common, mcmc], help="counterfactual impact of an intervention")
    s.add_argument("series")
    s.add_argument("--pre", help="pre-period A..B (period labels or positions, inclusive)")
    s.add_argument("--post", help="post-period C..D")
    s.add_argument("--level", type=float)
    s.add_argument("--trajectories", type=int, help="trajectories per retained draw")
    return p


# options each command resolves and records
_OPTIONS = {
    "ingest": ("lt_half",),
    "average": (),
    "fit": ("model", "iterations", "burnin", "thinning", "seed"),
    "forecast": ("horizon", "trajectories", "seed"),
    "compare": (),
    "correlate": ("annualize",),
    "impact": ("model", "iterations", "burnin", "thinning", "seed", "pre", "post", "level", "trajectories"),
}
_INPUTS = {"ingest": "paths", "average": "panel", "fit": "series", "forecast": "draws",
           "compare": "draws", "correlate": ("a", "b"), "impact": "series"}


def _resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in that order."""
    file_values = {}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid config JSON: {exc}") from None
        if not isinstance(file_values, dict):
            raise SpecError("config file must hold a JSON object")
        known = set(DEFAULTS) | {"seed"}
        unknown = set(file_values) - known
        if unknown:
            raise ArgumentError(f"unknown config keys {sorted(unknown)}")
    wanted = ("out",) + _OPTIONS[args.command]
    resolved = {}
    for key in wanted:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = file_values[key]
        elif key == "seed":
            resolved[key] = _seed_default()
        else:
            resolved[key] = DEFAULTS[key]
    inputs = _INPUTS[args.command]
    if isinstance(inputs, tuple):
        resolved["inputs"] = [getattr(args, k) for k in inputs]
    else:
        value = getattr(args, inputs)
        resolved["inputs"] = value if isinstance(value, list) else [value]
    return resolved


def _write(path: Path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_model(path: str | None) -> ModelSpec:
    if path is None:
        return ModelSpec((ComponentSpec("local_linear_trend"),))
    return ModelSpec.from_json(_read(path))


def _mcmc(cfg: dict) -> McmcConfig:
    return McmcConfig(iterations=int(cfg["iterations"]), burn_in=int(cfg["burnin"]),
                      thinning=int(cfg["thinning"]), seed=int(cfg["seed"]))


# ---------------------------------------------------------------- commands


def cmd_ingest(cfg: dict, out: Path) -> list[str]:
    lt_value = 0.5 if cfg["lt_half"] else 0.0
    members = []
    for path in cfg["inputs"]:
        panel = ingest_trends_csv(_read(path), lt_value=lt_value)
        members.extend(panel[name] for name in panel.names)
    merged = QueryPanel.from_series(members)
    _write(out / "panel.csv", emit_trends_csv(merged))
    return ["panel.csv"]


def cmd_average(cfg: dict, out: Path) -> list[str]:
    panel = ingest_trends_csv(_read(cfg["inputs"][0]))
    _write(out / "average.csv", emit_series_csv(simple_average(panel)))
    return ["average.csv"]


def cmd_fit(cfg: dict, out: Path) -> list[str]:
    y = read_series_csv(_read(cfg["inputs"][0]))
    spec = _load_model(cfg["model"])
    priors = Priors.from_config(spec.priors, y, spec.components)
    draws = gibbs_fit(y, spec.components, priors, _mcmc(cfg), label=spec.label)
    tmp = out / ".draws.npz.partial"
    out.mkdir(parents=True, exist_ok=True)
    draws.save(tmp)
    os.replace(tmp, out / "draws.npz")
    _write(out / "summary.json", _json(summarize(draws).to_dict(spec.label)))
    return ["draws.npz", "summary.json"]


def cmd_forecast(cfg: dict, out: Path) -> list[str]:
    draws = PosteriorDraws.load(cfg["inputs"][0])
    fc = predict(draws, int(cfg["horizon"]), int(cfg["trajectories"]), seed=int(cfg["seed"]))
    _write(out / "forecast.csv", fc.to_csv())
    _write(out / "forecast.json", _json(fc.to_dict()))
    return ["forecast.csv", "forecast.json"]


def cmd_compare(cfg: dict, out: Path) -> list[str]:
    curves = [error_curve(PosteriorDraws.load(p)) for p in cfg["inputs"]]
    report = compare_models(curves)
    _write(out / "comparison.json", _json(report.to_dict()))
    _write(out / "curves.csv", curves_csv(curves))
    return ["comparison.json", "curves.csv"]


def cmd_correlate(cfg: dict, out: Path) -> list[str]:
    a = read_series_csv(_read(cfg["inputs"][0]))
    b = read_series_csv(_read(cfg["inputs"][1]))
    if cfg["annualize"]:
        if a.frequency == "monthly" and b.frequency == "annual":
            a = to_annual(a, "mean")
        elif b.frequency == "monthly" and a.frequency == "annual":
            b = to_annual(b, "mean")
    r = pearson_correlation(a, b)
    result = {"correlation": r, "a": a.name or cfg["inputs"][0], "b": b.name or cfg["inputs"][1],
              "frequency": a.frequency}
    _write(out / "correlation.json", _json(result))
    return ["correlation.json"]


def cmd_impact(cfg: dict, out: Path) -> list[str]:
    if cfg["pre"] is None or cfg["post"] is None:
        raise ArgumentError("impact needs both --pre and --post")
    y = read_series_csv(_read(cfg["inputs"][0]))
    spec = _load_model(cfg["model"])
    icfg = ImpactConfig(
        pre=parse_range(cfg["pre"], y),
        post=parse_range(cfg["post"], y),
        level=float(cfg["level"]),
        components=spec.components,
        priors=dict(spec.priors),
        mcmc=_mcmc(cfg),
        trajectories_per_draw=int(cfg["trajectories"]),
    )
    report = causal_impact(y, icfg)
    _write(out / "impact.json", _json(report.to_dict()))
    _write(out / "impact.txt", report.summary())
    return ["impact.json", "impact.txt"]


COMMANDS = {
    "ingest": cmd_ingest,
    "average": cmd_average,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "compare": cmd_compare,
    "correlate": cmd_correlate,
    "impact": cmd_impact,
}


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    cfg = _resolve(args)
    out = Path(cfg["out"])
    outputs = COMMANDS[args.command](cfg, out)
    manifest = {
        "command": args.command,
        "config": cfg,
        "outputs": outputs,
        "version": __version__,
    }
    _write(out / "manifest.json", _json(manifest))
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except ArgumentError as exc:
        code, exc_ = 2, exc
    except (ParseError, DomainError, SpecError, OSError) as exc:
        code, exc_ = 3, exc
    except NumericalError as exc:
        code, exc_ = 4, exc
    print(f"trendcast: error: {exc_}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
