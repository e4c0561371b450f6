"""Command-line entry point: ``gmima <subcommand> ... --out DIR``.

Every subcommand computes all of its artifacts in memory and only then
writes them, so a failing run leaves no partial output. Exit status is 0 on
success, 1 for invalid input or configuration, 2 when estimation fails.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import ame_csv, all_failed, estimate_all, estimates_csv, grids_csv
from .averaging import MA_VARIANCE
from .errors import EstimationError, GmimaError, ValidationError
from .impute import DEFAULT_BURN_IN, PMM_DONORS, ImputationSet, multiple_impute
from .logit import AmeResult, STAR_THRESHOLDS
from .patterns import detect_patterns
from .report import expectation_histogram, format_ame_table, item_response_rates, iws_participation
from .simulate import METHODS, SimConfig, apply_missingness, gen_population, monte_carlo, truth_json
from .tabular import Schema, load_csv, to_csv_text

SEED_SCHEME = "numpy SeedSequence(seed).spawn(n): one child per imputation or replication"
CAPTIONS = {
    "cca": "Average marginal effects of the focus regressor over the complete cases (CCA)",
    "fi-mi": "Average marginal effects of the focus regressor over the complete cases (FI-MI)",
    "bbma-bic": "Average marginal effects of the focus regressor over the complete cases (BBMA, BIC weights)",
    "bbma-aic": "Average marginal effects of the focus regressor over the complete cases (BBMA, AIC weights)",
}


class UsageError(ValidationError):
    """Malformed command line."""

    module = "cli"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmima", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gmima {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--schema", required=True, help="YAML/JSON schema file")
        sp.add_argument("--data", required=True, help="survey CSV")

    def mi_args(sp):
        sp.add_argument("--m", type=int, default=20, help="number of imputations")
        sp.add_argument("--seed", type=int, help="master seed (required for stochastic steps)")
        sp.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN)

    def est_args(sp, methods):
        data_args(sp)
        mi_args(sp)
        sp.add_argument("--method", choices=methods, default=methods[0])
        sp.add_argument("--by-country", action="store_true")
        sp.add_argument("--cluster-se", action="store_true", help="cluster by interviewer")
        sp.add_argument("--ma-order", choices=("pool-first", "average-first"), default="pool-first")
        sp.add_argument("--items", nargs="+", help="outcome items (default: all)")
        sp.add_argument("--imputations", help="directory written by `gmima impute` to reuse")

    sp = sub.add_parser("simulate", help="generate a synthetic survey with missingness")
    sp.add_argument("--config", help="simulation config (YAML); defaults when omitted")
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("impute", help="multiply impute a survey file")
    data_args(sp)
    mi_args(sp)

    est_args(sub.add_parser("fit", help="focus coefficients by method"), list(METHODS))
    est_args(sub.add_parser("average", help="block model averaging with diagnostics"),
             ["bbma-bic", "bbma-aic"])
    est_args(sub.add_parser("ame", help="country-by-item AME table"), list(METHODS))

    sp = sub.add_parser("montecarlo", help="bias and coverage study on simulated data")
    sp.add_argument("--config")
    sp.add_argument("--replications", type=int, default=200)
    sp.add_argument("--m", type=int, default=20)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN)
    sp.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    sp.add_argument("--item")

    sp = sub.add_parser("report", help="response rates, participation and expectation histogram")
    data_args(sp)
    sp.add_argument("--bin-width", type=float, default=5.0)

    for name, sp in sub.choices.items():
        sp.add_argument("--out", required=True, help="output directory")
    return p


def _require_seed(args) -> None:
    if args.seed is None:
        raise UsageError(f"`{args.command}` is stochastic and needs --seed")


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _inputs(args) -> dict:
    out = {}
    for key in ("schema", "data", "config"):
        path = getattr(args, key, None)
        if path:
            p = Path(path)
            if not p.is_file():
                raise UsageError(f"--{key}: file not found: {path}")
            out[key] = _sha(p.read_text())
    return out


def _load(args):
    schema = Schema.load(args.schema)
    return schema, load_csv(args.data, schema)


def _sim_config(args) -> SimConfig:
    return SimConfig.load(args.config) if args.config else SimConfig()


def cmd_simulate(args) -> dict[str, str]:
    _require_seed(args)
    config = replace(_sim_config(args), seed=args.seed)
    complete, truth = gen_population(config)
    masked = apply_missingness(complete, config)
    return {
        "data.csv": to_csv_text(masked),
        "complete.csv": to_csv_text(complete),
        "schema.yaml": masked.schema.dump(),
        "config.yaml": config.dump(),
        "truth.json": truth_json(truth),
        "patterns.csv": detect_patterns(masked).to_csv_text(),
    }


def cmd_impute(args) -> dict[str, str]:
    _require_seed(args)
    _, ds = _load(args)
    impset = multiple_impute(ds, args.m, seed=args.seed, burn_in=args.burn_in)
    out = impset.artifacts()
    out["patterns.csv"] = detect_patterns(ds).to_csv_text()
    return out


def _estimate(args):
    schema, ds = _load(args)
    impset = None
    if args.method != "cca":
        if args.imputations:
            impset = ImputationSet.load(args.imputations, schema)
        else:
            _require_seed(args)
    cells, _ = estimate_all(
        ds, [args.method], items=args.items, by_country=args.by_country, m=args.m,
        seed=args.seed, burn_in=args.burn_in, cluster=args.cluster_se,
        ma_order=args.ma_order, impset=impset,
    )
    failed = all_failed(cells)
    if failed:
        raise EstimationError(f"estimation failed in every cell (first: {failed})")
    return cells


def cmd_fit(args) -> dict[str, str]:
    cells = _estimate(args)
    return {"estimates.csv": estimates_csv(cells), "ame.csv": ame_csv(cells)}


def cmd_average(args) -> dict[str, str]:
    cells = _estimate(args)
    return {"submodels.csv": grids_csv(cells), "averaged.csv": ame_csv(cells),
            "estimates.csv": estimates_csv(cells)}


def cmd_ame(args) -> dict[str, str]:
    cells = _estimate(args)
    results: dict[tuple[str, str], AmeResult] = {(c.country, c.item): c.ame for c in cells if c.ok}
    text, csv = format_ame_table(results, CAPTIONS[args.method])
    return {"ame_table.txt": text, "ame_table.csv": csv, "ame.csv": ame_csv(cells)}


def cmd_montecarlo(args) -> dict[str, str]:
    _require_seed(args)
    config = _sim_config(args)
    rep = monte_carlo(config, args.replications, m=args.m, methods=args.methods,
                      seed=args.seed, burn_in=args.burn_in, item=args.item)
    out = rep.artifacts()
    out["config.yaml"] = config.dump()
    return out


def cmd_report(args) -> dict[str, str]:
    _, ds = _load(args)
    out = {
        "response_rates.csv": item_response_rates(ds),
        "patterns.csv": detect_patterns(ds).to_csv_text(),
    }
    if ds.schema.expectation is not None:
        out["expectation_histogram.csv"] = expectation_histogram(ds, args.bin_width)
    if ds.schema.interviewer_columns:
        out["iws_participation.csv"] = iws_participation(ds)
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "impute": cmd_impute,
    "fit": cmd_fit,
    "average": cmd_average,
    "ame": cmd_ame,
    "montecarlo": cmd_montecarlo,
    "report": cmd_report,
}


def manifest(args, files: dict[str, str], inputs: dict) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "out"}
    return {
        "tool": "gmima",
        "version": __version__,
        "command": args.command,
        "arguments": config,
        "config_hash": _sha(json.dumps({"arguments": config, "inputs": inputs}, sort_keys=True)),
        "inputs_sha256": inputs,
        "defaults": {
            "star_thresholds": {mark: t for mark, t in STAR_THRESHOLDS},
            "burn_in": getattr(args, "burn_in", DEFAULT_BURN_IN),
            "pmm_donors": PMM_DONORS,
            "ma_order": getattr(args, "ma_order", "pool-first"),
            "ma_variance": MA_VARIANCE,
            "ame_rows": "complete cases",
            "seed_scheme": SEED_SCHEME,
        },
        "files": {name: _sha(text) for name, text in sorted(files.items())},
    }


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        inputs = _inputs(args)
        files = COMMANDS[args.command](args)
        man = manifest(args, {k: v for k, v in files.items() if k != "manifest.json"}, inputs)
        if "manifest.json" in files:
            man["imputation"] = json.loads(files["manifest.json"])
        files["manifest.json"] = json.dumps(man, indent=2, sort_keys=True) + "\n"
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
    except ValidationError as exc:
        print(f"gmima: error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except EstimationError as exc:
        print(f"gmima: error [{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except GmimaError as exc:  # pragma: no cover - every error is one of the two kinds
        print(f"gmima: error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gmima: error [io]: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
