"""Command-line front end: synth, train, eval, invert, gradcheck, ablate.

Every run writes into its own output directory: the effective configuration
(config.json), a log (run.log), and the command's artifacts.  A run is
reproducible from that echoed config plus the seed inside it, and no command
modifies its input files.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .autodiff import grad_check, primitive_check_cases, sweep_primitive
from .dataset import (
    LAMBDA_MAX,
    LAMBDA_MIN,
    DatasetError,
    SynthesisPlan,
    build_manifest,
    builtin_films,
    builtin_substrates,
    read_dataset,
    synthesize,
    uniform_grid,
    write_dataset,
    _atomic_write,
)
from .invert import FitProblem, InvertError, solve
from .loss import LossError, LossWeights, ReconKnown, recon_loss
from .model import InverseNet, ModelConfigError, NetConfig, load_checkpoint, save_checkpoint
from .optics import ExperimentConfig, OpticsError
from .train import (
    TrainConfig,
    TrainError,
    ablation_suite,
    evaluate,
    format_metrics_row,
    train_loop,
    write_metrics_csv,
)

log = logging.getLogger(__name__)


class CliError(ValueError):
    """Bad command line or configuration file."""


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


def default_config() -> dict:
    """The full effective configuration with every field at its default."""
    return {
        "synthesis": {
            "films": [t.name for t in builtin_films()],
            "substrates": [t.name for t in builtin_substrates()],
            "lambda_min": LAMBDA_MIN,
            "lambda_max": LAMBDA_MAX,
            "n_lambda": 64,
            "d_min": 1.0,
            "d_max": 96.0,
            "n_thickness": 20,
            "theta1_deg": 70.0,
            "split_ratios": [0.8, 0.1, 0.1],
            "seed": 0,
        },
        "net": {
            "hidden_width": 64,
            "encoder_layers": 10,
            "attention_dk": 8,
            "use_attention": True,
            "norm_eps": 1e-5,
            "seed": 0,
        },
        "train": {
            "learning_rate": 1e-3,
            "weight_decay": 1e-4,
            "batch_size": 256,
            "epochs": 30,
            "w_fit": 1.0,
            "w_recon": 1.0,
            "seed": 0,
            "eval_threshold": 0.05,
        },
        "fit": {
            "bounds": [[1.0, 5.0], [0.0, 5.0], [1.0, 200.0]],
            "starts": 64,
            "tol": 1e-12,
            "seed": 0,
        },
    }


def _reject_unknown(given: dict, allowed: dict, where: str) -> None:
    for key in given:
        if key not in allowed:
            raise CliError(f"unknown configuration key {where + str(key)!r}")
        if isinstance(allowed[key], dict):
            if not isinstance(given[key], dict):
                raise CliError(f"configuration section {key!r} must be an object")
            _reject_unknown(given[key], allowed[key], f"{key}.")


def _parse_set(item: str) -> tuple[str, str, object]:
    head, sep, raw = item.partition("=")
    if not sep:
        raise CliError(f"--set needs section.key=value, got {item!r}")
    section, dot, key = head.partition(".")
    if not dot or not section or not key:
        raise CliError(f"--set needs section.key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration: defaults, then file, then flag overrides."""

    synthesis: dict
    net: dict
    train: dict
    fit: dict

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        cfg = default_config()
        path = getattr(args, "config", None)
        if path:
            with open(path) as f:
                try:
                    given = json.load(f)
                except json.JSONDecodeError as e:
                    raise CliError(f"{path}: not valid JSON ({e})") from None
            if not isinstance(given, dict):
                raise CliError(f"{path}: top level must be an object")
            _reject_unknown(given, cfg, "")
            for section, fields in given.items():
                cfg[section].update(fields)
        for item in getattr(args, "set", None) or []:
            section, key, value = _parse_set(item)
            if section not in cfg or key not in cfg[section]:
                raise CliError(f"unknown configuration key {section}.{key!r}")
            cfg[section][key] = value
        if getattr(args, "seed", None) is not None:
            for section in cfg.values():
                section["seed"] = args.seed
        if getattr(args, "theta1_deg", None) is not None:
            cfg["synthesis"]["theta1_deg"] = args.theta1_deg
        if getattr(args, "threshold", None) is not None:
            cfg["train"]["eval_threshold"] = args.threshold
        if getattr(args, "loss_weights", None) is not None:
            parts = args.loss_weights.split(",")
            if len(parts) != 2:
                raise CliError(f"--loss-weights needs W_FIT,W_RECON, got {args.loss_weights!r}")
            try:
                cfg["train"]["w_fit"] = float(parts[0])
                cfg["train"]["w_recon"] = float(parts[1])
            except ValueError:
                raise CliError(f"--loss-weights needs two numbers, got {args.loss_weights!r}") from None
        return cls(**copy.deepcopy(cfg))

    def plan(self) -> SynthesisPlan:
        s = self.synthesis
        films = {t.name: t for t in builtin_films()}
        subs = {t.name: t for t in builtin_substrates()}
        try:
            film_tables = tuple(films[name] for name in s["films"])
        except KeyError as e:
            raise CliError(f"unknown film {e.args[0]!r}; available: {sorted(films)}") from None
        try:
            sub_tables = tuple(subs[name] for name in s["substrates"])
        except KeyError as e:
            raise CliError(f"unknown substrate {e.args[0]!r}; available: {sorted(subs)}") from None
        return SynthesisPlan(
            films=film_tables,
            substrates=sub_tables,
            lambda_grid=uniform_grid(s["lambda_min"], s["lambda_max"], s["n_lambda"]),
            thickness_levels=uniform_grid(s["d_min"], s["d_max"], s["n_thickness"]),
            cfg=ExperimentConfig(s["theta1_deg"], s["lambda_min"]),
            split_ratios=tuple(s["split_ratios"]),
            seed=s["seed"],
        )

    def net_config(self) -> NetConfig:
        n = self.net
        return NetConfig(
            hidden_width=n["hidden_width"], encoder_layers=n["encoder_layers"],
            attention_dk=n["attention_dk"], use_attention=n["use_attention"],
            norm_eps=n["norm_eps"], seed=n["seed"],
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            learning_rate=t["learning_rate"], weight_decay=t["weight_decay"],
            batch_size=t["batch_size"], epochs=t["epochs"],
            weights=LossWeights(t["w_fit"], t["w_recon"]),
            seed=t["seed"], eval_threshold=t["eval_threshold"],
        )

    def to_json(self) -> str:
        sections = {"synthesis": self.synthesis, "net": self.net,
                    "train": self.train, "fit": self.fit}
        return json.dumps(sections, indent=2, sort_keys=True) + "\n"


def _prepare_out(args: argparse.Namespace, cfg: RunConfig) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    _atomic_write(os.path.join(out, "config.json"), cfg.to_json())
    return out


def _open_log(out: str) -> logging.Handler:
    handler = logging.FileHandler(os.path.join(out, "run.log"), mode="w")
    # no timestamps: identical runs produce identical logs
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("ellipsinv")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    return handler


def _close_log(handler: logging.Handler) -> None:
    logging.getLogger("ellipsinv").removeHandler(handler)
    handler.close()


def _manifest_experiment(manifest) -> ExperimentConfig:
    # wavelength is per record; the config only carries geometry and ambient
    return ExperimentConfig(manifest.theta1_deg, LAMBDA_MIN, manifest.n1, manifest.k1)


def table3_row(report) -> str:
    """Accuracy n2/k2/d, MAE, R2 to three decimals, space separated."""
    return (f"{report.accuracy_n2:.3f} {report.accuracy_k2:.3f} "
            f"{report.accuracy_d:.3f} {report.mae:.3f} {report.r2:.3f}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_args(args)
    out = _prepare_out(args, cfg)
    handler = _open_log(out)
    try:
        plan = cfg.plan()
        records = synthesize(plan)
        manifest = build_manifest(plan, records)
        write_dataset(out, records, manifest)
        counts: dict[tuple[str, str], dict[str, int]] = {}
        for r in records:
            combo = counts.setdefault((r.film_id, r.substrate_id), {"train": 0, "val": 0, "test": 0})
            combo[r.split] += 1
        for (film, sub), c in sorted(counts.items()):
            print(f"{film}|{sub} train={c['train']} val={c['val']} test={c['test']}")
        print(f"total {len(records)} records -> {out}")
        log.info("synthesized %d records over %d combinations", len(records), len(counts))
        return 0
    finally:
        _close_log(handler)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_args(args)
    out = _prepare_out(args, cfg)
    handler = _open_log(out)
    try:
        records, manifest = read_dataset(args.data)
        net = InverseNet(cfg.net_config())
        result = train_loop(net, records, manifest.norm, _manifest_experiment(manifest), cfg.train_config())
        write_metrics_csv(os.path.join(out, "metrics.csv"), result.history)
        save_checkpoint(
            os.path.join(out, "checkpoint.bin"),
            result.net,
            extra={
                "best_epoch": result.best_epoch,
                "best_val_mae": result.best_val_mae,
                "aborted": result.aborted,
                "abort_reason": result.abort_reason,
            },
        )
        if result.aborted:
            print(f"training aborted: {result.abort_reason}", file=sys.stderr)
            print(f"last good checkpoint (epoch {result.best_epoch}) kept in {out}", file=sys.stderr)
            return 1
        print(f"best epoch {result.best_epoch} val MAE {result.best_val_mae:.6f} -> {out}")
        return 0
    finally:
        _close_log(handler)


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_args(args)
    out = _prepare_out(args, cfg)
    handler = _open_log(out)
    try:
        records, manifest = read_dataset(args.data)
        chosen = [r for r in records if r.split == args.split]
        if not chosen:
            raise CliError(f"no records in split {args.split!r}")
        net, _ = load_checkpoint(args.checkpoint)
        report = evaluate(net, chosen, manifest.norm, cfg.train["eval_threshold"])
        row = table3_row(report)
        print(row)
        _atomic_write(os.path.join(out, "eval.txt"),
                      row + "\n" + format_metrics_row(args.split, report) + "\n")
        log.info("%s", format_metrics_row(args.split, report))
        return 0
    finally:
        _close_log(handler)


def _problem_from_args(args: argparse.Namespace, cfg: RunConfig) -> FitProblem:
    fit = cfg.fit
    bounds = tuple(tuple(b) for b in fit["bounds"])
    if args.data:
        records, manifest = read_dataset(args.data)
        if not (0 <= args.index < len(records)):
            raise CliError(f"--index {args.index} outside dataset of {len(records)} records")
        r = records[args.index]
        exp = ExperimentConfig(manifest.theta1_deg, r.lambda_nm, manifest.n1, manifest.k1)
        print(f"record {args.index}: film={r.film_id} substrate={r.substrate_id} "
              f"lambda={r.lambda_nm:g} true (n2={r.n2:g}, k2={r.k2:g}, d={r.d_nm:g})")
        return FitProblem(n3=r.n3, k3=r.k3, lambda_nm=r.lambda_nm,
                          psi_deg=r.psi_deg, delta_deg=r.delta_deg, cfg=exp,
                          bounds=bounds, starts=fit["starts"], tol=fit["tol"], seed=fit["seed"])
    needed = {"psi": args.psi, "delta": args.delta, "n3": args.n3,
              "k3": args.k3, "lambda_nm": args.lambda_nm}
    missing = [k for k, v in needed.items() if v is None]
    if missing:
        raise CliError(f"give --data or all of --psi --delta --n3 --k3 --lambda-nm (missing {missing})")
    exp = ExperimentConfig(cfg.synthesis["theta1_deg"], args.lambda_nm)
    return FitProblem(n3=args.n3, k3=args.k3, lambda_nm=args.lambda_nm,
                      psi_deg=args.psi, delta_deg=args.delta, cfg=exp,
                      bounds=bounds, starts=fit["starts"], tol=fit["tol"], seed=fit["seed"])


def cmd_invert(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_args(args)
    out = _prepare_out(args, cfg)
    handler = _open_log(out)
    try:
        problem = _problem_from_args(args, cfg)
        result = solve(problem)
        lines = ["n2,k2,d_nm,residual"]
        for m in result.minima:
            lines.append(f"{m.n2:.17g},{m.k2:.17g},{m.d_nm:.17g},{m.residual:.17g}")
        _atomic_write(os.path.join(out, "minima.csv"), "\n".join(lines) + "\n")
        print(f"{result.converged_starts}/{result.starts} starts converged, "
              f"{len(result.minima)} distinct minima")
        if result.found:
            for m in result.minima:
                print(f"  n2={m.n2:.6f} k2={m.k2:.6f} d={m.d_nm:.4f} nm residual={m.residual:.3e}")
        else:
            print("no solution: no start reached a residual below tolerance inside the bounds")
        return 0
    finally:
        _close_log(handler)


def _recon_graph_check(seed: int, points: int, tol: float):
    """Finite-difference check of the full reconstruction-loss graph."""
    from .invert import _IDENTITY_STATS

    rng = np.random.default_rng(seed)
    worst = None
    for _ in range(points):
        known = ReconKnown(
            n3=rng.uniform(1.5, 4.0, (2,)), k3=rng.uniform(0.0, 2.0, (2,)),
            lambda_nm=rng.uniform(400.0, 900.0, (2,)),
            psi_deg=rng.uniform(5.0, 85.0, (2,)), delta_deg=rng.uniform(-170.0, 170.0, (2,)),
        )
        exp = ExperimentConfig(rng.uniform(50.0, 75.0), 500.0)
        params = np.column_stack([
            rng.uniform(1.2, 4.5, (2,)), rng.uniform(0.0, 3.0, (2,)), rng.uniform(5.0, 150.0, (2,)),
        ])

        def build(tape, leaf):
            value, _ = recon_loss(leaf, known, _IDENTITY_STATS, exp)
            return value

        report = grad_check(build, [params], step=1e-5, tol=tol)
        if not report.passed:
            return report
        if worst is None or report.max_rel_err > worst.max_rel_err:
            worst = report
    return worst


def cmd_gradcheck(args: argparse.Namespace) -> int:
    lines = []
    failed = False
    for name in sorted(primitive_check_cases()):
        report = sweep_primitive(name, points=args.points, seed=args.seed or 0)
        status = "ok" if report.passed else "FAIL"
        failed = failed or not report.passed
        lines.append(f"{status} {name:24s} max_rel_err={report.max_rel_err:.3e} checks={report.n_checked}")
    recon = _recon_graph_check(seed=args.seed or 0, points=max(1, args.points // 5), tol=1e-5)
    status = "ok" if recon.passed else "FAIL"
    failed = failed or not recon.passed
    lines.append(f"{status} {'reconstruction-graph':24s} max_rel_err={recon.max_rel_err:.3e} checks={recon.n_checked}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        cfg = RunConfig.from_args(args)
        out = _prepare_out(args, cfg)
        _atomic_write(os.path.join(out, "gradcheck.txt"), text + "\n")
    return 1 if failed else 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_args(args)
    out = _prepare_out(args, cfg)
    handler = _open_log(out)
    try:
        records, manifest = read_dataset(args.data)
        report = ablation_suite(records, manifest.norm, _manifest_experiment(manifest),
                                cfg.net_config(), cfg.train_config(), eval_split=args.split)
        table = report.table()
        print(table)
        _atomic_write(os.path.join(out, "ablation.txt"), table + "\n")
        return 0
    finally:
        _close_log(handler)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="JSON run configuration; unknown keys are rejected")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one configuration field (repeatable)")
    p.add_argument("--seed", type=int, help="override every section's seed")
    p.add_argument("--theta1-deg", type=float, dest="theta1_deg",
                   help="incidence angle override (degrees)")
    p.add_argument("--threshold", type=float, help="accuracy threshold override")
    p.add_argument("--loss-weights", dest="loss_weights", metavar="W_FIT,W_RECON",
                   help="loss weight override")
    p.add_argument("--device-precision", choices=["float64"], default="float64",
                   help="reserved; computation is fixed to 64-bit")
    p.add_argument("--out", required=out_required, help="output directory for this run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ellipsinv",
        description="Spectroscopic-ellipsometry toolkit: synthesize data, train and "
                    "evaluate the inverse network, invert single measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the inverse network")
    p.add_argument("--data", required=True, help="dataset directory from synth")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("invert", help="classical multi-start inversion of one record")
    p.add_argument("--data", help="dataset directory; pair with --index")
    p.add_argument("--index", type=int, default=0, help="record index inside --data")
    p.add_argument("--psi", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--n3", type=float)
    p.add_argument("--k3", type=float)
    p.add_argument("--lambda-nm", type=float, dest="lambda_nm")
    _add_common(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.add_argument("--points", type=int, default=25, help="random points per primitive")
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare the ablation variants")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OpticsError, DatasetError, ModelConfigError, LossError,
            TrainError, InvertError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
