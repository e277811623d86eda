"""Command-line front door: forge, construct, verify, bench, serve, sweep.

Exit codes: 0 success (``verify``: the suspect is judged stolen), 1 ``verify``
judged the suspect independent, 2 usage or runtime error.

A ``--config`` JSON object supplies defaults for any flag (keys are the long
flag names with dashes or underscores); flags given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .fingerprint import FingerprintPair, construct_fingerprint
from .forge import ModelEnsemble
from .metrics import LocalModel, verify, write_trend
from .models import load_model
from .pipeline import benchmark, forge_scenario, sweep_ensemble, sweep_n
from .protocol import RemoteModel, serve
from .rng import derive_seed
from .scenarios import SCENARIOS
from .textio import dumps, fmt_float

log = logging.getLogger("metav")

EXIT_OK, EXIT_NEGATIVE, EXIT_ERROR = 0, 1, 2


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    seed: int = 0
    out: str | None = None
    task: str | None = None
    ensemble: str | None = None
    pair: str | None = None
    model: str | None = None
    endpoint: str | None = None
    n: int = 100
    iters: int = 1000
    lr: float = 1e-3
    rho: float = 0.5
    reps: int = 5
    standardize: bool = False
    param: str = "n"
    values: list = field(default_factory=list)
    host: str = "127.0.0.1"
    port: int = 8080
    timeout: float = 10.0


def _seed_list(master: int, reps: int, tag: str) -> list[int]:
    return [derive_seed(master, tag, i) for i in range(reps)]


def _need(cfg: RunConfig, *names: str) -> None:
    missing = [f"--{n}" for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        raise UsageError(f"{cfg.subcommand}: missing required option(s) {', '.join(missing)}")


def _out_dir(cfg: RunConfig) -> Path:
    _need(cfg, "out")
    out = Path(cfg.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(path: str | None, what: str, is_dir: bool = False) -> Path:
    p = Path(path)
    if not (p.is_dir() if is_dir else p.is_file()):
        raise UsageError(f"{what} {p} does not exist")
    return p


def _check_hyper(cfg: RunConfig) -> None:
    if cfg.n < 1:
        raise UsageError("--n must be positive")
    if cfg.iters < 1:
        raise UsageError("--iters must be positive")
    if not cfg.lr > 0:
        raise UsageError("--lr must be positive")
    if cfg.reps < 1:
        raise UsageError("--reps must be positive")


def cmd_forge(cfg: RunConfig) -> int:
    _need(cfg, "task")
    if cfg.task not in SCENARIOS:
        raise UsageError(f"--task must be one of {sorted(SCENARIOS)}")
    out = _out_dir(cfg)
    ens = forge_scenario(cfg.task, cfg.seed)
    ens.save(out)
    flagged = [s.id for s in ens.suspects if not s.utility_ok]
    print(f"forged {len(ens.suspects)} suspects for {cfg.task} into {out}"
          + (f" ({len(flagged)} positives flagged for utility)" if flagged else ""))
    return EXIT_OK


def cmd_construct(cfg: RunConfig) -> int:
    _need(cfg, "ensemble")
    ens_dir = _existing(cfg.ensemble, "ensemble directory", is_dir=True)
    _check_hyper(cfg)
    out = _out_dir(cfg)
    ens = ModelEnsemble.load(ens_dir)
    split = ens.construction()
    if not split.positives or not split.negatives:
        raise UsageError("construction split is one-sided; it needs positive and negative suspects")
    seed = derive_seed(cfg.seed, "construct")
    pair = construct_fingerprint(split, n=cfg.n, iters=cfg.iters, lr=cfg.lr, seed=seed,
                                 standardize=cfg.standardize,
                                 log_every=max(cfg.iters // 10, 1), logger=log)
    pair.save(out / "pair.json")
    with open(out / "loss_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(pair.loss_trace):
            w.writerow([i + 1, fmt_float(v)])
    print(f"wrote {out / 'pair.json'} (N={pair.n}, final loss {pair.loss_trace[-1]:.4f})")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    _need(cfg, "pair")
    if not 0.0 < cfg.rho < 1.0:
        raise UsageError("--rho must lie strictly between 0 and 1")
    if (cfg.model is None) == (cfg.endpoint is None):
        raise UsageError("verify needs exactly one of --model or --endpoint")
    pair = FingerprintPair.load(_existing(cfg.pair, "pair file"))
    if cfg.model is not None:
        suspect = LocalModel(load_model(_existing(cfg.model, "model file")))
    else:
        suspect = RemoteModel(cfg.endpoint, timeout=cfg.timeout, d_in=pair.d_in, d_out=pair.d_out)
    res = verify(pair, suspect, cfg.rho)
    print(f"p_plus {fmt_float(res.p_plus)}  rho {fmt_float(res.rho)}  decision {res.decision}")
    if cfg.out is not None:
        out = _out_dir(cfg)
        (out / "verification.json").write_text(
            dumps({"p_plus": res.p_plus, "rho": res.rho, "decision": res.decision}) + "\n", encoding="utf-8")
    return EXIT_OK if res.decision else EXIT_NEGATIVE


def cmd_bench(cfg: RunConfig) -> int:
    _need(cfg, "ensemble")
    ens_dir = _existing(cfg.ensemble, "ensemble directory", is_dir=True)
    _check_hyper(cfg)
    out = _out_dir(cfg)
    ens = ModelEnsemble.load(ens_dir)
    report = benchmark(ens, _seed_list(cfg.seed, cfg.reps, "bench"), n=cfg.n,
                       iters=cfg.iters, lr=cfg.lr, standardize=cfg.standardize)
    report.write(out)
    sys.stdout.write(report.summary())
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    _need(cfg, "ensemble")
    ens_dir = _existing(cfg.ensemble, "ensemble directory", is_dir=True)
    _check_hyper(cfg)
    if cfg.param not in ("n", "fraction"):
        raise UsageError("--param must be 'n' or 'fraction'")
    if len(cfg.values) < 2:
        raise UsageError("--values needs at least two sweep points")
    out = _out_dir(cfg)
    ens = ModelEnsemble.load(ens_dir)
    seeds = _seed_list(cfg.seed, cfg.reps, "sweep")
    kw = dict(iters=cfg.iters, lr=cfg.lr, standardize=cfg.standardize)
    if cfg.param == "n":
        if any(v < 1 or v != int(v) for v in cfg.values):
            raise UsageError("--values for n must be positive integers")
        points = sweep_n(ens, [int(v) for v in cfg.values], seeds, **kw)
    else:
        if any(not 0 < v <= 1 for v in cfg.values):
            raise UsageError("--values for fraction must lie in (0, 1]")
        points = sweep_ensemble(ens, cfg.values, seeds, n=cfg.n, **kw)
    write_trend(points, out / f"trend_{cfg.param}.csv", cfg.param)
    for p in points:
        print(f"{cfg.param}={p.value:g}  mean ARUC {p.mean:.4f}")
    return EXIT_OK


def cmd_serve(cfg: RunConfig) -> int:
    _need(cfg, "model")
    model = load_model(_existing(cfg.model, "model file"))
    print(f"serving {cfg.model} on http://{cfg.host}:{cfg.port}", flush=True)
    try:
        serve(model, cfg.host, cfg.port, block=True)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


COMMANDS = {"forge": cmd_forge, "construct": cmd_construct, "verify": cmd_verify,
            "bench": cmd_bench, "serve": cmd_serve, "sweep": cmd_sweep}


def _bool_flag(p: argparse.ArgumentParser, name: str, help: str) -> None:
    p.add_argument(f"--{name}", dest=name, action="store_true", default=None, help=help)
    p.add_argument(f"--no-{name}", dest=name, action="store_false", help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--config", help="JSON file with default option values")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("--ensemble", help="ensemble directory written by `forge`")
    hyper.add_argument("--n", type=int, help="fingerprint size N (default 100)")
    hyper.add_argument("--iters", type=int, help="construction iterations L (default 1000)")
    hyper.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    _bool_flag(hyper, "standardize", "z-score suspect outputs by target statistics (default off)")

    parser = argparse.ArgumentParser(prog="metav", description="Task-agnostic model fingerprinting.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("forge", parents=[common], help="train a target and forge its suspect ensemble")
    p.add_argument("--task", help=f"one of {', '.join(SCENARIOS)}")

    sub.add_parser("construct", parents=[common, hyper], help="build a fingerprint/verifier pair")

    p = sub.add_parser("verify", parents=[common], help="verify one suspect model")
    p.add_argument("--pair", help="pair file written by `construct`")
    p.add_argument("--model", help="suspect model file")
    p.add_argument("--endpoint", help="suspect prediction API base URL")
    p.add_argument("--rho", type=float, help="decision threshold in (0, 1) (default 0.5)")
    p.add_argument("--timeout", type=float, help="HTTP timeout in seconds (default 10)")

    p = sub.add_parser("bench", parents=[common, hyper], help="repeated construction and holdout R/U report")
    p.add_argument("--reps", type=int, help="repetitions (default 5)")

    p = sub.add_parser("sweep", parents=[common, hyper], help="holdout ARUC over N or ensemble fraction")
    p.add_argument("--param", choices=("n", "fraction"), help="swept quantity (default n)")
    p.add_argument("--values", type=float, nargs="+", help="sweep points")
    p.add_argument("--reps", type=int, help="repetitions per point (default 5)")

    p = sub.add_parser("serve", parents=[common], help="serve a model over HTTP (blocks)")
    p.add_argument("--model", help="model file")
    p.add_argument("--host", help="bind address (default 127.0.0.1)")
    p.add_argument("--port", type=int, help="port (default 8080)")
    return parser


def load_config(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path}: top level must be an object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge dataclass defaults, then config-file values, then explicit flags."""
    known = set(RunConfig.__dataclass_fields__) - {"subcommand"}
    merged = {}
    if args.config:
        conf = load_config(args.config)
        unknown = sorted(set(conf) - known)
        if unknown:
            raise UsageError(f"config {args.config}: unknown key(s) {', '.join(unknown)}")
        merged.update(conf)
    for k, v in vars(args).items():
        if k in known and v is not None:
            merged[k] = v
    for k, v in merged.items():
        merged[k] = _coerce(k, v)
    return RunConfig(args.subcommand, **merged)


_INT_KEYS = {"seed", "n", "iters", "reps", "port"}
_FLOAT_KEYS = {"lr", "rho", "timeout"}


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if key == "values":
            if not isinstance(value, list):
                raise ValueError
            return [float(v) for v in value]
        if key == "standardize" and not isinstance(value, bool):
            raise ValueError
    except (TypeError, ValueError):
        raise UsageError(f"option {key}: invalid value {value!r}") from None
    return value


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        return COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"metav {args.subcommand}: error: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001  (any failure maps to exit 2)
        log.debug("traceback", exc_info=True)
        print(f"metav {args.subcommand}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
