"""Command-line entry point: ``untied-mixup {transform,verify,train,sweep}``.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import policy as pa
from . import trainer, verify

logger = logging.getLogger("untied_mixup")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- policy specs -----------------------------------------------------------


@dataclass
class ParsedPolicy:
    value: pa.Policy | pa.UntiedScheme
    label: str


def parse_policy_spec(spec: str, n_bins: int = pa.DEFAULT_BINS) -> ParsedPolicy:
    """``beta:<a>,<b>`` | ``point:<lam>`` | ``uniform`` | ``file:<path>``, then
    optional ``|D``, ``|U`` or ``|Du:<gamma-file>`` suffixes applied left to right."""
    base, *maps = [part.strip() for part in spec.split("|")]
    kind, _, arg = base.partition(":")
    try:
        if kind == "beta":
            try:
                a, b = (float(v) for v in arg.split(","))
            except ValueError:
                raise UsageError(f"policy spec {spec!r}: beta needs '<alpha>,<beta>', got {arg!r}") from None
            value, label = pa.beta_policy(a, b, n_bins), f"B({a:g},{b:g})"
        elif kind == "point":
            try:
                lam = float(arg)
            except ValueError:
                raise UsageError(f"policy spec {spec!r}: point location {arg!r} is not a number") from None
            value, label = pa.point_policy(lam, n_bins), f"point({lam:g})"
        elif kind == "uniform":
            value, label = pa.uniform_policy(n_bins), "B(1,1)"
        elif kind == "file":
            value, label = pa.load_policy(arg), Path(arg).stem
        else:
            raise UsageError(f"policy spec {spec!r}: unknown policy kind {kind!r}")
        for m in maps:
            name, _, garg = m.partition(":")
            if isinstance(value, pa.UntiedScheme):
                raise UsageError(f"policy spec {spec!r}: cannot apply {name!r} to an Untied MixUp scheme")
            if name == "D":
                value, label = pa.transform_D(value), f"D({label})"
            elif name == "U":
                value, label = pa.transform_U(value), f"U({label})"
            elif name == "Du":
                if not garg:
                    raise UsageError(f"policy spec {spec!r}: Du needs a gamma file, e.g. '|Du:gamma.txt'")
                value = pa.transform_Du(pa.UntiedScheme(value, pa.load_weighting(garg)))
                label = f"Du({label},{Path(garg).stem})"
            else:
                raise UsageError(f"policy spec {spec!r}: unknown map {name!r}")
    except (pa.PolicyError, OSError) as exc:
        raise UsageError(f"policy spec {spec!r}: {exc}") from None
    return ParsedPolicy(value, label)


def parse_scheme_entry(entry: str, n_bins: int = pa.DEFAULT_BINS) -> tuple[str, ParsedPolicy | None]:
    """``baseline`` or ``<mix|dat|umix>:<policy-spec>``."""
    entry = entry.strip()
    if entry == "baseline":
        return "baseline", None
    tag, _, spec = entry.partition(":")
    if tag not in ("mix", "dat", "umix") or not spec:
        raise UsageError(f"scheme entry {entry!r}: expected 'baseline' or '<mix|dat|umix>:<policy>'")
    parsed = parse_policy_spec(spec, n_bins)
    if tag == "umix" and not isinstance(parsed.value, pa.UntiedScheme):
        raise UsageError(f"scheme entry {entry!r}: umix needs an Untied scheme, e.g. 'umix:beta:1.4,0.7|U'")
    if tag != "umix" and isinstance(parsed.value, pa.UntiedScheme):
        raise UsageError(f"scheme entry {entry!r}: {tag} needs a plain policy")
    return tag, parsed


# -- config -----------------------------------------------------------------

TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "weight_decay", "eval_window", "loss",
              "architecture", "width", "embed_dim"}
DATA_KEYS = {"dataset", "n", "n_test", "flip_rate", "dim", "n_classes", "separation"}
KNOWN_KEYS = TRAIN_KEYS | DATA_KEYS | {"scheme", "schemes", "runs", "seed", "n_bins", "jobs", "out"}

DEFAULTS = {"dataset": "noisy_blobs", "n": 500, "runs": 10, "seed": 0, "n_bins": pa.DEFAULT_BINS}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from None
    unknown = set(cfg) - KNOWN_KEYS
    if unknown:
        raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
    return cfg


def _merged(args: argparse.Namespace) -> dict:
    cfg = {**DEFAULTS, **load_config(args.config)}
    for key in ("seed", "jobs", "out"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    return cfg


def build_configs(cfg: dict, entries: list[str]) -> list[trainer.TrainConfig]:
    """One TrainConfig per scheme entry (seed filled per run later)."""
    if not entries:
        raise UsageError("no schemes given")
    out = []
    base = {k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    for entry in entries:
        tag, parsed = parse_scheme_entry(entry, int(cfg["n_bins"]))
        kw = dict(base, scheme=tag, policy_label="-" if parsed is None else parsed.label)
        if isinstance(parsed and parsed.value, pa.UntiedScheme):
            kw.update(policy=parsed.value.policy, weighting=parsed.value.weighting)
        elif parsed is not None:
            kw["policy"] = parsed.value
        try:
            out.append(trainer.TrainConfig(**kw))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"scheme entry {entry!r}: {exc}") from None
    return out


def make_data(cfg: dict, seed: int):
    kw = {k: cfg[k] for k in DATA_KEYS - {"dataset", "n"} if k in cfg}
    try:
        return trainer.make_toy_dataset(cfg["dataset"], int(cfg["n"]), seed, **kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"dataset: {exc}") from None


def _with_seed(config: trainer.TrainConfig, seed: int) -> trainer.TrainConfig:
    return trainer.TrainConfig(**{**vars(config), "seed": seed})


# -- io helpers -------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-." else "_" for c in text).strip("_")


def run_filename(config: trainer.TrainConfig, seed: int) -> str:
    parts = [config.model_label] + ([] if config.policy_label == "-" else [config.policy_label])
    return "_".join(_slug(p) for p in parts) + f"_seed{seed}.csv"


# -- subcommands ------------------------------------------------------------


def cmd_transform(args) -> int:
    n_bins = args.n_bins
    parsed = parse_policy_spec(args.policy, n_bins)
    if isinstance(parsed.value, pa.UntiedScheme):
        raise UsageError("--policy must describe a plain policy for transform")
    p = parsed.value
    out = Path(args.out)
    if args.map == "D":
        write_atomic(out / "policy.txt", pa.format_policy(pa.transform_D(p)))
    elif args.map == "U":
        scheme = pa.transform_U(p)
        write_atomic(out / "policy.txt", pa.format_policy(scheme.policy))
        write_atomic(out / "gamma.txt", pa.format_weighting(scheme.weighting))
    else:
        if not args.gamma:
            raise UsageError("--map Du needs --gamma <file>")
        try:
            w = pa.load_weighting(args.gamma)
            scheme = pa.UntiedScheme(p, w)
        except (OSError, pa.PolicyError) as exc:
            raise UsageError(f"--gamma: {exc}") from None
        write_atomic(out / "policy.txt", pa.format_policy(pa.transform_Du(scheme)))
    print(f"wrote {args.map}({parsed.label}) to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    rows = verify.run_suite(args.suite, args.seed)
    text = verify.format_rows(rows)
    write_atomic(Path(args.out) / f"verify_{args.suite}.csv", text)
    failed = [r for r in rows if not r.passed]
    width = max(len(r.check) for r in rows)
    for r in rows:
        if args.verbose or not r.passed or not r.check.endswith("_equality"):
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.check:<{width}}  {r.config}  "
                  f"value={r.value:.3g} tol={r.tolerance:.3g}")
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed")
    return EXIT_FAILED if failed else EXIT_OK


def _run_one(job):
    config, cfg, seed = job
    train_set, test_set = make_data(cfg, seed)
    report = trainer.train(_with_seed(config, seed), train_set, test_set)
    report.model = None
    return report


def run_sweep(cfg: dict, configs: list[trainer.TrainConfig], jobs: int = 1):
    runs, seed0 = int(cfg["runs"]), int(cfg["seed"])
    work = [(c, cfg, seed0 + r) for c in configs for r in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_one, work))
    else:
        reports = [_run_one(w) for w in work]
    grouped = [reports[i * runs:(i + 1) * runs] for i in range(len(configs))]
    return grouped


def cmd_train(args) -> int:
    cfg = _merged(args)
    entry = args.scheme or cfg.get("scheme")
    if entry is None:
        raise UsageError("train needs a scheme (--scheme or 'scheme' in the config)")
    if args.policy and entry != "baseline":
        entry = f"{entry.partition(':')[0]}:{args.policy}"
    config = build_configs(cfg, [entry])[0]
    seed = int(cfg["seed"])
    report = _run_one((config, cfg, seed))
    out = Path(cfg.get("out", "."))
    path = out / run_filename(config, seed)
    write_atomic(path, report.to_csv())
    print(f"{config.model_label} {config.policy_label} seed={seed}: final_error={report.final_error:.4f} -> {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _merged(args)
    entries = cfg.get("schemes")
    if entries is None or isinstance(entries, str):
        raise UsageError("sweep config needs a 'schemes' list")
    configs = build_configs(cfg, list(entries))
    if int(cfg["runs"]) < 2:
        raise UsageError("a sweep needs runs >= 2 for confidence intervals")
    grouped = run_sweep(cfg, configs, int(cfg.get("jobs", 1)))
    out = Path(cfg.get("out", "."))
    rows = []
    for config, reports in zip(configs, grouped):
        for r, report in enumerate(reports):
            seed = int(cfg["seed"]) + r
            write_atomic(out / "runs" / run_filename(config, seed), report.to_csv())
        rows.append(trainer.table_row(config, reports))
    table = trainer.format_table(rows)
    write_atomic(out / "table.csv", table)
    print(table, end="")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="untied-mixup", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("transform", help="apply D, U or Du to a policy")
    p.add_argument("--policy", required=True, help="policy spec, e.g. beta:2.2,0.9 or file:p.txt")
    p.add_argument("--map", required=True, choices=("D", "U", "Du"))
    p.add_argument("--gamma", help="weighting file for --map Du")
    p.add_argument("--n-bins", type=int, default=pa.DEFAULT_BINS)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("verify", help="run the numerical equivalence checks")
    p.add_argument("--suite", choices=("theorems", "concentration", "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_verify)

    for name, func, helptext in (("train", cmd_train, "train a single run"),
                                 ("sweep", cmd_sweep, "train all schemes x runs and aggregate")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out")
        if name == "train":
            p.add_argument("--scheme", help="baseline or <mix|dat|umix>:<policy>")
            p.add_argument("--policy", help="policy spec overriding the scheme's policy")
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"untied-mixup: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except trainer.TrainingDiverged as exc:
        print(f"untied-mixup: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
