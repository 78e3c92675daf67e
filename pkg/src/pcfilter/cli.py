"""Command-line entry point: ``pcfilter {gen,noise,train,filter,eval,ablate}``.

Every option can also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment). Keys are option names with dashes or underscores,
e.g. ``n_steps = 4``. Flags given on the command line win over the file;
unknown keys are an error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diffcore import CheckpointError, load_checkpoint, save_checkpoint
from .experiments import (
    ABLATION_LAMBDAS,
    ABLATION_N,
    CorpusConfig,
    EvalCase,
    ablation_grid,
    held_out_cases,
    training_set,
)
from .fileio import FormatError, read_off, read_xyz, write_off, write_xyz
from .filtering import ALPHA_TABLE, FilterConfig, FilteringError, filter_cloud, trajectory_rows
from .geometry import NOISE_KINDS, GeometryError, NoiseSpec, PointCloud, add_noise
from .hybrid import (
    ABLATION_VARIANTS,
    HybridModel,
    ModelConfig,
    TrainConfig,
    TrainingError,
    build_training_set,
    train,
)
from .metrics import MetricError, evaluate
from .shapes import SHAPE_KINDS, ShapeSpec, generate

log = logging.getLogger("pcfilter")


class UsageError(Exception):
    """Bad configuration or paths, reported before any work starts."""


def _csv_list(kind):
    def parse(text):
        return [kind(v) for v in str(text).split(",") if v.strip()]
    return parse


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcfilter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="key=value file supplying option defaults")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("gen", "sample an analytic shape; writes OUT.xyz and OUT.off")
    p.add_argument("--shape", choices=SHAPE_KINDS, default="sphere")
    p.add_argument("--resolution", type=_positive_int, default=5000)
    p.add_argument("--out", type=Path, required=True, help="output path prefix")

    p = command("noise", "perturb a point cloud; sigma is relative to its bounding-sphere radius")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--noise-kind", choices=NOISE_KINDS, default="gaussian")
    p.add_argument("--out", type=Path, required=True)

    p = command("train", "train a model on generated shapes or given clean XYZ files")
    p.add_argument("--data", type=_csv_list(Path), default=[], help="comma-separated clean XYZ files")
    p.add_argument("--shapes", type=_csv_list(str), default=["sphere", "torus"],
                   help="generated training shapes, used when --data is empty")
    p.add_argument("--resolution", type=_positive_int, default=5000)
    p.add_argument("--patches-per-cloud", type=_positive_int, default=64)
    p.add_argument("--variant", choices=("hybrid", "baseline_score"), default="hybrid")
    p.add_argument("--decoder", choices=("graph", "fc"), default="graph")
    p.add_argument("--loss", choices=("emd", "l2"), default="emd")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=0.02, help="training noise scale sigma_H")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--patch-k", type=_positive_int, default=256)
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file to write")
    p.add_argument("--out", type=Path, help="loss CSV path (a PNG curve is written beside it)")

    alpha_help = "step size; suggested: " + ", ".join(f"{v} for {k}" for k, v in ALPHA_TABLE.items()).replace("%", "%%")

    p = command("filter", "filter a noisy point cloud with a trained checkpoint")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.8, help=alpha_help)
    p.add_argument("--n-steps", type=_positive_int, default=4)
    p.add_argument("--patch-k", type=_positive_int, default=256)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--dump-trajectory", type=Path, help="CSV of per-step patch states")
    p.add_argument("--out", type=Path, required=True)

    p = command("eval", "score filtered clouds against clean ones; writes a CSV, a table and a figure")
    p.add_argument("--pred", type=_csv_list(Path), default=[], help="comma-separated XYZ files to score")
    p.add_argument("--clean", type=_csv_list(Path), default=[],
                   help="clean XYZ per --pred entry (one file is reused for all)")
    p.add_argument("--mesh", type=_csv_list(Path), default=[], help="OFF mesh per --pred entry, for P2M")
    p.add_argument("--label", type=_csv_list(str), default=[], help="shape column per --pred entry")
    p.add_argument("--checkpoint", type=Path,
                   help="instead of --pred: filter generated held-out shapes with this model")
    p.add_argument("--shapes", type=_csv_list(str), default=["sphere", "torus"])
    p.add_argument("--resolution", type=_positive_int, default=5000)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--noise-kind", choices=NOISE_KINDS, default="gaussian")
    p.add_argument("--alpha", type=float, default=0.8, help=alpha_help)
    p.add_argument("--n-steps", type=_positive_int, default=4)
    p.add_argument("--patch-k", type=_positive_int, default=256)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--no-emd", action="store_true", help="skip the exact EMD column")
    p.add_argument("--out", type=Path, required=True, help="report CSV path")

    p = command("ablate", "train and compare ablation variants over N and lambda")
    p.add_argument("--variants", type=_csv_list(str), default=list(ABLATION_VARIANTS))
    p.add_argument("--n-values", type=_csv_list(int), default=list(ABLATION_N))
    p.add_argument("--lambdas", type=_csv_list(float), default=list(ABLATION_LAMBDAS))
    p.add_argument("--shapes", type=_csv_list(str), default=["sphere", "torus"])
    p.add_argument("--resolution", type=_positive_int, default=5000)
    p.add_argument("--patches-per-cloud", type=_positive_int, default=64)
    p.add_argument("--sigma", type=float, default=0.02, help="evaluation noise level")
    p.add_argument("--noise-kind", choices=NOISE_KINDS, default="gaussian")
    p.add_argument("--alpha", type=float, default=0.8, help=alpha_help)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--patch-k", type=_positive_int, default=256)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", type=Path, required=True, help="comparison CSV path")
    return parser


def _subparser(parser, name) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def read_config(path: Path, sub: argparse.ArgumentParser) -> dict:
    """Parse a key=value file into typed defaults for ``sub``; rejects unknown keys."""
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    aliases = {}
    for a in actions.values():
        aliases[a.dest] = a
        for opt in a.option_strings:
            aliases[opt.lstrip("-").replace("-", "_")] = a
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        action = aliases.get(key.replace("-", "_"))
        if action is None:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} for '{sub.prog}'")
        if isinstance(action, argparse._StoreTrueAction):
            parsed = value.lower() in ("1", "true", "yes", "on")
        else:
            try:
                parsed = action.type(value) if action.type else value
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
            if action.choices is not None and parsed not in action.choices:
                raise UsageError(f"{path}:{lineno}: {key} must be one of {sorted(action.choices)}")
        out[action.dest] = parsed
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None:
        # the subcommand name is the first non-option token
        name = next((a for a in argv if a in _subparser_names(parser)), None)
        if name is None:
            raise UsageError("--config needs a subcommand")
        sub = _subparser(parser, name)
        defaults = read_config(known.config, sub)
        sub.set_defaults(**defaults)
        # options now satisfied by the config file are no longer mandatory
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
    return parser.parse_args(argv)


def _subparser_names(parser):
    return set(parser._subparsers._group_actions[0].choices)


# ---------------------------------------------------------------- validation

def _need_file(path: Path, what: str):
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")


def _need_out(path: Path):
    parent = path.parent if path.parent != Path("") else Path(".")
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")


def _check_shapes(shapes):
    bad = [s for s in shapes if s not in SHAPE_KINDS]
    if bad or not shapes:
        raise UsageError(f"unknown shape(s) {bad}; choose from {SHAPE_KINDS}")


def _check_sigma(sigma):
    if not np.isfinite(sigma) or sigma < 0:
        raise UsageError(f"--sigma must be finite and >= 0, got {sigma}")


def _load_model(path: Path) -> HybridModel:
    params, meta = load_checkpoint(path)
    if "model" not in meta:
        raise CheckpointError(f"{path}: checkpoint has no model configuration")
    model = HybridModel(ModelConfig.from_dict(meta["model"]), seed=None)
    model.load_state_dict(params)
    return model


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    _need_out(args.out)
    cloud, mesh = generate(ShapeSpec(args.shape, args.resolution, seed=args.seed))
    write_xyz(args.out.with_suffix(".xyz"), cloud)
    write_off(args.out.with_suffix(".off"), mesh)
    print(f"wrote {args.out.with_suffix('.xyz')} ({len(cloud)} points) and {args.out.with_suffix('.off')}")


def cmd_noise(args):
    _need_file(args.input, "input cloud")
    _need_out(args.out)
    _check_sigma(args.sigma)
    cloud = read_xyz(args.input)
    write_xyz(args.out, add_noise(cloud, NoiseSpec(args.noise_kind, args.sigma, args.seed)))
    print(f"wrote {args.out}")


def cmd_train(args):
    for path in args.data:
        _need_file(path, "training cloud")
    _need_out(args.checkpoint)
    if args.out is not None:
        _need_out(args.out)
    if not args.data:
        _check_shapes(args.shapes)
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    model_config = ModelConfig(variant=args.variant,
                               decoder_kind="graph_conv" if args.decoder == "graph" else "fully_connected")
    config = TrainConfig(lam=args.lam, sigma_h=args.sigma, lr=args.lr, steps=args.steps,
                         patch_k=args.patch_k, seed=args.seed, loss=args.loss)
    if args.data:
        clouds = [(p.stem, read_xyz(p)) for p in args.data]
        dataset = build_training_set(clouds, args.patch_k, args.patches_per_cloud, args.seed)
    else:
        corpus = CorpusConfig(tuple(args.shapes), args.resolution, args.patches_per_cloud, args.seed)
        dataset = training_set(corpus, args.patch_k)
    model = HybridModel(model_config, seed=args.seed)
    log.info("training %d parameters on %d patches for %d steps", model.num_parameters(), len(dataset), args.steps)

    def progress(s):
        if s.step % 100 == 0:
            log.info("step %d  L_hybrid=%.5g  L_short=%.5g  L_long=%.5g", s.step, s.hybrid, s.short, s.long)

    _, trace = train(model, dataset, config, progress)
    meta = {"model": model_config.to_dict(),
            "train": {"lambda": config.lam, "sigma_h": config.sigma_h, "lr": config.lr, "steps": config.steps,
                      "patch_k": config.patch_k, "seed": config.seed, "loss": config.loss}}
    save_checkpoint(args.checkpoint, model.state_dict(), meta)
    print(f"wrote {args.checkpoint} ({model.num_parameters()} parameters)")
    if args.out is not None:
        from .plotting import loss_curve

        _write_csv(args.out, ["step", "L_long", "L_short", "L_hybrid"],
                   [[t.step, _fmt(t.long), _fmt(t.short), _fmt(t.hybrid)] for t in trace])
        png = loss_curve(trace, args.out.with_suffix(".png"))
        print(f"wrote {args.out} and {png}")


def cmd_filter(args):
    _need_file(args.input, "input cloud")
    _need_file(args.checkpoint, "checkpoint")
    _need_out(args.out)
    if args.dump_trajectory is not None:
        _need_out(args.dump_trajectory)
    model = _load_model(args.checkpoint)
    cloud = read_xyz(args.input)
    config = FilterConfig(alpha=args.alpha, n_steps=args.n_steps, patch_k=args.patch_k,
                          seed=args.seed, threads=args.threads)
    result = filter_cloud(cloud, model, config, return_trajectories=args.dump_trajectory is not None)
    if args.dump_trajectory is not None:
        out, patches, trajs = result
        _write_csv(args.dump_trajectory, ["patch_id", "step", "point_index", "x", "y", "z"],
                   ([pid, step, idx, _fmt(float(x)), _fmt(float(y)), _fmt(float(z))]
                    for pid, step, idx, x, y, z in trajectory_rows(patches, trajs)))
        print(f"wrote {args.dump_trajectory}")
    else:
        out = result
    write_xyz(args.out, out)
    print(f"wrote {args.out}")


REPORT_HEADER = ["shape", "noise_kind", "sigma", "CD_x1e4", "P2M_x1e4", "EMD"]


def _report_table(rows) -> str:
    cells = [REPORT_HEADER] + [[r["shape"], r["noise_kind"], f"{r['sigma']:g}", f"{r['cd_x1e4']:.4f}",
                                "-" if r["p2m_x1e4"] is None else f"{r['p2m_x1e4']:.4f}",
                                "-" if r["emd"] is None else f"{r['emd']:.4f}"] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(REPORT_HEADER))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _expand(values, n, what):
    if len(values) == 1:
        return values * n
    if len(values) not in (0, n):
        raise UsageError(f"{what}: expected 1 or {n} entries, got {len(values)}")
    return values or [None] * n


def cmd_eval(args):
    _need_out(args.out)
    _check_sigma(args.sigma)
    if bool(args.pred) == (args.checkpoint is not None):
        raise UsageError("eval needs exactly one of --pred or --checkpoint")
    rows = []
    if args.pred:
        n = len(args.pred)
        cleans = _expand(args.clean, n, "--clean")
        if cleans[0] is None:
            raise UsageError("--pred needs --clean")
        meshes = _expand(args.mesh, n, "--mesh")
        labels = _expand(args.label, n, "--label")
        for path in [*args.pred, *cleans, *[m for m in meshes if m is not None]]:
            _need_file(path, "input")
        for pred, clean, mesh, label in zip(args.pred, cleans, meshes, labels):
            report = evaluate(read_xyz(pred), read_xyz(clean), read_off(mesh) if mesh else None,
                              with_emd=not args.no_emd)
            rows.append({"shape": label or pred.stem, "noise_kind": args.noise_kind, "sigma": args.sigma,
                         **report.scaled()})
    else:
        _need_file(args.checkpoint, "checkpoint")
        _check_shapes(args.shapes)
        model = _load_model(args.checkpoint)
        config = FilterConfig(alpha=args.alpha, n_steps=args.n_steps, patch_k=args.patch_k,
                              seed=args.seed, threads=args.threads)
        cases: list[EvalCase] = held_out_cases(args.shapes, args.resolution, args.sigma, args.noise_kind,
                                               seed=100 + args.seed)
        for case in cases:
            filtered = filter_cloud(case.noisy, model, config)
            report = evaluate(filtered, case.clean, case.mesh, with_emd=not args.no_emd)
            rows.append({"shape": case.shape, "noise_kind": case.noise_kind, "sigma": case.sigma,
                         **report.scaled()})
    _write_csv(args.out, REPORT_HEADER,
               [[r["shape"], r["noise_kind"], _fmt(float(r["sigma"])), _fmt(r["cd_x1e4"]),
                 _fmt(r["p2m_x1e4"]), _fmt(r["emd"])] for r in rows])
    from .plotting import metric_bars

    png = metric_bars(rows, args.out.with_suffix(".png"))
    print(_report_table(rows))
    print(f"wrote {args.out} and {png}")


ABLATION_HEADER = ["variant", "lambda", "n_steps", "alpha", "shape", "noise_kind", "sigma", "parameters",
                   "final_loss", "CD_noisy_x1e4", "CD_x1e4", "P2M_x1e4"]


def cmd_ablate(args):
    _need_out(args.out)
    _check_shapes(args.shapes)
    _check_sigma(args.sigma)
    bad = [v for v in args.variants if v not in ABLATION_VARIANTS]
    if bad or not args.variants:
        raise UsageError(f"unknown variant(s) {bad}; choose from {ABLATION_VARIANTS}")
    if not args.n_values or min(args.n_values) < 1:
        raise UsageError("--n-values must be positive integers")
    if not args.lambdas or min(args.lambdas) <= 0:
        raise UsageError("--lambdas must be positive")
    corpus = CorpusConfig(tuple(args.shapes), args.resolution, args.patches_per_cloud, args.seed)
    cases = held_out_cases(args.shapes, args.resolution, args.sigma, args.noise_kind, seed=100 + args.seed)
    rows = ablation_grid(args.variants, args.n_values, args.lambdas, args.steps, corpus, cases,
                         alpha=args.alpha, lr=args.lr, patch_k=args.patch_k, seed=args.seed,
                         threads=args.threads)
    _write_csv(args.out, ABLATION_HEADER,
               [[r["variant"], _fmt(r["lambda"]), r["n_steps"], _fmt(r["alpha"]), r["shape"], r["noise_kind"],
                 _fmt(r["sigma"]), r["parameters"], _fmt(r["final_loss"]), _fmt(r["cd_noisy"] * 1e4),
                 _fmt(r["cd"] * 1e4), _fmt(r["p2m"] * 1e4)] for r in rows])
    from .plotting import ablation_figures

    pngs = ablation_figures(rows, args.out.with_suffix(""))
    _print_ablation_summary(rows)
    print(f"wrote {args.out}, " + ", ".join(str(p) for p in pngs))


def _print_ablation_summary(rows):
    """Mean CD per variant at N=4 and lambda=10 (or the closest values run), with the margin to hybrid."""
    def closest(values, target):
        return min(values, key=lambda v: abs(v - target))

    n_ref = closest({r["n_steps"] for r in rows}, 4)
    lam_ref = closest({r["lambda"] for r in rows}, 10.0)
    means = {}
    for r in rows:
        if r["n_steps"] == n_ref and r["lambda"] == lam_ref:
            means.setdefault(r["variant"], []).append(r["cd"])
    print(f"mean CD x1e4 at N={n_ref}, lambda={lam_ref:g}:")
    hybrid = np.mean(means["hybrid"]) if "hybrid" in means else None
    for variant, cds in means.items():
        line = f"  {variant:<16} {np.mean(cds) * 1e4:.4f}"
        if hybrid is not None and variant != "hybrid":
            line += f"  (hybrid margin {(np.mean(cds) - hybrid) * 1e4:+.4f})"
        print(line)


COMMANDS = {"gen": cmd_gen, "noise": cmd_noise, "train": cmd_train, "filter": cmd_filter,
            "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"pcfilter: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pcfilter {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FormatError, GeometryError, MetricError, FilteringError, TrainingError,
            ValueError, OSError) as exc:
        print(f"pcfilter {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
