"""Command-line entry point: training, evaluation and analysis experiments.

Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime failure.
All artifacts land under the run's output directory; reruns should use a
fresh directory.  DVELAB_OUTPUT_ROOT sets the default output root.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import ConfigError, RunConfig, apply_overrides, emit_config, \
    load_config, seed_for
from .envs import generate_level
from .models import confusion as confusion_score
from .models import contribution, load_checkpoint
from .report import (render_confusion, render_curve, render_histogram,
                     render_training_curves)
from .train import Trainer, evaluate
from .train.evaluate import run_episode

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _output_root() -> Path:
    return Path(os.environ.get("DVELAB_OUTPUT_ROOT", "runs"))


def _resolve_outdir(cfg: RunConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return _output_root() / cfg.experiment


def _levels_from_args(args) -> list:
    seeds = ([int(s) for s in args.level_seeds.split(",")]
             if getattr(args, "level_seeds", "") else list(range(args.levels)))
    return [generate_level(args.family, s) for s in seeds]


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.set or [])
    except FileNotFoundError:
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = _resolve_outdir(cfg, args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lock = outdir / ".lock"
    if lock.exists() and not args.resume:
        print(f"error: {outdir} is locked by another run (use --resume "
              "after an interrupt)", file=sys.stderr)
        return EXIT_RUNTIME
    lock.write_text(str(os.getpid()))
    try:
        (outdir / "config.ini").write_text(emit_config(cfg))
        trainer = Trainer(cfg, outdir)
        summary = trainer.run(resume=args.resume)
        render_training_curves(outdir)
        print(json.dumps(summary, indent=2))
        return EXIT_OK
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        lock.unlink(missing_ok=True)


def cmd_eval(args) -> int:
    if args.episodes < 1:
        print("error: --episodes must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        net, step, _ = load_checkpoint(args.checkpoint)
    except Exception as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    levels = _levels_from_args(args)
    if levels[0].obs_dim != net.config.obs_dim \
            or levels[0].spec.n_actions != net.config.n_actions:
        print("error: checkpoint does not match the requested level family",
              file=sys.stderr)
        return EXIT_CONFIG
    metrics = evaluate(net, levels, args.episodes, seed=args.seed,
                       greedy=args.greedy)
    print(json.dumps({
        "checkpoint_step": step,
        "episodes": metrics.n_episodes,
        "mean_total_reward": metrics.mean_total_reward,
        "success_rate": metrics.success_rate,
        "spl": metrics.spl,
    }, indent=2))
    return EXIT_OK


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _analyze_clusters(args, outdir: Path) -> int:
    levels = _levels_from_args(args)
    probe = args.probe_state if args.probe_state >= 0 \
        else levels[0].spec.n_states // 2
    matrix = an.oracle_value_matrix(levels, None,
                                    list(range(levels[0].spec.n_states)),
                                    policy_tag="uniform")
    rep = an.clustering_hypothesis_test(
        matrix.values, probe, rng=np.random.default_rng(args.seed))
    _write_csv(outdir / "clusters_aic.csv",
               ["x", "mean", "stderr", "n_seeds"],
               [[c + 1, a, 0.0, 1] for c, a in enumerate(rep["aic_curve"])])
    _write_csv(outdir / "clusters_histogram.csv",
               ["bin_left", "bin_right", "count"],
               [[rep["histogram_edges"][i], rep["histogram_edges"][i + 1],
                 rep["histogram_counts"][i]]
                for i in range(len(rep["histogram_counts"]))])
    render_histogram(rep["histogram_counts"], rep["histogram_edges"],
                     outdir / "clusters_histogram.png",
                     xlabel=f"value at probe state {probe}")
    render_curve(outdir / "clusters_aic.csv", outdir / "clusters_aic.png",
                 "components", "AIC")
    verdict = "PASS" if rep["multimodal"] else "FAIL"
    print(f"clusters: {verdict} (AIC prefers C={rep['preferred_components']} "
          f"at probe state {probe})")
    return EXIT_OK if rep["multimodal"] else EXIT_RUNTIME


def _analyze_aic(args, outdir: Path) -> int:
    levels = _levels_from_args(args)
    rng = np.random.default_rng(args.seed)
    n_states = levels[0].spec.n_states
    probes = sorted(rng.choice(n_states, size=min(16, n_states),
                               replace=False).tolist())
    matrix = an.oracle_value_matrix(levels, None, probes, policy_tag="uniform")
    values = matrix.values
    if args.source == "archetype":
        # denoised view: each level replaced by its archetype's template row
        # plus small noise, so the planted archetype count is recoverable
        arch = np.array([level.archetype for level in levels])
        templates = {a: values[arch == a].mean(axis=0) for a in set(arch)}
        values = np.stack([templates[a] for a in arch])
        values = values + rng.normal(0.0, 0.2, size=values.shape)
    best, curve = an.select_num_clusters(values, args.c_max, rng=rng)
    _write_csv(outdir / "aic_curve.csv", ["x", "mean", "stderr", "n_seeds"],
               [[c + 1, a, 0.0, 1] for c, a in enumerate(curve)])
    render_curve(outdir / "aic_curve.csv", outdir / "aic_curve.png",
                 "components", "AIC / N")
    (outdir / "value_matrix.json").write_text(matrix.to_text())
    print(f"aic: optimal component count C* = {best}")
    return EXIT_OK


def _analyze_decompose(args, outdir: Path) -> int:
    levels = [generate_level("tabular", s) for s in range(args.levels)]
    rng = np.random.default_rng(args.seed)
    theta = rng.normal(size=(levels[0].spec.n_states,
                             levels[0].spec.n_actions))
    policy = an.softmax_policy(theta)
    from .envs import solve_value
    v = np.stack([solve_value(l.spec, policy, method="linear") for l in levels])
    rows = []
    worst = 0.0
    for tag, critic in (("oracle", v), ("offset", v + 0.5),
                        ("random", rng.normal(size=v.shape))):
        d = an.variance_decomposition(levels, theta, critic)
        worst = max(worst, d.identity_residual)
        rows.append([tag, d.total, d.minimal, d.prediction_error,
                     d.cross_term, d.identity_residual])
    _write_csv(outdir / "decompose.csv",
               ["critic", "total", "minimal", "prediction_error",
                "cross_term", "identity_residual"], rows)
    ok = worst <= 1e-9
    print(f"decompose: {'PASS' if ok else 'FAIL'} "
          f"(max identity residual {worst:.3e})")
    return EXIT_OK if ok else EXIT_RUNTIME


def _analyze_lemmas(args, outdir: Path) -> int:
    levels = [generate_level("tabular", s) for s in range(args.levels)]
    rng = np.random.default_rng(args.seed)
    S, A = levels[0].spec.n_states, levels[0].spec.n_actions
    theta = rng.normal(size=(S, A))
    worst = 0.0
    for _ in range(20):
        f = rng.normal(size=(len(levels), S))
        worst = max(worst,
                    an.lemma1_check(levels, theta, f)["max_gradient_diff"])
    sweep = an.lemma2_sweep(levels, theta)
    rows = [["lemma1_max_gradient_diff", worst],
            ["lemma2_minimizer", sweep["minimizer"]],
            ["lemma2_second_diff_spread", sweep["max_second_diff_spread"]]]
    _write_csv(outdir / "lemmas.csv", ["quantity", "value"], rows)
    ok = worst <= 1e-9 and sweep["minimizer"] == 1.0 \
        and sweep["max_second_diff_spread"] <= 1e-9
    print(f"lemmas: {'PASS' if ok else 'FAIL'} "
          f"(max gradient deviation {worst:.3e}, "
          f"E[psi^2] minimizer lambda={sweep['minimizer']})")
    return EXIT_OK if ok else EXIT_RUNTIME


def _analyze_variance_curve(args, outdir: Path) -> int:
    counts = [int(c) for c in args.counts.split(",")]
    cfg = RunConfig(family=args.family, master_seed=args.seed,
                    total_steps=args.budget, eval_every=0)
    curve = an.variance_vs_levels(counts, cfg, n_seeds=args.seeds)
    _write_csv(outdir / "variance_curve.csv", ["x", "mean", "stderr", "n_seeds"],
               [[p.x, p.mean, p.stderr, p.n_seeds] for p in curve])
    render_curve(outdir / "variance_curve.csv", outdir / "variance_curve.png",
                 "training levels", "mean E[psi^2]", logx=True)
    print("variance-curve: " + ", ".join(
        f"{int(p.x)} levels -> {p.mean:.3f} +/- {p.stderr:.3f}" for p in curve))
    return EXIT_OK


def _analyze_confusion(args, outdir: Path) -> int:
    net, _, _ = load_checkpoint(args.checkpoint)
    if net.config.head != "dynamic":
        print("error: confusion analysis needs a dynamic-head checkpoint",
              file=sys.stderr)
        return EXIT_CONFIG
    levels = _levels_from_args(args)
    rng = np.random.default_rng(args.seed)
    rows = []
    deltas_by_ep: dict[int, list[float]] = {}
    contribs: dict[int, np.ndarray] = {}
    for ep in range(args.episodes):
        level = levels[rng.integers(len(levels))]
        _, _, steps = run_episode(net, level, rng)
        alphas = np.stack([s[5] for s in steps])
        deltas = [confusion_score(a) for a in alphas]
        deltas_by_ep[ep] = deltas
        contribs[ep] = contribution(alphas)
        for t, (d, a) in enumerate(zip(deltas, alphas)):
            rows.append([ep, t, level.seed, d] + a.tolist())
    nb = net.config.n_basis
    _write_csv(outdir / "confusion.csv",
               ["episode", "t", "level", "delta"] +
               [f"alpha_{i}" for i in range(nb)], rows)
    _write_csv(outdir / "contributions.csv",
               ["episode"] + [f"rho_{i}" for i in range(nb)],
               [[ep] + contribs[ep].tolist() for ep in sorted(contribs)])
    render_confusion(deltas_by_ep, contribs, outdir / "confusion.png")
    print(f"confusion: wrote {len(rows)} step rows over {args.episodes} episodes")
    return EXIT_OK


ANALYZE_DISPATCH = {
    "clusters": _analyze_clusters,
    "aic": _analyze_aic,
    "decompose": _analyze_decompose,
    "lemmas": _analyze_lemmas,
    "variance-curve": _analyze_variance_curve,
    "confusion": _analyze_confusion,
}


def cmd_analyze(args) -> int:
    outdir = Path(args.outdir) if args.outdir \
        else _output_root() / f"analyze-{args.what}"
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        return ANALYZE_DISPATCH[args.what](args, outdir)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvelab",
        description="Multi-scene RL laboratory with a mixture-based dynamic "
                    "critic head")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("config", help="path to a config file")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config key")
    p_train.add_argument("--outdir", default=None)
    p_train.add_argument("--resume", action="store_true",
                         help="resume from the last checkpoint")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--family", default="gapworld",
                        choices=["gapworld", "tabular"])
    p_eval.add_argument("--levels", type=int, default=50)
    p_eval.add_argument("--level-seeds", default="", dest="level_seeds")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--greedy", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_an = sub.add_parser("analyze", help="run an analysis experiment")
    p_an.add_argument("what", choices=sorted(ANALYZE_DISPATCH))
    p_an.add_argument("--checkpoint", default=None)
    p_an.add_argument("--family", default="gapworld",
                      choices=["gapworld", "tabular"])
    p_an.add_argument("--levels", type=int, default=50)
    p_an.add_argument("--level-seeds", default="", dest="level_seeds")
    p_an.add_argument("--episodes", type=int, default=20)
    p_an.add_argument("--seed", type=int, default=0)
    p_an.add_argument("--probe-state", type=int, default=-1,
                      dest="probe_state")
    p_an.add_argument("--c-max", type=int, default=5, dest="c_max")
    p_an.add_argument("--source", default="archetype",
                      choices=["archetype", "oracle"],
                      help="aic matrix source: archetype templates plus noise "
                           "or raw oracle values")
    p_an.add_argument("--counts", default="1,5,20,50,100")
    p_an.add_argument("--seeds", type=int, default=3,
                      help="seeds per point for multi-seed experiments")
    p_an.add_argument("--budget", type=int, default=8192,
                      help="env steps per short training run")
    p_an.add_argument("--outdir", default=None)
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
