"""Command-line pipeline orchestration.

Subcommands mirror the pipeline stages: collect exploration states, build
the instruction-tuning dataset, train with the configured scorer, evaluate
a frozen checkpoint, score a scorer against a dataset, run the ablation
comparison, and validate maps / coverage assumptions.

Exit codes: 0 ok, 2 config error, 3 runtime/training failure,
4 external-scorer transport failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import Counter

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_TRANSPORT = 4


def _load(args):
    from .config import load_config
    return load_config(args.config, seed_override=args.seed,
                       output_dir_override=args.output_dir)


def _outdir(cfg) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def cmd_map_validate(args) -> int:
    from .road_graph import load_map
    g = load_map(args.mapfile)
    print(f"ok: {g.n} vertices, {g.m} edges, {len(g.rsu_vertices)} RSUs, "
          f"uav_start={g.uav_start}")
    return EXIT_OK


def cmd_check_coverage(args) -> int:
    from .channel import coverage_radius
    cfg = _load(args)
    res = coverage_radius(cfg.channel)
    half_longest = cfg.graph.longest_edge / 2.0
    flag = "unbounded within search window" if res.unbounded else "bounded"
    print(f"coverage radius: {res.radius:.2f} m ({flag})")
    print(f"half of longest road segment: {half_longest:.2f} m")
    if res.radius >= half_longest:
        print("ok: coverage radius satisfies the half-segment assumption")
        return EXIT_OK
    print("WARNING: coverage radius below half the longest segment; "
          "the graph connectivity model overstates coverage on this map")
    return EXIT_RUNTIME


def cmd_collect(args) -> int:
    from .semantic import collect_states
    cfg = _load(args)
    out = os.path.join(_outdir(cfg), "state_db.jsonl")
    res = collect_states(cfg.graph, cfg.traffic, cfg.energy, cfg.env, cfg.train,
                         n_target=cfg.collect_n_target, k_max=cfg.collect_k_max)
    res.db.save_jsonl(out)
    print(f"collected {len(res.db)} states over {res.episodes_run} episodes "
          f"(dedup ratio {res.dedup_ratio:.3f}) -> {out}")
    if len(res.db) < cfg.collect_n_target:
        print(f"note: under-collection, target was {cfg.collect_n_target}")
    return EXIT_OK


def cmd_build_sft(args) -> int:
    from .env import UavVanetEnv
    from .semantic import StateDatabase, build_sft_dataset, load_sft_jsonl, parse_output
    cfg = _load(args)
    db_path = args.state_db or os.path.join(cfg.output_dir, "state_db.jsonl")
    db = StateDatabase.load_jsonl(db_path, cfg.graph)
    env = UavVanetEnv(cfg.graph, cfg.traffic, cfg.energy, cfg.env)
    out = os.path.join(_outdir(cfg), "sft.jsonl")
    count = build_sft_dataset(db, env, out)
    hist = Counter()
    for rec in load_sft_jsonl(out):
        for s in parse_output(rec.output, cfg.graph.n).scores:
            hist[s] += 1
    print(f"wrote {count} records -> {out}")
    print("score histogram: " + " ".join(f"{d}:{hist.get(d, 0)}" for d in range(10)))
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import build_scorer
    from .policy import config_hash
    from .train import run_training
    cfg = _load(args)
    outdir = _outdir(cfg)
    scorer = None
    if cfg.train.lambda_fusion > 0 or cfg.train.beta_kl > 0:
        scorer = build_scorer(cfg)
    res = run_training(
        cfg.graph, cfg.traffic, cfg.energy, cfg.env, cfg.train, scorer=scorer,
        loss_csv=os.path.join(outdir, "training.csv"),
        episodes_csv=os.path.join(outdir, "episodes.csv"),
        checkpoint_path=os.path.join(outdir, "checkpoint.bin"),
        checkpoint_every=args.checkpoint_every,
        resume_from=args.resume, map_hash=cfg.graph.fingerprint,
    )
    if res.diverged:
        print("training diverged (non-finite loss); partial CSVs written")
        return EXIT_RUNTIME
    print(f"trained {len(res.episode_rewards)} episodes, "
          f"{len(res.update_rows)} updates -> {outdir}")
    print(f"config hash: {config_hash(cfg.train)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .config import build_scorer
    from .policy import checkpoint_load
    from .train import run_policy_rollouts, write_episodes_csv
    cfg = _load(args)
    outdir = _outdir(cfg)
    model = checkpoint_load(args.checkpoint, map_hash=cfg.graph.fingerprint,
                            expect_dims=(cfg.graph.m + cfg.graph.n, cfg.graph.n))
    scorer = build_scorer(cfg) if cfg.train.lambda_fusion > 0 else None
    trace: list = []
    res = run_policy_rollouts(model, cfg.graph, cfg.traffic, cfg.energy,
                              cfg.env, episodes=cfg.eval_episodes,
                              seed=cfg.train.seed, scorer=scorer,
                              lambda_fusion=cfg.train.lambda_fusion,
                              trace_rows=trace)
    write_episodes_csv(os.path.join(outdir, "eval_episodes.csv"), res.episodes)
    import csv
    with open(os.path.join(outdir, "eval_trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "slot", "uav_vertex", "action", "reward",
                    "K", "C", "energy_J", "flight_m"])
        w.writerows(trace)
    print(f"evaluated {len(res.episodes)} episodes: mean reward "
          f"{sum(res.episode_rewards)/len(res.episode_rewards):.3f}, "
          f"mean C {res.mean_c:.2f}, mean flight {res.mean_flight:.1f} m")
    return EXIT_OK


def cmd_score_eval(args) -> int:
    from .config import build_scorer
    from .evalkit import evaluate_scorer
    from .semantic import load_sft_jsonl
    cfg = _load(args)
    records = load_sft_jsonl(args.sft)
    scorer = build_scorer(cfg)
    rep = evaluate_scorer(scorer, records, cfg.graph.n, k=args.k)
    print(f"samples: {rep.sample_count}")
    print(f"kendall_tau: {rep.kendall_tau:.4f} (defined on {rep.tau_defined})")
    print(f"HR_{rep.k}: {rep.hr_k:.4f}")
    print(f"JSON PSR: syntactic {rep.json_psr:.4f}, schema {rep.schema_psr:.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .config import build_scorer
    from .evalkit import run_comparison, write_comparison_csv, write_comparison_json
    cfg = _load(args)
    outdir = _outdir(cfg)
    report = run_comparison(
        cfg.graph, cfg.traffic, cfg.energy, cfg.env, cfg.train,
        scorer_factory=lambda: build_scorer(cfg), seeds=cfg.compare_seeds,
        threshold_fraction=cfg.compare_threshold_fraction,
        window=cfg.compare_window,
        pure_semantic_episodes=cfg.pure_semantic_episodes,
    )
    write_comparison_csv(os.path.join(outdir, "comparison.csv"), report)
    write_comparison_json(os.path.join(outdir, "comparison.json"), report)
    for variant in ("sa_ppo", "vanilla_ppo", "pure_semantic"):
        print(f"{variant}: median mean_C {report.median_metric(variant, 'mean_c'):.2f}, "
              f"median flight {report.median_metric(variant, 'mean_flight'):.1f} m, "
              f"median episodes-to-threshold "
              f"{report.median_metric(variant, 'episodes_to_threshold')}")
    ratios = report.crossing_ratios()
    if ratios:
        import statistics
        print(f"sa/vanilla crossing ratio (median over seeds): "
              f"{statistics.median(ratios):.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skybridge", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override train.seed")
        p.add_argument("--output-dir", default=None)

    p = sub.add_parser("map", help="map utilities")
    msub = p.add_subparsers(dest="map_command", required=True)
    v = msub.add_parser("validate")
    v.add_argument("mapfile")
    v.set_defaults(func=cmd_map_validate)

    p = sub.add_parser("check-coverage")
    common(p)
    p.set_defaults(func=cmd_check_coverage)

    p = sub.add_parser("collect")
    common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("build-sft")
    common(p)
    p.add_argument("--state-db", default=None)
    p.set_defaults(func=cmd_build_sft)

    p = sub.add_parser("train")
    common(p)
    p.add_argument("--resume", default=None)
    p.add_argument("--checkpoint-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score-eval")
    common(p)
    p.add_argument("--sft", required=True)
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(func=cmd_score_eval)

    p = sub.add_parser("compare")
    common(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    from .channel import ChannelConfigError
    from .config import ConfigError
    from .policy import CheckpointError
    from .road_graph import MapFormatError
    from .semantic import ScorerTransportError, SerializationError
    from .traffic import TrafficLoadError
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MapFormatError, TrafficLoadError, ChannelConfigError,
            SerializationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScorerTransportError as exc:
        print(f"scorer transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
