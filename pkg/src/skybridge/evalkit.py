"""Scorer-quality metrics (rank correlation, top-k hit rate, JSON parsing
success rate), training-curve statistics and the ablation comparison runner.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace, asdict

import numpy as np

from .semantic import SCORE_STAR, SerializedState, parse_output, SerializationError


def kendall_tau(x, y) -> float:
    """tau = (C - D) / (C + D) over all index pairs; tied pairs excluded from
    both counts. Returns nan when every pair is tied."""
    x = list(x)
    y = list(y)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length sequences of length >= 2")
    c = d = 0
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            s = (x[i] - x[j]) * (y[i] - y[j])
            if s > 0:
                c += 1
            elif s < 0:
                d += 1
    if c + d == 0:
        return math.nan
    return (c - d) / (c + d)


def _top_k_set(v, k: int) -> set[int]:
    # descending by value, ties broken by ascending index
    order = sorted(range(len(v)), key=lambda i: (-v[i], i))
    return set(order[:k])


def top_k_hit_rate(pred_vectors, truth_vectors, k: int) -> float:
    """Mean overlap ratio between top-k index sets of predictions and truth."""
    if len(pred_vectors) != len(truth_vectors) or not pred_vectors:
        raise ValueError("need matching non-empty sample lists")
    total = 0.0
    for p, t in zip(pred_vectors, truth_vectors):
        if k > len(p):
            raise ValueError("k exceeds vector length")
        total += len(_top_k_set(p, k) & _top_k_set(t, k)) / k
    return total / len(pred_vectors)


@dataclass(frozen=True)
class PsrReport:
    syntactic: float   # parses as JSON at all
    schema: float      # additionally matches {"scores": "<n digits>"}
    count: int


def json_psr(outputs, n: int, score_star: int = SCORE_STAR) -> PsrReport:
    if not outputs:
        raise ValueError("need at least one output")
    syn = sch = 0
    for text in outputs:
        try:
            json.loads(text)
            syn += 1
        except json.JSONDecodeError:
            continue
        try:
            parse_output(text, n, score_star)
            sch += 1
        except SerializationError:
            pass
    return PsrReport(syntactic=syn / len(outputs), schema=sch / len(outputs),
                     count=len(outputs))


@dataclass(frozen=True)
class ScorerEvalReport:
    kendall_tau: float   # mean over samples with a defined tau
    tau_defined: int     # samples contributing to the mean
    hr_k: float
    k: int
    json_psr: float      # syntactic
    schema_psr: float
    sample_count: int


def evaluate_scorer(scorer, sft_records, n_actions: int, k: int = 10,
                    score_star: int = SCORE_STAR) -> ScorerEvalReport:
    """Feed dataset inputs to the scorer and compare against dataset outputs."""
    if not sft_records:
        raise ValueError("empty dataset")
    states = [SerializedState(r.instruction, r.input) for r in sft_records]
    items = scorer.score_batch(states)
    taus = []
    preds, truths = [], []
    raw_outputs = []
    for rec, item in zip(sft_records, items):
        truth = parse_output(rec.output, n_actions, score_star).scores
        pred = item.vector.scores
        raw_outputs.append(item.raw_output)
        t = kendall_tau(pred, truth)
        if not math.isnan(t):
            taus.append(t)
        preds.append(pred)
        truths.append(truth)
    psr = json_psr(raw_outputs, n_actions, score_star)
    return ScorerEvalReport(
        kendall_tau=float(np.mean(taus)) if taus else math.nan,
        tau_defined=len(taus),
        hr_k=top_k_hit_rate(preds, truths, min(k, n_actions)),
        k=min(k, n_actions),
        json_psr=psr.syntactic,
        schema_psr=psr.schema,
        sample_count=len(sft_records),
    )


def trailing_mean_curve(rewards, window: int = 100) -> list[float]:
    """Mean over the last min(window, i) episodes, per episode index."""
    out = []
    acc = 0.0
    for i, r in enumerate(rewards):
        acc += r
        if i >= window:
            acc -= rewards[i - window]
        out.append(acc / min(i + 1, window))
    return out


def episodes_to_threshold(rewards, threshold: float, window: int = 100):
    """First 1-based episode whose trailing-window mean reaches threshold,
    or None if never."""
    for i, m in enumerate(trailing_mean_curve(rewards, window), start=1):
        if m >= threshold:
            return i
    return None


@dataclass
class VariantRun:
    variant: str
    seed: int
    episode_rewards: list[float]
    mean_flight: float
    mean_c: float
    mean_largest_fragment: float
    diverged: bool
    episodes_to_threshold: int | None = None
    plateau: float | None = None


@dataclass
class ComparisonReport:
    runs: list[VariantRun]
    threshold_fraction: float
    window: int

    def per_seed(self, variant: str) -> list[VariantRun]:
        return [r for r in self.runs if r.variant == variant and not r.diverged]

    def median_metric(self, variant: str, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.per_seed(variant)
                if getattr(r, attr) is not None]
        return float(np.median(vals)) if vals else math.nan

    def crossing_ratios(self) -> list[float]:
        """Per-seed SA/vanilla episodes-to-threshold ratios (paired by seed)."""
        van = {r.seed: r for r in self.per_seed("vanilla_ppo")}
        sa = {r.seed: r for r in self.per_seed("sa_ppo")}
        out = []
        for seed, v in van.items():
            s = sa.get(seed)
            if s and v.episodes_to_threshold and s.episodes_to_threshold:
                out.append(s.episodes_to_threshold / v.episodes_to_threshold)
        return out


def run_comparison(graph, traffic, energy, env_config, train_config,
                   scorer_factory, seeds, variants=("sa_ppo", "vanilla_ppo",
                                                    "pure_semantic"),
                   threshold_fraction: float = 0.9,
                   window: int = 100,
                   pure_semantic_episodes: int | None = None) -> ComparisonReport:
    """Train/evaluate each variant on shared map+traffic across seeds.

    vanilla_ppo is the same trainer with the semantic terms zeroed;
    pure_semantic samples straight from the prior distribution. The reward
    threshold is threshold_fraction of vanilla's final trailing-window mean,
    per seed.
    """
    from .train import run_pure_semantic, run_training
    runs: list[VariantRun] = []
    for seed in seeds:
        per_variant: dict[str, VariantRun] = {}
        for variant in variants:
            if variant == "vanilla_ppo":
                cfg = replace(train_config, seed=seed, lambda_fusion=0.0, beta_kl=0.0)
                res = run_training(graph, traffic, energy, env_config, cfg,
                                   scorer=None)
            elif variant == "sa_ppo":
                cfg = replace(train_config, seed=seed)
                res = run_training(graph, traffic, energy, env_config, cfg,
                                   scorer=scorer_factory())
            elif variant == "pure_semantic":
                n_eps = pure_semantic_episodes or min(train_config.episodes, 50)
                res = run_pure_semantic(graph, traffic, energy, env_config,
                                        scorer_factory(), n_eps, seed)
            else:
                raise ValueError(f"unknown variant {variant!r}")
            # converged-behavior metrics: average over the trailing window so
            # a learner's exploration phase doesn't drown its final policy
            tail = res.episodes[-window:]
            per_variant[variant] = VariantRun(
                variant=variant, seed=seed,
                episode_rewards=list(res.episode_rewards),
                mean_flight=float(np.mean([e.flight_m for e in tail])) if tail else 0.0,
                mean_c=float(np.mean([e.mean_c for e in tail])) if tail else 0.0,
                mean_largest_fragment=float(np.mean([e.mean_largest for e in tail])) if tail else 0.0,
                diverged=res.diverged,
            )
        van = per_variant.get("vanilla_ppo")
        if van and van.episode_rewards and not van.diverged:
            plateau = trailing_mean_curve(van.episode_rewards, window)[-1]
            threshold = threshold_fraction * plateau
            for r in per_variant.values():
                r.plateau = plateau
                if r.episode_rewards:
                    r.episodes_to_threshold = episodes_to_threshold(
                        r.episode_rewards, threshold, window)
        runs.extend(per_variant.values())
    return ComparisonReport(runs=runs, threshold_fraction=threshold_fraction,
                            window=window)


def write_comparison_csv(path, report: ComparisonReport) -> None:
    """Long-format variant,seed,episode,metric,value CSV."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "episode", "metric", "value"])
        for r in report.runs:
            for i, rew in enumerate(r.episode_rewards, start=1):
                w.writerow([r.variant, r.seed, i, "reward", repr(rew)])
            w.writerow([r.variant, r.seed, "", "mean_flight_m", repr(r.mean_flight)])
            w.writerow([r.variant, r.seed, "", "mean_C", repr(r.mean_c)])
            w.writerow([r.variant, r.seed, "", "mean_largest_fragment",
                        repr(r.mean_largest_fragment)])
            if r.episodes_to_threshold is not None:
                w.writerow([r.variant, r.seed, "", "episodes_to_threshold",
                            r.episodes_to_threshold])
            if r.diverged:
                w.writerow([r.variant, r.seed, "", "diverged", 1])
    os.replace(tmp, path)


def write_comparison_json(path, report: ComparisonReport) -> None:
    payload = {
        "threshold_fraction": report.threshold_fraction,
        "window": report.window,
        "runs": [
            {k: v for k, v in asdict(r).items() if k != "episode_rewards"}
            for r in report.runs
        ],
        "medians": {
            v: {
                "mean_flight": report.median_metric(v, "mean_flight"),
                "mean_C": report.median_metric(v, "mean_c"),
                "episodes_to_threshold": report.median_metric(
                    v, "episodes_to_threshold"),
            }
            for v in {r.variant for r in report.runs}
        },
        "crossing_ratios": report.crossing_ratios(),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    os.replace(tmp, path)
