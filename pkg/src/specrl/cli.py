"""Command-line interface: train / eval / bench / sweep-cache / profile /
ablate / inspect-tree / dump-model / export-policy over YAML config files.

Exit codes: 0 success, 1 invariant failure, 2 configuration error.
All artifacts are rerun-stable; wall-clock timestamps live only in the
run_meta.json sidecar.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click

from . import bench as bench_mod
from . import plots
from .config import AppConfig, ConfigError, load_config, write_default_config
from .engine import (FixedActionController, PolicyController, evaluate,
                     make_corpus, records_from_csv, records_to_csv, train)
from .models import BOS_TOKEN, StateEncoder, SyntheticLM
from .policy import (action_by_triple, export_policy_csv, load_checkpoint,
                     save_checkpoint)
from .tree import build_tree, tree_to_json
from .verify import accept_stats, VerifyResult


def _out_dir(path) -> Path:
    out = Path(os.environ.get("SPECRL_OUT_DIR", path or "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _write_meta(out: Path, command: str, started: float):
    # timestamps are confined to this sidecar so other artifacts stay
    # byte-identical across reruns
    meta = {"command": command, "started_unix": started,
            "elapsed_s": time.time() - started}
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _load_world(cfg: AppConfig):
    lm = SyntheticLM(cfg.model)
    encoder = StateEncoder(cfg.model, cfg.features)
    return lm, encoder


def _parse_action(text: str):
    try:
        tt, d, k = (int(x) for x in text.split(","))
        return action_by_triple(tt, d, k)
    except ValueError as exc:
        raise ConfigError(f"bad action triple {text!r}: {exc}") from exc


def _accept_summary(records) -> dict:
    results = [VerifyResult(tuple(range(r.accept_len)), 0, r.accept_len,
                            r.candidates) for r in records]
    return accept_stats(results, [r.elapsed for r in records])


@click.group()
def main():
    """Adaptive speculative-sampling simulator and benchmark harness."""
    threads = os.environ.get("SPECRL_THREADS")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", threads)


@main.command("init-config")
@click.option("--out", "out_path", default="specrl.yaml", show_default=True)
def init_config(out_path):
    """Write the shipped default configuration file."""
    write_default_config(out_path)
    click.echo(f"wrote {out_path}")


@main.command("train")
@click.option("--config", "config_path", required=True)
@click.option("--out", "out_path", default=None)
@click.option("--seed", type=int, default=None, help="policy seed override")
@click.option("--variant", type=click.Choice(["standard", "max_entropy"]),
              default=None)
def train_cmd(config_path, out_path, seed, variant):
    """Train the PPO policy on the synthetic corpus and save a checkpoint."""
    started = time.time()
    cfg = load_config(config_path)
    if seed is not None or variant is not None:
        from dataclasses import replace
        from .policy import PPOConfig
        cfg = replace(cfg,
                      policy_seed=seed if seed is not None else cfg.policy_seed,
                      ppo=PPOConfig.variant(variant) if variant else cfg.ppo,
                      ppo_variant=variant or cfg.ppo_variant)
    out = _out_dir(out_path)
    lm, encoder = _load_world(cfg)
    corpus = make_corpus(lm, cfg.train_corpus)
    net, report = train(lm, encoder, corpus, cfg.ppo, cfg.train_run,
                        cost=cfg.cost, policy_seed=cfg.policy_seed,
                        hidden=cfg.policy_hidden)
    save_checkpoint(out / "policy.ckpt", net, config_digest=cfg.digest(),
                    meta={"variant": cfg.ppo_variant})
    _write_json(out / "training_report.json", report)
    plots.render_training_curve(report, out / "training_curve.png")
    with open(out / "reward_curve.csv", "w") as fh:
        fh.write("update,mean_reward\n")
        for i, r in enumerate(report["reward_curve"], 1):
            fh.write(f"{i},{r!r}\n")
    _write_meta(out, "train", started)
    click.echo(f"train: {report['n_updates']} updates, "
               f"{report['n_transitions']} transitions, "
               f"{report['unique_actions']} unique actions -> {out}")


def _paired_eval(cfg: AppConfig, net, suite, baseline_action, greedy=True):
    lm, encoder = _load_world(cfg)
    adaptive = evaluate(lm, encoder, PolicyController(net, greedy=greedy),
                        suite, cfg.cost, cfg.eval_run)
    baseline = evaluate(lm, encoder, FixedActionController(baseline_action),
                        suite, cfg.cost, cfg.eval_run)
    return adaptive, baseline


def _eval_csv(rows, baseline=None) -> str:
    lines = ["qid,class,tokens,seconds,tokens_per_s,speedup_vs_autoregressive"
             + (",baseline_tokens_per_s,ratio" if baseline else "")]
    for i, r in enumerate(rows):
        line = (f"{r.qid},{r.regime_class},{r.tokens},{r.seconds!r},"
                f"{r.tokens_per_s!r},{r.speedup_vs_autoregressive!r}")
        if baseline:
            b = baseline[i]
            line += f",{b.tokens_per_s!r},{r.tokens_per_s / b.tokens_per_s!r}"
        lines.append(line)
    return "\n".join(lines) + "\n"


@main.command("eval")
@click.option("--config", "config_path", required=True)
@click.option("--policy", "policy_path", required=True)
@click.option("--out", "out_path", default=None)
@click.option("--baseline-action", default=None,
              help="tt,d,k triple; defaults to the configured baseline")
@click.option("--sample", is_flag=True,
              help="sample actions at the inference temperature instead of argmax")
def eval_cmd(config_path, policy_path, out_path, baseline_action, sample):
    """Evaluate a trained policy against the static baseline on the held-out
    suite, with paired Wilcoxon significance."""
    started = time.time()
    cfg = load_config(config_path)
    net, digest, meta = load_checkpoint(policy_path)
    out = _out_dir(out_path)
    lm, _ = _load_world(cfg)
    suite = make_corpus(lm, cfg.eval_corpus)
    action = _parse_action(baseline_action) if baseline_action \
        else action_by_triple(*cfg.baseline_action)
    adaptive, baseline = _paired_eval(cfg, net, suite, action,
                                      greedy=not sample)
    cmp = bench_mod.paired_comparison(adaptive, baseline)
    cmp["baseline_action"] = str(action)
    cmp["config_digest"] = cfg.digest()
    cmp["checkpoint_digest"] = digest
    cmp["sampling_seed"] = cfg.eval_run.sampling_seed
    _write_json(out / "eval_report.json", cmp)
    (out / "per_question.csv").write_text(_eval_csv(adaptive, baseline))
    (out / "run_log.csv").write_text(
        records_to_csv([r for q in adaptive for r in q.records]))
    plots.render_eval_speeds(adaptive, out / "eval_speeds.png", baseline)
    _write_meta(out, "eval", started)
    click.echo(f"eval: speed ratio {cmp['speed_ratio']:.4f} vs {action}, "
               f"Wilcoxon p={cmp['wilcoxon_p']:.3g} -> {out}")


@main.command("bench")
@click.option("--config", "config_path", required=True)
@click.option("--policy", "policy_path", required=True)
@click.option("--out", "out_path", default=None)
def bench_cmd(config_path, policy_path, out_path):
    """Full benchmark report: paired speeds, acceptance statistics, profiler
    breakdown, and unique-action count.  Exits 1 if an embedded invariant
    check fails."""
    started = time.time()
    cfg = load_config(config_path)
    net, _, _ = load_checkpoint(policy_path)
    out = _out_dir(out_path)
    lm, _ = _load_world(cfg)
    suite = make_corpus(lm, cfg.eval_corpus)
    action = action_by_triple(*cfg.baseline_action)
    adaptive, baseline = _paired_eval(cfg, net, suite, action)
    records = [r for q in adaptive for r in q.records]
    cmp = bench_mod.paired_comparison(adaptive, baseline)
    breakdown = bench_mod.profile(records)
    report = {
        "comparison": cmp,
        "acceptance": _accept_summary(records),
        "profile_percent": breakdown.percentages,
        "profile_seconds": breakdown.seconds,
        "unique_actions": len({r.action.index for r in records}),
        "baseline_action": str(action),
        "config_digest": cfg.digest(),
        "sampling_seed": cfg.eval_run.sampling_seed,
    }
    ok = (cmp["speed_ratio"] > 0 and 0 < cmp["wilcoxon_p"] <= 1
          and abs(sum(breakdown.percentages.values()) - 100.0) <= 0.1)
    report["invariants_ok"] = bool(ok)
    _write_json(out / "bench_report.json", report)
    (out / "bench_report.txt").write_text(_bench_text(report))
    plots.render_profile(breakdown, out / "profile.png")
    plots.render_eval_speeds(adaptive, out / "bench_speeds.png", baseline)
    _write_meta(out, "bench", started)
    click.echo(f"bench: ratio {cmp['speed_ratio']:.4f}, "
               f"p={cmp['wilcoxon_p']:.3g}, invariants "
               f"{'ok' if ok else 'FAILED'} -> {out}")
    if not ok:
        sys.exit(1)


def _bench_text(report) -> str:
    cmp = report["comparison"]
    lines = [
        "benchmark report",
        "================",
        f"questions            {cmp['n_questions']}",
        f"mean tokens/s        {cmp['mean_tokens_per_s']:.2f}",
        f"baseline tokens/s    {cmp['baseline_mean_tokens_per_s']:.2f}"
        f"   (action {report['baseline_action']})",
        f"speed ratio          {cmp['speed_ratio']:.4f}",
        f"Wilcoxon p           {cmp['wilcoxon_p']:.4g}  (n={cmp['wilcoxon_n']})",
        f"unique actions       {report['unique_actions']}",
        "",
        "acceptance",
        "----------",
    ]
    acc = report["acceptance"]
    lines += [
        f"rate   {acc['acceptance_rate_mean']:.4f} +/- {acc['acceptance_rate_sd']:.4f}",
        f"length {acc['acceptance_length_mean']:.2f} +/- {acc['acceptance_length_sd']:.2f}"
        f"  (total {acc['acceptance_length_total']:.0f})",
        "",
        "profile (% of attributed time)",
        "------------------------------",
    ]
    for cat, pct in report["profile_percent"].items():
        lines.append(f"{cat:<28}{pct:8.3f}")
    lines.append("")
    lines.append(f"invariants ok: {report['invariants_ok']}")
    return "\n".join(lines) + "\n"


@main.command("sweep-cache")
@click.option("--config", "config_path", required=True)
@click.option("--policy", "policy_path", required=True)
@click.option("--n", "n_values", default="1,5,10,20,30,50", show_default=True)
@click.option("--out", "out_path", default=None)
def sweep_cache_cmd(config_path, policy_path, n_values, out_path):
    """Cache-interval sweep: latency and tokens/s per N, as CSV and figure."""
    started = time.time()
    cfg = load_config(config_path)
    net, _, _ = load_checkpoint(policy_path)
    out = _out_dir(out_path)
    lm, encoder = _load_world(cfg)
    suite = make_corpus(lm, cfg.eval_corpus)
    ns = [int(x) for x in n_values.split(",")]
    rows = bench_mod.cache_sweep(lm, encoder, PolicyController(net, greedy=True),
                                 suite, cfg.cost, ns, cfg.eval_run)
    (out / "cache_sweep.csv").write_text(bench_mod.sweep_to_csv(rows))
    plots.render_cache_sweep(rows, out / "cache_sweep.png")
    _write_meta(out, "sweep-cache", started)
    click.echo(f"sweep-cache: {len(rows)} points -> {out}")


@main.command("profile")
@click.option("--config", "config_path", required=True)
@click.option("--policy", "policy_path", default=None)
@click.option("--log", "log_path", default=None,
              help="existing run_log.csv; otherwise a fresh eval run is profiled")
@click.option("--out", "out_path", default=None)
def profile_cmd(config_path, policy_path, log_path, out_path):
    """Four-category consolidated profiler over a run log."""
    started = time.time()
    cfg = load_config(config_path)
    out = _out_dir(out_path)
    if log_path:
        records = records_from_csv(Path(log_path).read_text())
    else:
        if not policy_path:
            raise ConfigError("profile needs --log or --policy")
        net, _, _ = load_checkpoint(policy_path)
        lm, encoder = _load_world(cfg)
        suite = make_corpus(lm, cfg.eval_corpus)
        rows = evaluate(lm, encoder, PolicyController(net, greedy=True),
                        suite, cfg.cost, cfg.eval_run)
        records = [r for q in rows for r in q.records]
        (out / "run_log.csv").write_text(records_to_csv(records))
    breakdown = bench_mod.profile(records)
    _write_json(out / "profile.json",
                {"percent": breakdown.percentages,
                 "seconds": breakdown.seconds, "total_s": breakdown.total})
    with open(out / "profile.csv", "w") as fh:
        fh.write("category,seconds,percent\n")
        for cat in bench_mod.PROFILE_CATEGORIES:
            fh.write(f"{cat},{breakdown.seconds[cat]!r},"
                     f"{breakdown.percentages[cat]!r}\n")
    plots.render_profile(breakdown, out / "profile.png")
    _write_meta(out, "profile", started)
    click.echo(f"profile: total {breakdown.total:.3f}s attributed -> {out}")


@main.command("ablate")
@click.option("--config", "config_path", required=True)
@click.option("--out", "out_path", default=None)
@click.option("--widths", default="64,128", show_default=True)
def ablate_cmd(config_path, out_path, widths):
    """Ablation grid: PPO variant x state encoder x network width."""
    started = time.time()
    cfg = load_config(config_path)
    out = _out_dir(out_path)
    lm, _ = _load_world(cfg)
    corpus = make_corpus(lm, cfg.train_corpus)
    suite = make_corpus(lm, cfg.eval_corpus)
    rows = bench_mod.compare_ablations(
        lm, corpus, suite, cfg.cost, cfg.train_run, cfg.eval_run,
        action_by_triple(*cfg.baseline_action), cfg.features,
        policy_seed=cfg.policy_seed,
        widths=tuple(int(w) for w in widths.split(",")))
    _write_json(out / "ablation.json", rows)
    (out / "ablation.txt").write_text(bench_mod.ablation_table(rows))
    _write_meta(out, "ablate", started)
    click.echo(f"ablate: {len(rows)} cells -> {out}")


@main.command("inspect-tree")
@click.option("--config", "config_path", required=True)
@click.option("--context", "context_text", default="", help="comma-separated token ids")
@click.option("--action", "action_text", default="32,4,8", show_default=True)
@click.option("--eps", type=float, default=None)
@click.option("--out", "out_path", default=None)
def inspect_tree_cmd(config_path, context_text, action_text, eps, out_path):
    """Build one draft tree and emit it as DOT and JSON for debugging."""
    started = time.time()
    cfg = load_config(config_path)
    out = _out_dir(out_path)
    lm, _ = _load_world(cfg)
    ctx = [BOS_TOKEN] + [int(t) for t in context_text.split(",") if t != ""]
    tree = build_tree(lm, ctx, _parse_action(action_text), eps=eps)
    (out / "tree.json").write_text(tree_to_json(tree) + "\n")
    (out / "tree.dot").write_text(tree.to_dot() + "\n")
    _write_meta(out, "inspect-tree", started)
    click.echo(f"inspect-tree: {len(tree)} nodes, "
               f"{len(tree.layers)} layers -> {out}")


@main.command("dump-model")
@click.option("--config", "config_path", required=True)
@click.option("--out", "out_path", default=None)
@click.option("--max-rows", type=int, default=4096, show_default=True)
def dump_model_cmd(config_path, out_path, max_rows):
    """Emit the target model's conditional tables as CSV for auditing."""
    started = time.time()
    cfg = load_config(config_path)
    out = _out_dir(out_path)
    lm, _ = _load_world(cfg)
    v, m = cfg.model.vocab_size, cfg.model.context_order
    n_buckets = min(v ** m, max_rows)
    with open(out / "model_table.csv", "w") as fh:
        ctx_cols = ",".join(f"ctx_{i}" for i in range(m))
        fh.write(f"bucket,{ctx_cols}," + ",".join(f"p_{t}" for t in range(v)) + "\n")
        for b in range(n_buckets):
            ctx = []
            rest = b
            for _ in range(m):
                ctx.append(rest % v)
                rest //= v
            ctx = ctx[::-1]
            row = lm.row_for_bucket(b)
            fh.write(f"{b}," + ",".join(str(t) for t in ctx) + ","
                     + ",".join(repr(p) for p in row) + "\n")
    _write_meta(out, "dump-model", started)
    click.echo(f"dump-model: {n_buckets} rows -> {out / 'model_table.csv'}")


@main.command("export-policy")
@click.option("--policy", "policy_path", required=True)
@click.option("--out", "out_path", default=None)
def export_policy_cmd(policy_path, out_path):
    """Dump checkpoint weights as CSV for inspection."""
    started = time.time()
    net, digest, meta = load_checkpoint(policy_path)
    out = _out_dir(out_path)
    (out / "policy_weights.csv").write_text(export_policy_csv(net))
    _write_json(out / "policy_meta.json", {"config_digest": digest, **meta})
    _write_meta(out, "export-policy", started)
    click.echo(f"export-policy: {net.n_actions} actions, hidden {net.hidden} -> {out}")


def cli_entry():
    try:
        main(standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except click.UsageError as exc:
        click.echo(str(exc), err=True)
        sys.exit(2)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    cli_entry()
