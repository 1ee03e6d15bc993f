"""Command-line workflow: gen-data -> train-classic -> train-bgan -> evaluate -> compare.

Every command takes ``--config``, ``--seed`` and ``--out``; files are read from
and written to the output directory under fixed names. Exit codes: 0 success,
1 usage or config error, 2 contract or freeze violation, 3 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bgan import Generator
from .bias import GlobalBias, global_bias, zero_bias
from .checkpoint import CheckpointError, load_bgan, load_classic, save_bgan, save_classic
from .classic import ClassicHyper, PhiEncoder, freeze, train_classic
from .config import ConfigError, ExperimentConfig, config_to_json, load_config
from .core import ContractViolation, FreezeViolation, TrainingDivergence
from .data import Dataset, DatasetParseError, generate, load_dataset, save_dataset
from .gradcheck import run_suite
from .metrics import Corrector, MetricsReport, evaluate
from .training import train_bgan, train_integrated

DATASET = "dataset.json"
CLASSIC = "classic.json"
CLASSIC_TRACE = "classic_trace.csv"
BGAN = "bgan.json"
BGAN_TRACE = "bgan_trace.csv"
REPORT_CSV = "report.csv"
FACC_CSV = "facc.csv"
PER_CLASS_CSV = "per_class.csv"
REPORT_TXT = "report.txt"


class UsageError(ValueError):
    """Inputs that are individually valid but do not fit together."""


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- shared pieces


def classic_hyper(cfg: ExperimentConfig) -> ClassicHyper:
    c = cfg.classic
    return ClassicHyper(lr=c.lr, batch=c.batch, iters=c.iters)


def build_phi(cfg: ExperimentConfig, ds: Dataset) -> PhiEncoder:
    return PhiEncoder(ds.spec.feature_dim, ds.spec.m_classes, cfg.bias.phi_variant, seed=cfg.seed, out_scale=cfg.bias.phi_scale)


def prior_bias(cfg: ExperimentConfig, ds: Dataset) -> GlobalBias:
    """The frequency prior from training-label frequencies, whatever the switch says."""
    return global_bias(ds.train_frequencies(), cfg.bias.a, cfg.bias.eps_glo)


def generator_bias(cfg: ExperimentConfig, ds: Dataset) -> GlobalBias:
    """The prior fed to the generator: zero when the global bias is switched off."""
    return prior_bias(cfg, ds) if cfg.bias.use_global_bias else zero_bias(ds.spec.m_classes)


def build_correctors(cfg: ExperimentConfig, ds: Dataset, G: Generator | None) -> list[Corrector]:
    out = []
    for kind in cfg.eval.correctors:
        if kind == "identity":
            out.append(Corrector(kind))
        elif kind == "posterior_divide":
            out.append(Corrector(kind, ds.train_frequencies()))
        elif kind == "resistance_subtract":
            out.append(Corrector(kind, -prior_bias(cfg, ds).b_glo))
        else:
            if G is None:
                raise UsageError("the sbp corrector needs a bias-GAN checkpoint")
            out.append(Corrector(kind, (G, generator_bias(cfg, ds))))
    return out


def _check_shapes(cfg: ExperimentConfig, ds: Dataset, in_dim: int, m: int, what: str) -> None:
    if m != ds.spec.m_classes or m != cfg.dataset.m_classes:
        raise UsageError(f"{what} has M={m}, dataset/config have M={ds.spec.m_classes}/{cfg.dataset.m_classes}")
    if in_dim != ds.spec.feature_dim:
        raise UsageError(f"{what} expects ctx of dimension {in_dim}, dataset provides {ds.spec.feature_dim}")


# ---------------------------------------------------------------- reports


def report_csv(reports: list[MetricsReport]) -> str:
    rows = [["corrector", "K", "R@K", "mR@K", "A@K"]]
    for r in reports:
        for k in r.k_values:
            rows.append([r.corrector, k, r.r_at_k[k], r.mr_at_k[k], r.a_at_k[k]])
    return _csv(rows)


def facc_csv(reports: list[MetricsReport]) -> str:
    rows = [["corrector", "top_t", "F-Acc"]]
    for r in reports:
        rows += [[r.corrector, t, v] for t, v in r.f_acc.items()]
    return _csv(rows)


def per_class_csv(reports: list[MetricsReport], ds: Dataset) -> str:
    """Per-class recall, classes listed head to tail by training frequency."""
    freq = ds.train_frequencies()
    order = np.argsort(-freq, kind="stable")
    rows = [["corrector", "K", "rank", "class", "train_freq", "recall"]]
    for r in reports:
        for k in r.k_values:
            for rank, c in enumerate(order):
                rows.append([r.corrector, k, rank, int(c), freq[c], r.per_class_recall[k][c]])
    return _csv(rows)


def report_txt(reports: list[MetricsReport]) -> str:
    """Aligned table in percent: one row per corrector, R / mR / A per K, then F-Acc."""
    ks = reports[0].k_values
    ts = list(reports[0].f_acc)
    head = ["corrector"] + [f"{m}@{k}" for k in ks for m in ("R", "mR", "A")] + [f"F-Acc@{t}" for t in ts]
    body = []
    for r in reports:
        vals = [v for k in ks for v in (r.r_at_k[k], r.mr_at_k[k], r.a_at_k[k])] + [r.f_acc[t] for t in ts]
        body.append([r.corrector] + [f"{100 * v:.2f}" for v in vals])
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    return "\n".join([fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]) + "\n"


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: ExperimentConfig, out: Path, echo=print) -> Dataset:
    ds = generate(cfg.dataset_spec())
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / DATASET)
    counts = np.bincount(ds.train.label, minlength=ds.spec.m_classes)
    echo("class  weight      train_count")
    for j, (w, c) in enumerate(zip(ds.class_weights, counts)):
        echo(f"{j:5d}  {w:.6f}  {c:11d}")
    half = ds.spec.m_classes // 2
    echo(f"head half: {counts[:half].sum()} train samples; tail half: {counts[half:].sum()}")
    echo(f"wrote {out / DATASET}")
    return ds


def _save_classic_outputs(cfg, out: Path, model, trace, echo) -> None:
    save_classic(model, out / CLASSIC, cfg.snapshot())
    (out / CLASSIC_TRACE).write_text(_csv([["iteration", "loss"]] + [[i, v] for i, v in enumerate(trace)]))
    echo(f"classic checksum {model.checksum}; wrote {out / CLASSIC} and {out / CLASSIC_TRACE}")


def _save_bgan_outputs(cfg, out: Path, state, ds: Dataset, echo) -> None:
    extra = {
        "constructions": state.constructions,
        "bad_constructions": state.bad_constructions,
        "min_margin": state.min_margin if state.constructions else None,
    }
    save_bgan(state, out / BGAN, ds.spec.feature_dim, ds.spec.m_classes, cfg.snapshot(), extra)
    rows = [["iteration", "L_G", "L_D", "lr_g", "lr_d", "critic_gap", "target_dist"]]
    rows += [[r["iteration"], r["loss_g"], r["loss_d"], r["lr_g"], r["lr_d"], r["critic_gap"], r["target_dist"]] for r in state.trace]
    (out / BGAN_TRACE).write_text(_csv(rows))
    echo(
        f"bias-GAN: {state.iteration} iterations, {state.critic_updates} critic and "
        f"{state.gen_updates} generator updates; {state.bad_constructions} of "
        f"{state.constructions} constructed biases violated the margin"
    )
    echo(f"wrote {out / BGAN} and {out / BGAN_TRACE}")


def cmd_train_classic(cfg: ExperimentConfig, out: Path, echo=print):
    if cfg.mode == "integrated":
        raise UsageError("mode 'integrated' trains the classic model inside train-bgan")
    ds = load_dataset(out / DATASET)
    model, trace = train_classic(ds, classic_hyper(cfg), seed=cfg.seed)
    freeze(model)
    _save_classic_outputs(cfg, out, model, trace, echo)
    return model, trace


def cmd_train_bgan(cfg: ExperimentConfig, out: Path, echo=print):
    ds = load_dataset(out / DATASET)
    phi = build_phi(cfg, ds)
    gb = generator_bias(cfg, ds)
    hyper = cfg.bgan_hyper()
    if cfg.mode == "integrated":
        model, trace, state = train_integrated(ds, phi, gb, classic_hyper(cfg), hyper, seed=cfg.seed)
        _save_classic_outputs(cfg, out, model, trace, echo)
    else:
        model = load_classic(out / CLASSIC)
        if not model.frozen:
            raise ContractViolation(f"{out / CLASSIC} holds an unfrozen classic model")
        _check_shapes(cfg, ds, model.in_dim, model.m_classes, "classic checkpoint")
        before = model.checksum
        state = train_bgan(model, phi, gb, ds, hyper, seed=cfg.seed)
        model.verify_frozen()
        echo(f"classic checksum before {before} after {model.checksum}: unchanged")
    _save_bgan_outputs(cfg, out, state, ds, echo)
    return model, state


def cmd_evaluate(cfg: ExperimentConfig, out: Path, echo=print) -> list[MetricsReport]:
    ds = load_dataset(out / DATASET)
    model = load_classic(out / CLASSIC)
    _check_shapes(cfg, ds, model.in_dim, model.m_classes, "classic checkpoint")
    if not model.frozen:
        raise ContractViolation(f"{out / CLASSIC} holds an unfrozen classic model")
    G = None
    if "sbp" in cfg.eval.correctors:
        G, _, raw = load_bgan(out / BGAN)
        _check_shapes(cfg, ds, raw["arch"]["in_dim"], raw["arch"]["m_classes"], "bias-GAN checkpoint")
    reports = [evaluate(c, model, ds.test, cfg.eval.k_values, cfg.eval.top_t_values) for c in build_correctors(cfg, ds, G)]
    echo(f"classic checksum {model.checksum} verified before and after every corrector")
    (out / REPORT_CSV).write_text(report_csv(reports))
    (out / FACC_CSV).write_text(facc_csv(reports))
    (out / PER_CLASS_CSV).write_text(per_class_csv(reports, ds))
    text = report_txt(reports)
    (out / REPORT_TXT).write_text(text)
    echo(text, end="")
    return reports


def run_pipeline(cfg: ExperimentConfig, out: Path, echo=print) -> list[MetricsReport]:
    cmd_gen_data(cfg, out, echo)
    if cfg.mode == "gradual":
        cmd_train_classic(cfg, out, echo)
    cmd_train_bgan(cfg, out, echo)
    return cmd_evaluate(cfg, out, echo)


def _metric_table(reports: list[MetricsReport]) -> dict[str, dict[str, float]]:
    table = {}
    for r in reports:
        row = {}
        for k in r.k_values:
            row[f"R@{k}"], row[f"mR@{k}"], row[f"A@{k}"] = r.r_at_k[k], r.mr_at_k[k], r.a_at_k[k]
        for t, v in r.f_acc.items():
            row[f"F-Acc@{t}"] = v
        table[r.corrector] = row
    return table


def summarize(per_seed: dict[int, list[MetricsReport]]) -> tuple[str, str, str]:
    """Multi-seed summary: (summary csv, recall-drop trend csv, aligned text)."""
    seeds = sorted(per_seed)
    tables = {s: _metric_table(per_seed[s]) for s in seeds}
    first = tables[seeds[0]]
    names = list(first)
    metrics = list(first[names[0]])
    base = "identity" if "identity" in names else None
    rows = [["corrector", "metric", "mean", "std", "delta_vs_identity"]]
    lines = []
    for name in names:
        for metric in metrics:
            vals = np.array([tables[s][name][metric] for s in seeds])
            delta = np.mean([tables[s][name][metric] - tables[s][base][metric] for s in seeds]) if base else float("nan")
            rows.append([name, metric, vals.mean(), vals.std(ddof=1), delta])
        cells = [f"{m} {100 * np.mean([tables[s][name][m] for s in seeds]):6.2f}+-{100 * np.std([tables[s][name][m] for s in seeds], ddof=1):.2f}" for m in metrics]
        lines.append(f"{name:20s} " + "  ".join(cells))
    trend = [["seed", "K", "corrector", "R_drop_vs_identity", "mR_gain_vs_identity"]]
    drop_lines = []
    if base:
        for k in per_seed[seeds[0]][0].k_values:
            for s in seeds:
                for name in names:
                    if name == base:
                        continue
                    t = tables[s]
                    trend.append([s, k, name, t[base][f"R@{k}"] - t[name][f"R@{k}"], t[name][f"mR@{k}"] - t[base][f"mR@{k}"]])
            if "resistance_subtract" in names and "sbp" in names:
                drops = {n: np.mean([tables[s][base][f"R@{k}"] - tables[s][n][f"R@{k}"] for s in seeds]) for n in ("resistance_subtract", "sbp")}
                verdict = "yes" if drops["resistance_subtract"] > drops["sbp"] else "no"
                drop_lines.append(
                    f"K={k}: mean R drop resistance_subtract {100 * drops['resistance_subtract']:.2f}, "
                    f"sbp {100 * drops['sbp']:.2f}; sbp has the smaller drop: {verdict}"
                )
    text = f"seeds: {seeds}\n" + "\n".join(lines) + "\n" + "\n".join(drop_lines) + ("\n" if drop_lines else "")
    return _csv(rows), _csv(trend), text


def cmd_compare(cfg: ExperimentConfig, out: Path, echo=print) -> dict[int, list[MetricsReport]]:
    if len(cfg.seeds) < 2:
        raise UsageError("compare needs at least two seeds")
    per_seed = {}
    for s in cfg.seeds:
        echo(f"== seed {s}")
        per_seed[s] = run_pipeline(cfg.with_seed(s), out / f"seed_{s}", echo)
    summary, trend, text = summarize(per_seed)
    (out / "summary.csv").write_text(summary)
    (out / "trend.csv").write_text(trend)
    (out / "summary.txt").write_text(text)
    echo(text, end="")
    return per_seed


def cmd_gradcheck(seed: int = 0, instances: int = 20, echo=print) -> bool:
    results = run_suite(instances=instances, seed=seed)
    for r in results:
        where = f" (worst at {r.worst_param})" if not r.ok else ""
        echo(f"{'ok  ' if r.ok else 'FAIL'} {r.name:26s} max rel err {r.max_rel_err:.2e}{where}")
    return all(r.ok for r in results)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbp", description="Sample-level bias prediction on synthetic long-tailed data.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON config; defaults apply to missing fields")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", type=Path, default=None, help="output directory (default: config output_dir)")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset")
    sub.add_parser("train-classic", parents=[common], help="train and freeze the classic model")
    sub.add_parser("train-bgan", parents=[common], help="train the bias GAN (integrated mode: both models)")
    sub.add_parser("evaluate", parents=[common], help="score every configured corrector")
    sub.add_parser("compare", parents=[common], help="full pipeline over the config's seed list")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--instances", type=int, default=20)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return 0 if cmd_gradcheck(0 if args.seed is None else args.seed, args.instances) else 2
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = replace(cfg, output_dir=str(args.out))
        out = Path(cfg.output_dir)
        print(config_to_json(cfg))
        commands = {
            "gen-data": cmd_gen_data,
            "train-classic": cmd_train_classic,
            "train-bgan": cmd_train_bgan,
            "evaluate": cmd_evaluate,
            "compare": cmd_compare,
        }
        commands[args.command](cfg, out)
    except (ConfigError, UsageError, DatasetParseError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainingDivergence as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 3
    except (ContractViolation, FreezeViolation) as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
