"""Experiment runner behind the CLI: data preparation, single runs,
repeated-seed stability, grid search and the method comparison table.

Every output is a deterministic function of the resolved config and seed;
nothing time- or host-dependent is written.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import divergence as dv
from .config import RunConfig, format_value
from .divergence import DiagGaussian, TwoPeakPrior
from .evaluation import (RocCurve, SeedResult, StabilityReport, best_threshold, orient, roc_curve,
                         stability, write_roc_csv, write_stability_csv)
from .manifold import baseline_pipeline
from .models import (posterior_means, save_checkpoint, score, train_ae, train_casvae,
                     train_vanilla_vae)
from .synthdata import ImageSet, NormStats, generate_dataset, load_set, normalize, save_set


@dataclass
class Datasets:
    train: ImageSet  # normalized, never carries labels
    evaluation: ImageSet  # normalized, labeled


def generate_splits(cfg: RunConfig) -> tuple[ImageSet, ImageSet, NormStats]:
    """Raw train/eval splits from the config's data block, normalized with train stats."""
    kw = dict(contamination_prob=cfg.contamination, noise_sigma=cfg.noise_sigma, C=cfg.channels,
              H=cfg.size, W=cfg.size, cfg=cfg.generator_config())
    train = generate_dataset(cfg.n_train, cfg.balance, seed=cfg.data_seed, split=0, **kw)
    evaluation = generate_dataset(cfg.n_eval, cfg.balance, seed=cfg.data_seed, split=1, **kw)
    train_n, stats = normalize(train.without_labels())
    eval_n, _ = normalize(evaluation, stats)
    return train_n, eval_n, stats


def load_datasets(cfg: RunConfig) -> Datasets:
    if cfg.train_file:
        # the train file is read without its labels section, whether or not one exists
        train = load_set(cfg.train_file, with_labels=False)
        evaluation = load_set(cfg.eval_file)
        if evaluation.labels is None:
            raise ValueError(f"evaluation file {cfg.eval_file} has no labels section")
        return Datasets(train, evaluation)
    train, evaluation, _ = generate_splits(cfg)
    return Datasets(train, evaluation)


@dataclass
class RunResult:
    scores: np.ndarray
    labels: np.ndarray
    curve: RocCurve
    auc: float
    flipped: bool
    threshold: tuple[float, float, float]
    history: str  # CSV text
    models: dict
    train_seconds: float


def run_method(cfg: RunConfig, data: Datasets, seed: int | None = None) -> RunResult:
    """Train ``cfg.method`` on the unlabeled split and score the labeled split."""
    seed = cfg.seed if seed is None else seed
    tc = cfg.train_config(seed)
    train_x = data.train.without_labels()
    eval_x = data.evaluation.flat()
    start = time.perf_counter()
    if cfg.method == "casvae":
        ae, ae_hist = train_ae(train_x, tc)
        head, hist = train_casvae(ae, train_x, tc)
        scores = score(ae, head, eval_x, tc.eval_noise)
        history = "phase,epoch,total,recon,kl_z1,surrogate_z2\n"
        history += "".join(f"ae,{i},{v!r},{v!r},0.0,0.0\n" for i, v in enumerate(ae_hist))
        history += "".join("head," + line + "\n" for line in hist.to_csv().splitlines()[1:])
        models = {"ae": ae, "head": head}
    else:
        family, reducer = cfg.method.split("_")
        two_peak = cfg.dklvae_surrogate if family == "dklvae" else None
        model, _, hist = train_vanilla_vae(train_x, tc, two_peak_unit=two_peak)
        latents = posterior_means(model, eval_x)
        # the reducer is fit on the evaluation latents themselves; the 1-D
        # methods used here have no out-of-sample map
        scores = baseline_pipeline(latents, reducer, k=cfg.ml_k, subsample=cfg.ml_subsample, seed=seed)
        history = hist.to_csv()
        models = {"vae": model}
    elapsed = time.perf_counter() - start
    labels = data.evaluation.labels
    curve = roc_curve(scores, labels)
    a, flipped = orient(scores, labels)
    oriented_curve = roc_curve(-scores, labels) if flipped else curve
    return RunResult(np.asarray(scores, np.float64), labels, oriented_curve, a, flipped,
                     best_threshold(oriented_curve), history, models, elapsed)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run(result: RunResult, cfg: RunConfig, seed: int, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.with_values(seed=seed, out=str(out))
    (out / "config.txt").write_text(resolved.to_text(), encoding="utf-8")
    write_roc_csv(result.curve, out / "roc.csv")
    th, fpr, tpr = result.threshold
    _write_csv(out / "metrics.csv", ["key", "value"], [
        ["method", cfg.method], ["seed", seed], ["auc", repr(result.auc)], ["flipped", int(result.flipped)],
        ["threshold", repr(th)], ["fpr", repr(fpr)], ["tpr", repr(tpr)],
        ["n_pos", result.curve.n_pos], ["n_neg", result.curve.n_neg],
    ])
    _write_csv(out / "scores.csv", ["index", "score", "label"],
               [[i, repr(float(s)), int(y)] for i, (s, y) in enumerate(zip(result.scores, result.labels))])
    (out / "history.csv").write_text(result.history)
    save_checkpoint(out / "checkpoint.cvt", result.models,
                    {"method": cfg.method, "seed": seed, "config": resolved.to_text().replace("\n", ";")})


def cmd_run(cfg: RunConfig, out: str | Path | None = None, data: Datasets | None = None) -> RunResult:
    out = Path(out or cfg.out)
    data = data or load_datasets(cfg)
    result = run_method(cfg, data)
    write_run(result, cfg, cfg.seed, out)
    return result


def _summary_rows(label: str, report: StabilityReport):
    return [label, repr(report.mean), repr(report.highest), repr(report.lowest), repr(report.spread),
            len(report.seeds)]


def cmd_stability(cfg: RunConfig, seeds: Sequence[int] | None = None, out: str | Path | None = None,
                  data: Datasets | None = None) -> StabilityReport:
    """One run per seed in ``out/seed_<n>``; per-seed failures are listed, not fatal."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.seeds if seeds is None else seeds)
    data = data or load_datasets(cfg)
    (out / "config.txt").write_text(cfg.with_values(seeds=seeds, out=str(out)).to_text(), encoding="utf-8")

    def run(seed: int) -> SeedResult:
        result = run_method(cfg, data, seed)
        write_run(result, cfg, seed, out / f"seed_{seed}")
        return SeedResult(result.auc, result.flipped)

    report = stability(run, seeds, continue_on_error=True)
    write_stability_csv(report, out / "stability.csv")
    _write_csv(out / "summary.csv", ["method", "mean_auc", "highest_auc", "lowest_auc", "spread", "n_seeds"],
               [_summary_rows(cfg.method, report)])
    _write_csv(out / "failures.csv", ["seed", "error"], sorted(report.failures.items()))
    return report


def cmd_grid(grid, base: RunConfig, max_runs: int, out: str | Path | None = None) -> list[dict]:
    """Stability over ``base.seeds`` at each grid point; leaderboard sorted by mean AUC."""
    out = Path(out or base.out)
    points = grid.configs(base, max_runs)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (point, cfg) in enumerate(points):
        report = cmd_stability(cfg, out=out / f"point_{i}")
        rows.append({"point": i, **point, "mean_auc": report.mean, "highest_auc": report.highest,
                     "lowest_auc": report.lowest, "n_seeds": len(report.seeds)})
    rows.sort(key=lambda r: (-r["mean_auc"], r["point"]))
    keys = list(grid.axes)
    header = ["rank", "point", *keys, "mean_auc", "highest_auc", "lowest_auc", "n_seeds"]
    _write_csv(out / "leaderboard.csv", header, [
        [rank, r["point"], *(format_value(r[k]) for k in keys), repr(r["mean_auc"]),
         repr(r["highest_auc"]), repr(r["lowest_auc"]), r["n_seeds"]]
        for rank, r in enumerate(rows, 1)])
    return rows


TABLE_ROWS = (("VAE + ML", "vae"), ("DKL-VAE + ML", "dklvae"), ("CasVAE", "casvae"))


@dataclass
class ReproduceResult:
    reports: dict[str, StabilityReport]
    seconds: dict[str, float]


def cmd_reproduce(cfg: RunConfig, reducer: str = "isomap", out: str | Path | None = None) -> ReproduceResult:
    """Three-row comparison table (method, mean, highest, lowest AUC) on one dataset."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_datasets(cfg)
    reports, seconds = {}, {}
    rows = []
    for label, family in TABLE_ROWS:
        method = family if family == "casvae" else f"{family}_{reducer}"
        mcfg = cfg.with_values(method=method)
        start = time.perf_counter()
        report = cmd_stability(mcfg, out=out / method, data=data)
        seconds[label] = time.perf_counter() - start
        reports[label] = report
        rows.append([label, repr(report.mean), repr(report.highest), repr(report.lowest)])
    _write_csv(out / "table.csv", ["method", "mean_auc", "highest_auc", "lowest_auc"], rows)
    return ReproduceResult(reports, seconds)


# -- divergence map -----------------------------------------------------------------------

DEFAULT_MAP = {
    "mu": [round(v, 2) for v in np.linspace(-4, 4, 33).tolist()],
    "sigma": [0.1, 0.5, 1.0, 2.0],
    "m": [1e-6, 0.5, 1.0, 2.0, 3.0],
    "s": [1.0],
}


def divergence_map(out: str | Path, grid: dict | None = None, order: int = 64) -> int:
    """CSV of every surrogate next to the quadrature oracle over a parameter grid."""
    grid = grid or DEFAULT_MAP
    rows = []
    for m in grid["m"]:
        for s in grid["s"]:
            prior = TwoPeakPrior(m, s, 0.5)
            for sigma in grid["sigma"]:
                mu = np.asarray(grid["mu"], dtype=np.float64)
                q = DiagGaussian(mu, np.full_like(mu, 2 * np.log(sigma)))
                cols = [dv.dklsc(q, prior), dv.dkl_paper(q, prior), dv.w_surrogate(q, prior),
                        dv.pw_surrogate(q, prior),
                        [dv.mixture_kl_quadrature(DiagGaussian(x, 2 * np.log(sigma)), prior, order) for x in mu]]
                for i, x in enumerate(mu):
                    rows.append([repr(float(x)), repr(sigma), repr(m), repr(s),
                                 *(repr(float(c[i])) for c in cols)])
    _write_csv(Path(out), ["mu", "sigma", "m", "s", "dklsc", "dkl_paper", "w", "pw", "quadrature"], rows)
    return len(rows)


def cmd_generate(cfg: RunConfig, out: str | Path) -> dict[str, Path]:
    """Write ``train.cvt`` (no labels), ``eval.cvt`` (labels) and ``stats.cvt``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train, evaluation, stats = generate_splits(cfg)
    paths = {"train": out / "train.cvt", "eval": out / "eval.cvt", "stats": out / "stats.cvt"}
    save_set(train, paths["train"], include_labels=False)
    save_set(evaluation, paths["eval"])
    stats.save(paths["stats"])
    return paths


def cmd_evaluate(scores_path: str | Path, labels_path: str | Path, out: str | Path) -> tuple[float, bool]:
    """ROC CSV and oriented AUC from one-column score and label files (optional header)."""
    def column(path):
        vals = []
        for line in Path(path).read_text().split():
            try:
                vals.append(float(line.split(",")[-1]))
            except ValueError:
                if vals:
                    raise
        return np.asarray(vals)

    scores, labels = column(scores_path), column(labels_path).astype(np.int64)
    a, flipped = orient(scores, labels)
    write_roc_csv(roc_curve(-scores if flipped else scores, labels), out)
    return a, flipped
