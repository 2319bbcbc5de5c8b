"""Command-line entry point: ``casvae <subcommand> ...``.

Failures print one line ``error: <ErrorClass>: <message>`` to stderr and
exit with status 2 (bad input) or 1 (runtime failure).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .config import RunConfig, load_config, parse_grid, parse_value
from .errors import CasvaeError, ConfigError


def _config(args, **overrides) -> RunConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "set", None):
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            overrides[key.strip()] = parse_value(key.strip(), value)
    return load_config(getattr(args, "config", None), **overrides)


def _seeds(text: str | None, n: int | None):
    if text:
        return [int(v) for v in text.split(",") if v.strip()]
    if n is not None:
        return list(range(n))
    return None


def cmd_generate(args) -> None:
    cfg = _config(args, n_train=args.n_train if args.n is None else args.n,
                  n_eval=args.n_eval if args.n is None else args.n, size=args.size,
                  channels=args.channels, balance=args.balance, data_seed=args.seed,
                  contamination=args.contamination, noise_sigma=args.noise)
    paths = ex.cmd_generate(cfg, args.out)
    for name, path in paths.items():
        print(f"{name},{path}")


def cmd_run(args) -> None:
    cfg = _config(args, method=args.method, seed=args.seed, out=args.out)
    result = ex.cmd_run(cfg)
    print(f"method,{cfg.method}\nauc,{result.auc!r}\nflipped,{int(result.flipped)}")


def cmd_stability(args) -> None:
    cfg = _config(args, method=args.method, out=args.out)
    report = ex.cmd_stability(cfg, _seeds(args.seeds, args.n_seeds))
    print("method,mean_auc,highest_auc,lowest_auc,n_seeds,failures")
    print(f"{cfg.method},{report.mean!r},{report.highest!r},{report.lowest!r},{len(report.seeds)},"
          f"{len(report.failures)}")


def cmd_grid(args) -> None:
    cfg = _config(args, out=args.out)
    seeds = _seeds(args.seeds, args.n_seeds)
    if seeds is not None:
        cfg = cfg.with_values(seeds=seeds)
    grid = parse_grid(Path(args.grid).read_text(encoding="utf-8"))
    print(f"grid_size,{grid.size}", file=sys.stderr)
    rows = ex.cmd_grid(grid, cfg, args.max_runs)
    print(f"best_mean_auc,{rows[0]['mean_auc']!r}")


def cmd_reproduce(args) -> None:
    cfg = _config(args, out=args.out)
    seeds = _seeds(args.seeds, args.n_seeds)
    if seeds is not None:
        cfg = cfg.with_values(seeds=seeds)
    res = ex.cmd_reproduce(cfg, args.reducer)
    print("method,mean_auc,highest_auc,lowest_auc")
    for label, rep in res.reports.items():
        print(f"{label},{rep.mean:.4f},{rep.highest:.4f},{rep.lowest:.4f}")


def cmd_divergence_map(args) -> None:
    n = ex.divergence_map(args.out, order=args.order)
    print(f"rows,{n}")


def cmd_evaluate(args) -> None:
    a, flipped = ex.cmd_evaluate(args.scores, args.labels, args.out)
    print(f"auc,{a!r}\nflipped,{int(flipped)}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: UsageError: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="casvae", description="Cascade VAE experiments on synthetic star/galaxy images")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output directory")
        return sp

    g = sub.add_parser("generate", help="write train/eval containers and normalization stats")
    g.add_argument("--config")
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, help="images per split (sets both)")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-eval", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--channels", type=int)
    g.add_argument("--balance", type=float, help="galaxy fraction")
    g.add_argument("--contamination", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_generate)

    r = with_config(sub.add_parser("run", help="train one method and evaluate it"))
    r.add_argument("--method")
    r.add_argument("--seed", type=int)
    r.set_defaults(fn=cmd_run)

    s = with_config(sub.add_parser("stability", help="repeat a run over seeds"))
    s.add_argument("--method")
    s.add_argument("--seeds", help="comma-separated seed list")
    s.add_argument("--n-seeds", type=int, help="use seeds 0..n-1")
    s.set_defaults(fn=cmd_stability)

    gr = with_config(sub.add_parser("grid", help="grid search, leaderboard by mean AUC"))
    gr.add_argument("--grid", required=True, help="key = v1, v2, ... per line")
    gr.add_argument("--max-runs", type=int, required=True)
    gr.add_argument("--seeds")
    gr.add_argument("--n-seeds", type=int)
    gr.set_defaults(fn=cmd_grid)

    rp = with_config(sub.add_parser("reproduce", help="VAE+ML / DKL-VAE+ML / CasVAE comparison table"))
    rp.add_argument("--seeds")
    rp.add_argument("--n-seeds", type=int)
    rp.add_argument("--reducer", choices=("isomap", "pca"), default="isomap")
    rp.set_defaults(fn=cmd_reproduce)

    d = sub.add_parser("divergence-map", help="surrogates against the quadrature oracle")
    d.add_argument("--out", required=True)
    d.add_argument("--order", type=int, default=64)
    d.set_defaults(fn=cmd_divergence_map)

    e = sub.add_parser("evaluate", help="ROC CSV and oriented AUC for a score file")
    e.add_argument("--scores", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except (CasvaeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
