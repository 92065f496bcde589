"""Command-line interface.

Subcommands: encode, gen-corpus, train-cnn, classify, train-agent, backtest,
transfer-eval, report. Every subcommand accepts ``--config <file>`` with
plain key=value pairs; explicit flags override config values, config values
override built-in defaults. Exit code is 0 on success; failures print a
single machine-readable line ``error: <kind>: <message>`` to stderr and
return 1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from gaftrader import backtest as bt
from gaftrader import classifier as clf
from gaftrader import gaf, patterns, ppo
from gaftrader.config import ConfigError, parse_bool, read_kv_config
from gaftrader.market_data import CsvSchema, parse_csv
from gaftrader.trading_env import EnvConfig

_CASTS = {
    "window": int, "origin": int, "count": int, "seed": int, "epochs": int,
    "batch_size": int, "lr": float, "episodes": int, "update_timestep": int,
    "ppo_epochs": int, "gamma": float, "clip": float, "entropy_coef": float,
    "value_coef": float, "fee": float, "bar_interval": int,
    "allow_overlap": parse_bool, "sampled": parse_bool, "strict_state": parse_bool,
    "normalize_returns": parse_bool,
}


def _merge_config(args: argparse.Namespace) -> dict[str, str]:
    """Fill unset (None) args from the config file; return raw options too."""
    options = read_kv_config(args.config) if getattr(args, "config", None) else {}
    for key, raw in options.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            cast = _CASTS.get(key, str)
            try:
                setattr(args, key, cast(raw))
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
    return options


def _default(args, key, value):
    if getattr(args, key, None) is None:
        setattr(args, key, value)


def _load_series(path: str, options: dict[str, str], bar_interval: int | None = None):
    schema = CsvSchema.from_config(options)
    if bar_interval is None and "bar_interval" in options:
        bar_interval = int(options["bar_interval"])
    return parse_csv(path, schema=schema, bar_interval=bar_interval)


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_encode(args) -> int:
    options = _merge_config(args)
    _default(args, "window", 10)
    _default(args, "origin", 0)
    series = _load_series(args.csv, options)
    windows = {w.origin_index: w for w in
               _series_windows(series, args.window, options)}
    if args.origin not in windows:
        raise ConfigError(f"no window at origin {args.origin}")
    tensor = gaf.encode_window(windows[args.origin])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c, name in enumerate(gaf.CHANNELS):
        with (out / f"gaf_{name}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for row in tensor[:, :, c]:
                writer.writerow([repr(float(v)) for v in row])
    _write_grid_image(tensor, out / "gaf_grid.png")
    print(f"encoded window at origin {args.origin} -> {out}")
    return 0


def _series_windows(series, window, options):
    from gaftrader.market_data import make_windows

    gap_policy = options.get("gap_policy", "exclude")
    return make_windows(series, window, gap_policy=gap_policy)


def _write_grid_image(tensor: np.ndarray, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 2, figsize=(6, 6))
    for ax, c, name in zip(axes.ravel(), range(4), gaf.CHANNELS):
        ax.imshow(tensor[:, :, c], cmap="gray", vmin=-1.0, vmax=1.0)
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_gen_corpus(args) -> int:
    _merge_config(args)
    _default(args, "count", 9000)
    _default(args, "seed", 0)
    _default(args, "window", 10)
    pairs = patterns.generate_corpus(args.count, seed=args.seed, window_len=args.window)
    patterns.write_corpus_csv(pairs, args.out)
    print(f"wrote {len(pairs)} labeled windows -> {args.out}")
    return 0


def cmd_train_cnn(args) -> int:
    _merge_config(args)
    _default(args, "epochs", 30)
    _default(args, "batch_size", 32)
    _default(args, "lr", 1e-3)
    _default(args, "seed", 0)
    pairs = patterns.read_corpus_csv(args.corpus)
    tensors = gaf.encode_windows([w for w, _ in pairs])
    labels = np.array([int(c) for _, c in pairs])
    config = clf.ClassifierConfig(epochs=args.epochs, batch_size=args.batch_size,
                                  learning_rate=args.lr, seed=args.seed)
    model = clf.train_classifier(tensors, labels, config,
                                 extra_meta={"corpus_sha256": _sha256(args.corpus)})
    clf.save_classifier(model, args.out)
    print(f"val_accuracy={model.metadata['val_accuracy']:.4f} "
          f"epochs_run={model.metadata['epochs_run']} -> {args.out}")
    return 0


def cmd_classify(args) -> int:
    options = _merge_config(args)
    model = clf.load_classifier(args.ckpt)
    series = _load_series(args.csv, options)
    windows = _series_windows(series, model.window, options)
    probs = model.predict_batch(gaf.encode_windows(windows))
    writer = csv.writer(sys.stdout)
    header = ["origin", "timestamp", "label"]
    header += [c.name.lower() for c in patterns.PatternClass]
    writer.writerow(header)
    for w, p in zip(windows, probs):
        label = patterns.PatternClass(int(np.argmax(p))).name.lower()
        row = [w.origin_index, w.bars[-1].timestamp, label]
        row += [f"{v:.6f}" for v in p]
        writer.writerow(row)
    return 0


def _build_ppo_config(args) -> ppo.PpoConfig:
    return ppo.PpoConfig(
        gamma=args.gamma,
        clip=args.clip,
        epochs=args.ppo_epochs,
        update_timestep=args.update_timestep,
        value_coef=args.value_coef,
        entropy_coef=args.entropy_coef,
        learning_rate=args.lr,
        seed=args.seed,
        normalize_returns=args.normalize_returns,
    )


def cmd_train_agent(args) -> int:
    options = _merge_config(args)
    _default(args, "episodes", 50)
    _default(args, "seed", 0)
    _default(args, "gamma", 0.99)
    _default(args, "clip", 0.2)
    _default(args, "ppo_epochs", 4)
    _default(args, "update_timestep", 2048)
    _default(args, "value_coef", 0.5)
    _default(args, "entropy_coef", 0.01)
    _default(args, "lr", 3e-4)
    _default(args, "fee", 0.0)
    _default(args, "normalize_returns", True)
    _default(args, "strict_state", False)
    series = _load_series(args.data, options)
    model = clf.load_classifier(args.classifier_ckpt)
    env_config = EnvConfig(window=model.window, fee_per_unit=args.fee,
                           augment_state=not args.strict_state,
                           gap_policy=options.get("gap_policy", "exclude"))
    from gaftrader.trading_env import TradingEnv

    env = TradingEnv(series, model, env_config)
    agent = ppo.PpoAgent(env.observation_dim, _build_ppo_config(args))
    result = ppo.train(env, agent, episodes=args.episodes)
    provenance = {
        "data": args.data,
        "data_sha256": _sha256(args.data),
        "train_start": series.start_timestamp,
        "train_end": series.end_timestamp,
        "window": model.window,
        "augment_state": not args.strict_state,
        "fee_per_unit": args.fee,
        "episodes": args.episodes,
    }
    agent.save(args.out, extra_meta=provenance)
    if args.log:
        _write_training_log(args.log, result)
    returns = result.episode_returns
    print(f"episodes={len(returns)} mean_return={np.mean(returns):.4f} "
          f"final_return={returns[-1]:.4f} updates={result.n_updates} -> {args.out}")
    return 0


def _write_training_log(path: str, result: ppo.TrainResult) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "return", "policy_loss", "value_loss", "entropy"])
        for i, (ret, stats) in enumerate(zip(result.episode_returns, result.episode_stats)):
            if stats is None:
                writer.writerow([i, repr(ret), "", "", ""])
            else:
                writer.writerow([i, repr(ret), repr(stats["policy_loss"]),
                                 repr(stats["value_loss"]), repr(stats["entropy"])])


def _load_eval_stack(args, options):
    series = _load_series(args.data, options)
    model = clf.load_classifier(args.classifier_ckpt)
    agent, extra = ppo.PpoAgent.load(args.agent_ckpt)
    if extra.get("window") is not None and int(extra["window"]) != model.window:
        raise ConfigError(
            f"window mismatch: agent trained with window {extra['window']}, "
            f"classifier uses {model.window}"
        )
    env_config = EnvConfig(window=model.window,
                           fee_per_unit=float(args.fee),
                           augment_state=bool(extra.get("augment_state", True)),
                           gap_policy=options.get("gap_policy", "exclude"))
    return series, model, agent, extra, env_config


def cmd_backtest(args, mode: str = "backtest") -> int:
    options = _merge_config(args)
    _default(args, "fee", 0.0)
    _default(args, "allow_overlap", False)
    _default(args, "sampled", False)
    series, model, agent, extra, env_config = _load_eval_stack(args, options)
    train_range = None
    if "train_start" in extra and "train_end" in extra:
        train_range = (int(extra["train_start"]), int(extra["train_end"]))
    if mode == "transfer-eval" and extra.get("data_sha256") not in (None, _sha256(args.data)):
        # Different asset: calendar overlap with the training period is
        # expected, warn instead of refusing.
        bt.check_disjoint_ranges(train_range, series, allow_overlap=True)
    else:
        bt.check_disjoint_ranges(train_range, series, allow_overlap=args.allow_overlap)
    provenance = {
        "mode": mode,
        "data": args.data,
        "classifier_ckpt": args.classifier_ckpt,
        "agent_ckpt": args.agent_ckpt,
        "window": model.window,
    }
    if mode == "transfer-eval":
        provenance["source_data"] = extra.get("data", "")
    report = bt.run_backtest(series, model, agent, env_config=env_config,
                             sampled=args.sampled, provenance=provenance)
    bt.write_report(report, args.out_dir)
    m = report.metrics
    print(f"total_return={m.total_return_pct:.4f}% max_drawdown={m.max_drawdown_pct:.4f}% "
          f"trades={m.trade_count} trades_per_week={m.trades_per_week:.2f} "
          f"win_rate={m.win_rate:.3f} -> {args.out_dir}")
    return 0


def cmd_report(args) -> int:
    _merge_config(args)
    metrics = bt.recompute_metrics_from_files(args.out_dir)
    out = Path(args.out_dir) / "report.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerow(["total_return_pct", repr(metrics.total_return_pct)])
        writer.writerow(["max_drawdown_pct", repr(metrics.max_drawdown_pct)])
        writer.writerow(["trade_count", metrics.trade_count])
        writer.writerow(["trades_per_week", repr(metrics.trades_per_week)])
        writer.writerow(["win_rate", repr(metrics.win_rate)])
        writer.writerow(["initial_equity", repr(metrics.initial_equity)])
        writer.writerow(["final_equity", repr(metrics.final_equity)])
        writer.writerow(["n_steps", metrics.n_steps])
        writer.writerow(["bar_interval", metrics.bar_interval])
    print(f"recomputed metrics -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaftrader",
        description="Encode candlestick windows as angular-field images, classify "
                    "patterns with a CNN, train a PPO trading agent, and backtest it.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key=value configuration file")

    p = sub.add_parser("encode", help="dump one window's GAF tensor as CSVs and an image grid")
    p.add_argument("--csv", required=True, help="OHLCV CSV file")
    p.add_argument("--window", type=int)
    p.add_argument("--origin", type=int)
    p.add_argument("--out-dir", required=True)
    add_config(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("gen-corpus", help="generate a balanced labeled pattern corpus")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-cnn", help="train the pattern classifier on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    add_config(p)
    p.set_defaults(func=cmd_train_cnn)

    p = sub.add_parser("classify", help="print pattern distributions for a series")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--csv", required=True)
    add_config(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("train-agent", help="train the PPO agent on a series")
    p.add_argument("--data", required=True)
    p.add_argument("--classifier-ckpt", required=True, dest="classifier_ckpt")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--ppo-epochs", type=int, dest="ppo_epochs")
    p.add_argument("--update-timestep", type=int, dest="update_timestep")
    p.add_argument("--value-coef", type=float, dest="value_coef")
    p.add_argument("--entropy-coef", type=float, dest="entropy_coef")
    p.add_argument("--lr", type=float)
    p.add_argument("--fee", type=float)
    p.add_argument("--strict-state", action="store_const", const=True, dest="strict_state",
                   help="observation is the bare pattern distribution (no account features)")
    p.add_argument("--no-normalize-returns", action="store_const", const=False,
                   dest="normalize_returns")
    p.add_argument("--log", help="write a per-episode training log CSV here")
    add_config(p)
    p.set_defaults(func=cmd_train_agent)

    for name in ("backtest", "transfer-eval"):
        p = sub.add_parser(name, help=f"run a {name} and write report files")
        p.add_argument("--data", required=True)
        p.add_argument("--classifier-ckpt", required=True, dest="classifier_ckpt")
        p.add_argument("--agent-ckpt", required=True, dest="agent_ckpt")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--fee", type=float)
        p.add_argument("--allow-overlap", action="store_const", const=True,
                       dest="allow_overlap")
        p.add_argument("--sampled", action="store_const", const=True,
                       help="sample actions instead of greedy argmax")
        add_config(p)
        p.set_defaults(func=cmd_backtest, mode=name)

    p = sub.add_parser("report", help="recompute report.csv from equity.csv and trades.csv")
    p.add_argument("--out-dir", required=True)
    add_config(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "mode", None) is not None:
            return args.func(args, mode=args.mode)
        return args.func(args)
    except Exception as exc:  # single machine-readable error line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
