"""Command-line front end.

Subcommands: ``generate`` (datasets), ``filter`` (single run), ``train``,
``eval`` (trained checkpoint), ``bench`` (full grid), ``gradcheck``.
Configuration files are UTF-8 ``key = value`` text; ``#`` starts a comment.
Exit codes: 0 success, 2 config error, 3 numeric failure in all cells.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    ExperimentConfig,
    config_hash,
    report_to_table,
    run_experiment,
)
from .datagen import (
    NoiseSpec,
    format_mse_db,
    generate_lorenz_dataset,
    load_nclt,
    mse_db,
    read_dataset,
    write_dataset,
)
from .errors import InvalidArgumentError, NumericError
from .filters import dump_trajectory_csv, initial_state, run_filter
from .ssmodel import LorenzParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def parse_config_text(text):
    """Parse ``key = value`` lines; values are JSON fragments when possible."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        value = value.strip()
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


def _noise_from(kv):
    keys = ("r2_db", "r2_range_db", "q2_db", "snr_db")
    given = {k: kv[k] for k in keys if k in kv}
    if "r2_range_db" in given:
        given["r2_range_db"] = tuple(given["r2_range_db"])
    if not given:
        return NoiseSpec(r2_db=-10.0, snr_db=-20.0)
    return NoiseSpec(**given)


def _lorenz_from(kv):
    return LorenzParams(
        dt=float(kv.get("dt", 0.02)),
        taylor_order=int(kv.get("taylor_order", 5)),
    )


def experiment_config_from(kv, seed=None):
    cfg = ExperimentConfig(
        model=kv.get("model", "lorenz"),
        variants=tuple(_as_list(kv.get("variants", ["bkf"]))),
        adc_counts=tuple(int(a) for a in _as_list(kv.get("adc_counts", [1]))),
        noise=_noise_from(kv),
        mismatch=kv.get("mismatch", "none"),
        seeds=tuple(int(s) for s in _as_list(kv.get("seeds", [0]))),
        lorenz=_lorenz_from(kv),
        test_count=int(kv.get("test_count", 20)),
        test_length=int(kv.get("test_length", 2000)),
        train_count=int(kv.get("train_count", 100)),
        train_length=int(kv.get("train_length", 100)),
        train_epochs=int(kv.get("train_epochs", 40)),
        timing_repeats=int(kv.get("timing_repeats", 5)),
        dataset_dir=kv.get("dataset_dir"),
    )
    if seed is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seeds": (seed,)})
    return cfg


def _as_list(v):
    if isinstance(v, (list, tuple)):
        return v
    return [p.strip() for p in str(v).split(",") if p.strip()]


def _load_kv(args):
    if args.config:
        return parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    return {}


def cmd_generate(args):
    kv = _load_kv(args)
    seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
    ds = generate_lorenz_dataset(
        count=int(kv.get("count", 20)),
        length=int(kv.get("length", 2000)),
        noise=_noise_from(kv),
        lorenz=_lorenz_from(kv),
        adc_per_feature=int(kv.get("adc_per_feature", 1)),
        master_seed=seed,
    )
    out = Path(args.out or "dataset")
    write_dataset(ds, out)
    print(f"wrote {len(ds)} sequences to {out}")
    return EXIT_OK


def _dataset_and_model(kv, seed):
    from .bench import filter_model_for

    cfg = experiment_config_from(kv, seed=seed)
    adc = cfg.adc_counts[0]
    if "dataset" in kv:
        src = kv["dataset"]
        if str(src).endswith(".csv"):
            ds = load_nclt(src, dt=float(kv.get("nclt_dt", 1.0)),
                           seq_len=int(kv.get("seq_len", 50)))
        else:
            ds = read_dataset(src)
    else:
        ds = generate_lorenz_dataset(
            cfg.test_count, cfg.test_length, cfg.noise, cfg.lorenz,
            adc_per_feature=adc, master_seed=seed,
        )
    q2 = ds.meta.get("q2", cfg.noise.q2)
    r_vars = np.asarray(
        ds.meta.get("noise_variances",
                    cfg.noise.measurement_variances(
                        adc * 2, np.random.default_rng(seed))),
        dtype=float,
    )
    model, base = filter_model_for(cfg, q2, r_vars, adc)
    return cfg, adc, ds, model, base


def cmd_filter(args):
    kv = _load_kv(args)
    seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
    variant = kv.get("variant", "bkf")
    cfg, adc, ds, model, base = _dataset_and_model(kv, seed)
    out = Path(args.out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    ests, trus = [], []
    for i, pair in enumerate(ds):
        init = initial_state(pair.X[0], seed=(seed, i))
        try:
            run = run_filter(model, pair.Y[1:], variant, init,
                             adc_per_feature=adc)
        except NumericError as exc:
            print(f"sequence {i}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        dump_trajectory_csv(out / f"run_{i:03d}.csv", pair.X[1:], run)
        ests.append(run.xhat)
        trus.append(pair.X[1:])
    print(f"{variant}: MSE {format_mse_db(mse_db(ests, trus))}")
    return EXIT_OK


def cmd_train(args):
    from .bknet import GainNetwork, TrainConfig, save_checkpoint, save_loss_curve, train

    kv = _load_kv(args)
    seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
    cfg, adc, _, model, base = _dataset_and_model(kv, seed)
    train_set = generate_lorenz_dataset(
        cfg.train_count, cfg.train_length, cfg.noise, cfg.lorenz,
        adc_per_feature=adc, master_seed=seed + 1,
    )
    net = GainNetwork(state_dim=model.state_dim,
                      reduced_dim=model.meas_dim // adc,
                      full_dim=model.meas_dim)
    net.init_params(seed)
    tc = TrainConfig(
        epochs=cfg.train_epochs, seed=seed,
        learning_rate=float(kv.get("learning_rate", 1e-3)),
        batch_size=int(kv.get("batch_size", 8)),
        l2=float(kv.get("l2", 1e-4)),
    )
    history = train(net, list(train_set), model, adc, tc, verbose=True)
    out = Path(args.out or "bknet_out")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net.params, out / "bknet.ckpt")
    save_loss_curve(history, out / "loss_curve.csv")
    print(f"saved checkpoint and loss curve to {out}")
    return EXIT_OK


def cmd_eval(args):
    from .bknet import GainNetwork, evaluate_bknet, load_checkpoint

    kv = _load_kv(args)
    seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
    cfg, adc, ds, model, base = _dataset_and_model(kv, seed)
    params = load_checkpoint(kv["checkpoint"])
    net = GainNetwork(state_dim=model.state_dim,
                      reduced_dim=model.meas_dim // adc,
                      full_dim=model.meas_dim)
    net.params = params
    val = evaluate_bknet(net, model, list(ds), adc, init_seed=seed)
    print(f"bknet: MSE {format_mse_db(val)}")
    return EXIT_OK


def cmd_bench(args):
    kv = _load_kv(args)
    cfg = experiment_config_from(kv, seed=args.seed)
    report = run_experiment(cfg, threads=args.threads)
    out = Path(args.out or "bench_out")
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    manifest = {
        "config_hash": config_hash(cfg),
        "seeds": list(cfg.seeds),
        "threads": args.threads,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    table = kv.get("table")
    if table:
        (out / f"table_{table}.csv").write_text(report_to_table(report, table))
    failures = [r for r in report.rows if r["status"] != "ok"]
    print(f"wrote report with {len(report.rows)} cells to {out} "
          f"({len(failures)} failed)")
    if report.rows and len(failures) == len(report.rows):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_gradcheck(args):
    from .bknet import grad_check

    err = grad_check(seed=args.seed or 0)
    print(f"max relative gradient error: {err:.3e}")
    return EXIT_OK if err < 1e-4 else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bussgangkf",
        description="1-bit state estimation benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("generate", cmd_generate),
        ("filter", cmd_filter),
        ("train", cmd_train),
        ("eval", cmd_eval),
        ("bench", cmd_bench),
        ("gradcheck", cmd_gradcheck),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="UTF-8 key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--format", choices=["csv"], default="csv")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidArgumentError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
