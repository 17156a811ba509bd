"""Command-line entry point: ``gwi train | eval | demo``."""

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import (
    Dataset, cluster_segment, load_csv, make_dataset, make_ood_cluster, split_standardize,
)
from .errors import ConfigError, GwiError, IncompatibleCheckpoint
from .evalcal import evaluate_model, ood_auc, predictive_entropy
from .loss import LossConfig
from .train import TrainConfig, train_classification, train_regression

logger = logging.getLogger("gwi")

DEMOS = {"fig1-a": "sin", "fig1-b": "cubic", "fig1-c": "wave", "fig3-2d": None}
HALF_WIDTH_Z = 1.96


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    """Everything a ``train`` run needs; each field is one ``key = value`` line.

    Empty values select the task default (``epochs``, ``grid_multipliers``,
    ``num_inducing``).
    """

    task: str = "regression"
    data: str = "toy1d:sin"
    target: str = "-1"
    variant: str = "dnn"
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 0
    out: str = "run"
    epochs: int = None
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    grid_multipliers: tuple = None
    num_inducing: tuple = None
    n_s: int = 100
    n_b: int = 1000
    quad_order: int = 32
    eps_lambda: float = 0.0
    label_noise: float = 0.01
    mll_iters: int = 2000
    mll_lr: float = 0.01
    sigma2_init: float = 0.1
    train_noise: bool = False
    hidden_width: int = 10
    hidden_layers: int = 2
    tempering_points: int = 200
    threads: int = 1

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"must be regression or classification, got {self.task!r}", field="task")
        if self.variant not in ("dnn", "svgp"):
            raise ConfigError(f"must be dnn or svgp, got {self.variant!r}", field="variant")
        if self.task == "classification" and self.variant != "dnn":
            raise ConfigError("classification supports only the dnn variant", field="variant")

    def train_config(self):
        try:
            loss = LossConfig(self.n_s, self.n_b, self.quad_order, self.eps_lambda, self.label_noise)
            return TrainConfig(
                epochs=self.epochs, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                eps_adam=self.eps_adam, grid_multipliers=self.grid_multipliers,
                num_inducing=self.num_inducing, seed=self.seed, loss=loss,
                mll_iters=self.mll_iters, mll_lr=self.mll_lr, sigma2_init=self.sigma2_init,
                train_noise=self.train_noise, hidden_width=self.hidden_width,
                hidden_layers=self.hidden_layers, tempering_points=self.tempering_points,
                threads=self.threads,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
_TUPLE_ITEM = {"fractions": float, "grid_multipliers": float, "num_inducing": int}


def _convert(name, raw, default_type):
    if name in _TUPLE_ITEM:
        if raw == "":
            return None
        return tuple(_TUPLE_ITEM[name](p.strip()) for p in raw.split(",") if p.strip())
    if raw == "" and name == "epochs":
        return None
    if default_type is bool:
        if raw.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    if default_type in (int, float):
        return default_type(raw)
    return raw


_TYPES = {
    f.name: (type(f.default) if f.default is not None and f.default is not dataclasses.MISSING else int)
    for f in fields(RunConfig)
}


def parse_config(text):
    """Parse flat ``key = value`` text (``#`` starts a comment). Unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", row=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError("unknown key", field=key, row=lineno)
        if key in values:
            raise ConfigError("duplicate key", field=key, row=lineno)
        try:
            values[key] = _convert(key, raw, _TYPES[key])
        except ValueError as exc:
            raise ConfigError(f"bad value {raw!r} ({exc})", field=key, row=lineno) from None
    return RunConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ------------------------------------------------------------------ outputs


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in v)
    return str(v)


def write_summary(out_dir, summary):
    """``summary.txt`` (one ``key = value`` per line) and the same record as ``summary.json``."""
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        for k, v in summary.items():
            fh.write(f"{k} = {_fmt(v)}\n")
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(summary), fh, indent=1, sort_keys=False)


def read_summary(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_log(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def write_csv(path, columns, rows):
    rows = np.asarray(rows, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


# ------------------------------------------------------------------ data


def load_data(source, task, target="-1", seed=0):
    """CSV path, or a generator name understood by :func:`make_dataset`."""
    if os.path.exists(source):
        tgt = int(target) if str(target).lstrip("-").isdigit() else target
        return load_csv(source, target=tgt, task=task)
    if source == "ood":
        X = make_ood_cluster(seed=seed + 1)
        return Dataset(X, np.zeros(X.shape[0], dtype=int), task=task, name="ood")
    try:
        return make_dataset(source, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"{source!r} is neither a file nor a known generator ({exc})", field="data") from None


def _train_dataset(cfg):
    ds = load_data(cfg.data, cfg.task, cfg.target, cfg.seed)
    if ds.task != cfg.task:
        raise ConfigError(f"dataset {cfg.data!r} is a {ds.task} dataset", field="task")
    return split_standardize(ds, cfg.fractions, cfg.seed)


def _run_training(cfg, ds):
    tcfg = cfg.train_config()
    if cfg.task == "regression":
        return train_regression(ds, cfg.variant, tcfg)
    return train_classification(ds, tcfg)


def _summary_for(cfg, ds, report, command):
    model = report.model
    X, y = ds.part("test")
    metrics = evaluate_model(model, report.calibration, X, y, ds.y_std if ds.task == "regression" else 1.0,
                             cfg.label_noise, cfg.quad_order)
    s = {"version": __version__, "command": command, "status": "ok"}
    for k, v in cfg.echo().items():
        s[f"config.{k}"] = "" if v is None else v
    s.update({
        "data.name": ds.name, "data.n": ds.n, "data.dim": ds.dim,
        "data.y_mean": ds.y_mean, "data.y_std": ds.y_std,
        "data.n_train": int(ds.train_idx.size), "data.n_val": int(ds.val_idx.size),
        "data.n_test": int(ds.test_idx.size),
        "grid": report.grid, "chosen_m": report.chosen_m,
    })
    for M in report.grid:
        s[f"val_nll.M{M}"] = report.validation.get(M, float("nan"))
    s["prior.sf"] = model.prior.sf
    s["prior.alpha"] = model.prior.alpha
    s["sigma2"] = model.sigma2
    if report.calibration.alpha_class is not None:
        s["alpha_class"] = report.calibration.alpha_class
    else:
        s["alpha_t"] = report.calibration.alpha_t
    s["final_total"] = report.history[-1]["total"] if report.history else float("nan")
    for k, v in metrics.as_dict().items():
        s[f"test.{k}"] = v
    if report.failed:
        s["failed_grid_points"] = sorted(report.failed)
    return s


def _checkpoint_meta(cfg, ds, num_classes):
    return {
        "data": cfg.data, "target": cfg.target, "task": cfg.task, "fractions": list(cfg.fractions),
        "seed": cfg.seed, "n": ds.n, "dim": ds.dim, "y_mean": ds.y_mean, "y_std": ds.y_std,
        "num_classes": num_classes, "label_noise": cfg.label_noise, "quad_order": cfg.quad_order,
        "version": __version__,
    }


def _train_and_write(cfg, out_dir, command):
    os.makedirs(out_dir, exist_ok=True)
    ds = _train_dataset(cfg)
    report = _run_training(cfg, ds)
    save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), report.model, report.calibration,
                    _checkpoint_meta(cfg, ds, report.model.num_outputs if cfg.task == "classification" else 0))
    write_log(os.path.join(out_dir, "train_log.ndtxt"), report.history)
    summary = _summary_for(cfg, ds, report, command)
    return ds, report, summary


# ------------------------------------------------------------------ commands


def cmd_train(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = dataclasses.replace(cfg, **overrides)
    try:
        _, _, summary = _train_and_write(cfg, cfg.out, "train")
    except Exception:
        _flag_partial(cfg.out)
        raise
    write_summary(cfg.out, summary)
    _print_summary(summary, ("chosen_m", "test.nll", "test.rmse", "test.coverage", "test.accuracy"))
    return 0


def _flag_partial(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write("status = failed\n")
            fh.write(f"error = {sys.exc_info()[1]}\n")
    except OSError:
        pass


def _print_summary(summary, keys):
    for k in keys:
        if k in summary:
            print(f"{k} = {_fmt(summary[k])}")


def cmd_eval(args):
    model, calibration, meta = load_checkpoint(args.checkpoint)
    ds = load_data(args.data, meta["task"], meta.get("target", "-1"), meta["seed"])
    if ds.dim != model.input_dim:
        raise IncompatibleCheckpoint(f"data has {ds.dim} features, checkpoint expects {model.input_dim}")
    if meta["task"] == "classification" and ds.num_classes > model.num_outputs:
        raise IncompatibleCheckpoint(f"data has {ds.num_classes} classes, checkpoint has {model.num_outputs}")
    if ds.n == meta["n"] and not args.all:
        ds = split_standardize(ds, meta["fractions"], meta["seed"])
        X, y = ds.part("test")
        scope = "test"
    else:
        ds = dataclasses.replace(ds, y_mean=meta["y_mean"], y_std=meta["y_std"])
        X, y = ds.part("all")
        scope = "all"
    y_std = meta["y_std"] if meta["task"] == "regression" else 1.0
    metrics = evaluate_model(model, calibration, X, y, y_std, meta["label_noise"], meta["quad_order"])
    result = {"scope": scope, **{f"test.{k}": v for k, v in metrics.as_dict().items()}}
    if args.ood:
        ood = load_data(args.ood, meta["task"], meta.get("target", "-1"), meta["seed"])
        if ood.dim != model.input_dim:
            raise IncompatibleCheckpoint(f"OOD data has {ood.dim} features, checkpoint expects {model.input_dim}")
        h_id = predictive_entropy(model, calibration, X, meta["label_noise"], meta["quad_order"])
        h_ood = predictive_entropy(model, calibration, ood.X, meta["label_noise"], meta["quad_order"])
        result["ood_auc"] = ood_auc(h_id, h_ood)
    for k, v in result.items():
        print(f"{k} = {_fmt(v)}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.txt"), "w", encoding="utf-8") as fh:
            for k, v in result.items():
                fh.write(f"{k} = {_fmt(v)}\n")
    return 0


def demo_fig1(name, seed, out_dir, epochs=None, svg=False):
    """Toy 1-D run with M = 30; writes the interval trace on a grid wider than the data."""
    kind = DEMOS[name]
    cfg = RunConfig(data=f"toy1d:{kind}", seed=seed, out=out_dir, num_inducing=(30,),
                    train_noise=True, epochs=epochs)
    os.makedirs(out_dir, exist_ok=True)
    ds, report, summary = _train_and_write(cfg, out_dir, f"demo {name}")
    model = report.model
    x = np.linspace(-7.5, 7.5, 401)
    means, r = model.latent(x[:, None])
    mean = ds.destandardize(means[:, 0])
    var = (r[:, 0] + model.sigma2) * ds.y_std ** 2
    half = HALF_WIDTH_Z * np.sqrt(var)
    write_csv(os.path.join(out_dir, f"figure_{name}.csv"), ["x", "m_Q", "lower", "upper", "variance"],
              np.column_stack([x, mean, mean - half, mean + half, var]))
    split = np.zeros(ds.n)
    split[ds.val_idx] = 1
    split[ds.test_idx] = 2
    write_csv(os.path.join(out_dir, f"figure_{name}_points.csv"), ["x", "y", "split"],
              np.column_stack([ds.X[:, 0], ds.y, split]))
    far = model.inducing().max() + 20.0 * model.prior.alpha[0] + np.array([[0.0], [10.0]])
    _, r_far = model.latent(far)
    summary["far_predictive_std"] = float(np.sqrt(r_far[0, 0] + model.sigma2))
    summary["prior_predictive_std"] = float(np.sqrt(model.prior.variance + model.sigma2))
    write_summary(out_dir, summary)
    if svg:
        from .plotting import plot_1d
        plot_1d(os.path.join(out_dir, f"figure_{name}.svg"), x, mean, mean - half, mean + half,
                ds.X[:, 0], ds.y, title=name)
    return summary


def demo_fig3(seed, out_dir, epochs=None, svg=False):
    """Two-cluster 2-D regression; std map plus the trace along the between-cluster line."""
    name = "fig3-2d"
    cfg = RunConfig(data="toy2d", seed=seed, out=out_dir, train_noise=True, epochs=epochs)
    os.makedirs(out_dir, exist_ok=True)
    ds, report, summary = _train_and_write(cfg, out_dir, f"demo {name}")
    model = report.model
    lo = ds.X.min(axis=0) - 1.0
    hi = ds.X.max(axis=0) + 1.0
    g1, g2 = np.meshgrid(np.linspace(lo[0], hi[0], 61), np.linspace(lo[1], hi[1], 61))
    grid = np.column_stack([g1.ravel(), g2.ravel()])
    _, r = model.latent(grid)
    latent_std = np.sqrt(r[:, 0]) * ds.y_std
    pred_std = np.sqrt(r[:, 0] + model.sigma2) * ds.y_std
    write_csv(os.path.join(out_dir, f"figure_{name}_grid.csv"), ["x1", "x2", "latent_std", "predictive_std"],
              np.column_stack([grid, latent_std, pred_std]))
    lam = np.linspace(-2.0, 2.0, 201)
    seg = cluster_segment(ds, lam)
    m_seg, r_seg = model.latent(seg)
    mean = ds.destandardize(m_seg[:, 0])
    sd = np.sqrt(r_seg[:, 0]) * ds.y_std
    write_csv(os.path.join(out_dir, f"figure_{name}_segment.csv"),
              ["lambda", "x1", "x2", "m_Q", "lower", "upper", "latent_std"],
              np.column_stack([lam, seg, mean, mean - 2 * sd, mean + 2 * sd, sd]))
    X_train, _ = ds.part("train")
    _, r_tr = model.latent(X_train)
    _, r_mid = model.latent(cluster_segment(ds, 0.0))
    mid = float(np.sqrt(r_mid[0, 0] + model.sigma2))
    train_mean = float(np.mean(np.sqrt(r_tr[:, 0] + model.sigma2)))
    summary["midpoint_predictive_std"] = mid * ds.y_std
    summary["train_mean_predictive_std"] = train_mean * ds.y_std
    summary["midpoint_std_ratio"] = mid / train_mean
    write_summary(out_dir, summary)
    if svg:
        from .plotting import plot_2d
        plot_2d(os.path.join(out_dir, f"figure_{name}.svg"), g1, g2, latent_std.reshape(g1.shape),
                ds.X, seg, lam, mean, sd)
    return summary


def cmd_demo(args):
    out = args.out or f"demo-{args.name}"
    seed = 0 if args.seed is None else args.seed
    start = time.perf_counter()
    if args.name == "fig3-2d":
        summary = demo_fig3(seed, out, args.epochs, args.svg)
        keys = ("chosen_m", "midpoint_std_ratio", "test.nll")
    else:
        summary = demo_fig1(args.name, seed, out, args.epochs, args.svg)
        keys = ("test.nll", "test.coverage", "far_predictive_std", "prior_predictive_std")
    _print_summary(summary, keys)
    logger.info("demo finished in %.1f s", time.perf_counter() - start)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gwi", description="Gaussian Wasserstein inference toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads for the inducing-point grid")

    t = sub.add_parser("train", help="train from a key = value config file")
    t.add_argument("config")
    t.add_argument("--epochs", type=int, help="override the epoch count")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("data", help="CSV path or generator name")
    e.add_argument("--ood", help="second dataset scored as out-of-distribution")
    e.add_argument("--all", action="store_true", help="evaluate every row instead of the stored test split")
    common(e)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("demo", help="run an illustrative experiment and write figure data")
    d.add_argument("name", choices=sorted(DEMOS))
    d.add_argument("--epochs", type=int, help="override the epoch count")
    d.add_argument("--svg", action="store_true", help="also render figure_*.svg")
    common(d)
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GwiError, OSError, ValueError) as exc:
        print(f"gwi {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
