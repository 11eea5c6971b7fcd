"""``abstract-goal`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (including a failed ``check`` suite).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import numpy as np

from . import checks
from .anticipator import late_fusion
from .data import default_spec, generate, load_features, load_spec, save_features, split
from .errors import AbstractGoalError, ConfigError
from .harness import (
    EVAL_STRATEGIES, TrainConfig, ablate_losses, compute_metrics, goal_similarity_report, score_samples,
    seed_stability, seed_stability_rows, sweep_horizon, sweep_qk, train, write_csv,
)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .objective import LOSS_NAMES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DATA_ERRORS = (OSError, ValueError, KeyError, IndexError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _losses(text):
    names = [x.strip().lower() for x in text.split(",") if x.strip()]
    bad = [n for n in names if n not in LOSS_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown loss names {bad}; choose from {','.join(LOSS_NAMES)}")
    return {k: k in names for k in LOSS_NAMES}


# -- config resolution -------------------------------------------------------

MODEL_FLAGS = ("d_h", "d_z", "mlp_hidden", "d_c")
TRAIN_FLAGS = ("epochs", "batch_size", "learning_rate", "weight_decay", "seed", "Q", "K", "mode")


def _read_config(path):
    if path is None:
        return {}, {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    model = dict(doc.get("model", {}))
    train_cfg = dict(doc.get("train", {}))
    for k, v in doc.items():
        if k in MODEL_FLAGS:
            model[k] = v
        elif k in TRAIN_FLAGS or k in ("loss_flags", "betas", "eps"):
            train_cfg[k] = v
    return model, train_cfg


def resolve(args, samples):
    """Defaults < config file < flags.  ``d_f`` and ``T`` always come from the data."""
    file_model, file_train = _read_config(getattr(args, "config", None))
    model = dict(file_model)
    tr = dict(file_train)
    for k in MODEL_FLAGS:
        if getattr(args, k, None) is not None:
            model[k] = getattr(args, k)
    for k in TRAIN_FLAGS:
        if getattr(args, k, None) is not None:
            tr[k] = getattr(args, k)
    if getattr(args, "losses", None) is not None:
        tr["loss_flags"] = args.losses
    if not samples:
        raise ConfigError("dataset is empty")
    model["d_f"] = int(samples[0].features.shape[1])
    model["T"] = int(samples[0].features.shape[0])
    model.setdefault("d_c", int(max(s.label for s in samples)) + 1)
    train_config = TrainConfig.from_dict(tr)
    model["Q"], model["K"] = train_config.Q, train_config.K
    unknown = set(model) - set(ModelConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown model settings {sorted(unknown)}")
    return ModelConfig(**model), train_config


def _announce(stream, command, **resolved):
    """Print the resolved configuration as ``#`` lines before any work starts."""
    stream.write(f"# command {json.dumps(command)}\n")
    for k, v in resolved.items():
        stream.write(f"# {k} {json.dumps(v, sort_keys=True)}\n")


def _split(samples, args):
    return split(samples, tuple(args.split), args.split_seed)


def _check_compatible(params, samples):
    cfg = params.config
    d_f = samples[0].features.shape[1]
    if d_f != cfg.d_f:
        raise ValueError(f"dataset has d_f={d_f} but the checkpoint expects d_f={cfg.d_f}")
    top = max(s.label for s in samples)
    if top >= cfg.d_c:
        raise ValueError(f"dataset label {top} is out of range for a checkpoint with d_c={cfg.d_c}")


# -- commands ----------------------------------------------------------------

def cmd_generate(args, out):
    spec = load_spec(args.spec) if args.spec else default_spec()
    if args.gap is not None:
        spec = spec.with_gap(args.gap)
    _announce(out, "generate", spec={k: v for k, v in spec.to_dict().items() if not isinstance(v, list)},
              n=args.n, seed=args.seed, out=args.out)
    samples = generate(spec, args.n, args.seed)
    save_features(samples, args.out)
    out.write(f"wrote {len(samples)} videos to {args.out}\n")


def cmd_train(args, out):
    samples = load_features(args.data)
    model_cfg, train_cfg = resolve(args, samples)
    _announce(out, "train", model=model_cfg.to_dict(), train=train_cfg.to_dict(),
              data=args.data, out=args.out, log=args.log)
    start = time.perf_counter()
    params, history = train(samples, model_cfg, train_cfg, log_path=args.log)
    save_checkpoint(params, args.out, rng_seed=train_cfg.seed)
    out.write(f"# elapsed_seconds {time.perf_counter() - start:.1f}\n")
    last = history[-1] if history else {}
    out.write("final epoch " + json.dumps({k: round(v, 6) for k, v in last.items()}) + "\n")


def _write_scores(path, samples, probs):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["id", "label"] + [f"p{c}" for c in range(probs.shape[1])])
        for s, row in zip(samples, probs):
            w.writerow([s.id, s.label] + [f"{v:.17g}" for v in row])


def cmd_eval(args, out):
    params, _ = load_checkpoint(args.model)
    samples = load_features(args.data)
    if not samples:
        raise ValueError(f"{args.data}: dataset is empty")
    _check_compatible(params, samples)
    _announce(out, "eval", model=args.model, data=args.data, strategy=args.strategy,
              Q=args.Q, K=args.K, seed=args.seed, checkpoint_config=params.config.to_dict())
    probs = score_samples(params, samples, args.strategy, args.Q, args.K, args.seed)
    rep = compute_metrics(probs, [s.label for s in samples], params.config.d_c)
    row = {"strategy": args.strategy, "Q": args.Q, "K": args.K, "seed": args.seed, **rep.row()}
    if args.out:
        write_csv([row], args.out)
    if args.scores_out:
        _write_scores(args.scores_out, samples, probs)
    out.write(json.dumps(row) + "\n")


def _load_model_or_train(args, ds, model_cfg, train_cfg, out):
    if args.model:
        params, _ = load_checkpoint(args.model)
        _check_compatible(params, ds.train + ds.val + ds.test)
        return params
    out.write("# training a model for the sweep\n")
    params, _ = train(ds.train, model_cfg, train_cfg)
    return params


def cmd_ablate(args, out):
    which = args.which
    if which == "horizon":
        spec = load_spec(args.spec) if args.spec else default_spec()
        probe = generate(spec, 2, 0)
        model_cfg, train_cfg = resolve(args, probe)
        _announce(out, "ablate horizon", model=model_cfg.to_dict(), train=train_cfg.to_dict(),
                  gaps=args.gaps, n=args.n, data_seed=args.data_seed)
        rows = sweep_horizon(spec, args.gaps, model_cfg, train_cfg, n_videos=args.n, data_seed=args.data_seed,
                             fractions=tuple(args.split), strategy=args.strategy)
    else:
        if not args.data:
            raise ConfigError(f"ablate {which} needs --data")
        samples = load_features(args.data)
        model_cfg, train_cfg = resolve(args, samples)
        ds = _split(samples, args)
        _announce(out, f"ablate {which}", model=model_cfg.to_dict(), train=train_cfg.to_dict(),
                  data=args.data, split=args.split, split_seed=args.split_seed, model_path=args.model)
        if which == "losses":
            rows = ablate_losses(ds, model_cfg, train_cfg, strategy=args.strategy)
        elif which == "qk":
            params = None if args.retrain else _load_model_or_train(args, ds, model_cfg, train_cfg, out)
            rows = sweep_qk(ds, model_cfg, train_cfg, args.Q_list, args.K_list, params=params,
                            retrain=args.retrain, strategy=args.strategy)
        elif which == "seeds":
            params = _load_model_or_train(args, ds, model_cfg, train_cfg, out)
            summary = seed_stability(ds.test, params, n_runs=args.runs, strategy=args.strategy,
                                     Q=train_cfg.Q, K=train_cfg.K)
            rows = seed_stability_rows(summary)
        else:  # goalsim
            params = _load_model_or_train(args, ds, model_cfg, train_cfg, out)
            rows = [goal_similarity_report(params, ds.test, args.pairs, train_cfg.seed)]
    write_csv(rows, args.out)
    for r in rows:
        out.write(json.dumps(r) + "\n")


def _read_scores(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "label"]:
        raise ValueError(f"{path}: expected a score file with header id,label,p0,...")
    header = rows[0]
    ids, labels, probs = [], [], []
    for n, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}: line {n} has {len(r)} fields, expected {len(header)}")
        ids.append(r[0])
        labels.append(r[1])
        probs.append([float(v) for v in r[2:]])
    return header, ids, labels, np.array(probs, dtype=np.float64).reshape(len(ids), len(header) - 2)


def cmd_fuse(args, out):
    paths = [p for p in args.scores.split(",") if p]
    weights = args.weights if args.weights is not None else [1.0] * len(paths)
    _announce(out, "fuse", scores=paths, weights=weights, out=args.out)
    if len(weights) != len(paths):
        raise ConfigError(f"{len(paths)} score files but {len(weights)} weights")
    loaded = [_read_scores(p) for p in paths]
    header, ids, labels, _ = loaded[0]
    for p, (h, i, _, _) in zip(paths[1:], loaded[1:]):
        if h != header or i != ids:
            raise ValueError(f"{p}: ids or classes differ from {paths[0]}")
    fused = np.array([late_fusion([l[3][n] for l in loaded], weights) for n in range(len(ids))])
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for i, lab, row in zip(ids, labels, fused):
            w.writerow([i, lab] + [f"{v:.17g}" for v in row])
    if fused.size and all(lab.lstrip("-").isdigit() for lab in labels):
        rep = compute_metrics(fused, np.array([int(lab) for lab in labels]))
        out.write(json.dumps(rep.row()) + "\n")


def cmd_check(args, out):
    names = list(checks.SUITES) if args.suite == "all" else [args.suite]
    _announce(out, "check", suites=names, seed=args.seed)
    ok = True
    for name in names:
        for res in checks.SUITES[name](seed=args.seed):
            ok &= bool(res.passed)
            out.write(f"{'PASS' if res.passed else 'FAIL'} {name}: {res.name} ({res.detail})\n")
    if not ok:
        raise ArithmeticError("one or more oracle checks failed")


# -- parser ------------------------------------------------------------------

def _add_model_train_flags(p):
    p.add_argument("--config", help="JSON config; flags override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--Q", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--mode", choices=("goal", "vrnn"))
    p.add_argument("--losses", type=_losses, help="comma list from og,ng,gc,na")
    p.add_argument("--d-h", dest="d_h", type=int)
    p.add_argument("--d-z", dest="d_z", type=int)
    p.add_argument("--mlp-hidden", dest="mlp_hidden", type=int)
    p.add_argument("--d-c", dest="d_c", type=int, help="class count (default: max label + 1)")


def build_parser():
    parser = _Parser(prog="abstract-goal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic JSON-lines dataset")
    g.add_argument("--spec", help="synthetic spec JSON (default: built-in desk-scale spec)")
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--gap", type=int, help="override the synthetic generator's anticipation gap in steps")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    _add_model_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--strategy", choices=EVAL_STRATEGIES, default="gc_argmin")
    e.add_argument("--Q", type=int, default=3)
    e.add_argument("--K", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="metrics CSV")
    e.add_argument("--scores-out", dest="scores_out", help="per-video class probabilities CSV (input to fuse)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="ablation and sweep tables")
    a.add_argument("which", choices=("losses", "qk", "horizon", "seeds", "goalsim"))
    a.add_argument("--data", help="dataset to split into train/val/test")
    a.add_argument("--model", help="trained checkpoint (qk, seeds, goalsim); trains one when omitted")
    a.add_argument("--out", required=True)
    a.add_argument("--split", type=_floats, default=[0.7, 0.1, 0.2])
    a.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    a.add_argument("--strategy", choices=EVAL_STRATEGIES, default="gc_argmin")
    a.add_argument("--Q-list", dest="Q_list", type=_ints)
    a.add_argument("--K-list", dest="K_list", type=_ints)
    a.add_argument("--retrain", action="store_true", help="qk: train one model per cell")
    a.add_argument("--runs", type=int, default=10)
    a.add_argument("--pairs", type=int, default=500)
    a.add_argument("--spec", help="horizon: synthetic spec JSON")
    a.add_argument("--gaps", type=_ints, default=[1, 2, 3, 4])
    a.add_argument("--n", type=int, default=3000)
    a.add_argument("--data-seed", dest="data_seed", type=int, default=0)
    _add_model_train_flags(a)
    a.set_defaults(func=cmd_ablate)

    f = sub.add_parser("fuse", help="late fusion of per-video score files")
    f.add_argument("--scores", required=True, help="comma-separated score CSVs")
    f.add_argument("--weights", type=_floats)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    c = sub.add_parser("check", help="run an oracle suite")
    c.add_argument("suite", choices=tuple(checks.SUITES) + ("all",))
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)
    return parser


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        args.func(args, out)
    except ConfigError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except ArithmeticError as exc:
        err.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (AbstractGoalError, *DATA_ERRORS) as exc:
        err.write(f"data error: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
