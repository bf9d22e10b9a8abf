"""Command-line interface: ``twocats <subcommand> [flags]``.

Every failure ends with a single line on stderr of the form
``error kind=<kind> message=<json string>`` and a nonzero exit status.
"""

import argparse
import dataclasses
import json
import sys
import typing


from . import io
from .copulas import ReferenceCopula, SyntheticSpec, make_synthetic
from .diff import NumericError
from .empirical import DegenerateDataError, as_raw, pseudo_obs
from .evaluation import ablation_run, nll, p3_report, validate_derivs
from .model import HEADS, TwoCatsModel
from .rng import DEFAULT_SEED
from .sampling import RootFindError, SamplerConfig, empirical_quantile, sample_pairs
from .training import LossWeights, TrainConfig, train

EXIT_CODES = {"usage": 2, "parse": 3, "contract": 4, "numeric": 5, "io": 6}


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text):
    return None if str(text).strip().lower() in ("", "none", "full") else int(text)


def _converter(tp):
    if tp is bool:
        return _bool
    if typing.get_origin(tp) is typing.Union:
        return _optional_int
    return tp


_TRAIN_FIELDS = {f.name: _converter(f.type) for f in dataclasses.fields(TrainConfig)}
_WEIGHT_FIELDS = {f.name: float for f in dataclasses.fields(LossWeights)}


def _add_training_flags(p):
    g = p.add_argument_group("training")
    for name, conv in _TRAIN_FIELDS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=conv, default=None)
    for name in _WEIGHT_FIELDS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=None)
    g.add_argument("--head", choices=HEADS, default=None)
    g.add_argument("--config", help="flat key=value file; explicit flags take precedence")


def _training_setup(args):
    values = {}
    if args.config:
        try:
            raw = io.read_config(args.config)
        except io.ConfigFormatError as exc:
            raise CliError("parse", str(exc)) from None
        for key, text in raw.items():
            conv = _TRAIN_FIELDS.get(key) or _WEIGHT_FIELDS.get(key) or (str if key == "head" else None)
            if conv is None:
                raise CliError("parse", f"unknown config key {key!r}")
            try:
                values[key] = conv(text)
            except ValueError as exc:
                raise CliError("parse", f"config key {key!r}: {exc}") from None
    for key in list(_TRAIN_FIELDS) + list(_WEIGHT_FIELDS) + ["head"]:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    head = values.pop("head", "logistic")
    if head not in HEADS:
        raise CliError("parse", f"unknown head {head!r}")
    try:
        cfg = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_FIELDS})
        weights = LossWeights(**{k: v for k, v in values.items() if k in _WEIGHT_FIELDS})
    except ValueError as exc:
        raise CliError("contract", str(exc)) from None
    return cfg, weights, head


def _read_data(path):
    try:
        return as_raw(io.read_csv(path))
    except io.CsvFormatError as exc:
        raise CliError("parse", str(exc)) from None
    except ValueError as exc:
        raise CliError("contract", f"{path}: {exc}") from None


def _load_model(path):
    try:
        return TwoCatsModel.load(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError("parse", f"{path}: invalid model file ({exc})") from None


def _print_kv(d):
    print(" ".join(f"{k}={io._fmt(v)}" for k, v in d.items()))


# ----------------------------------------------------------------------

def cmd_gen_synth(args):
    spec = SyntheticSpec(ReferenceCopula(args.family, args.param), args.n_train, args.n_test,
                         args.marginal, args.seed)
    train_raw, test_raw = make_synthetic(spec)
    io.write_csv(args.out_train, train_raw)
    io.write_csv(args.out_test, test_raw)
    _print_kv({"train_rows": train_raw.shape[0], "test_rows": test_raw.shape[0]})


def cmd_fit(args):
    cfg, weights, head = _training_setup(args)
    data = _read_data(args.data)
    model, trace = train(data, cfg, weights, head)
    model.save(args.model)
    if args.trace:
        trace.write_csv(args.trace)
    _print_kv({"epochs": len(trace.rows), "best_epoch": trace.best_epoch})
    for w in trace.warnings:
        print(f"warning: {w}", file=sys.stderr)


def cmd_eval(args):
    model = _load_model(args.model)
    train_raw = _read_data(args.train)
    test_raw = _read_data(args.test)
    report = nll(model, train_raw, test_raw, args.resamples, args.level, args.seed)
    if args.out:
        io.write_csv(args.out, report.per_point, header=("nll",))
    _print_kv(report.as_dict())


def cmd_sample(args):
    model = _load_model(args.model)
    quantiles = None
    if args.marginals:
        data = _read_data(args.marginals)
        quantiles = (empirical_quantile(data[:, 0]), empirical_quantile(data[:, 1]))
    cfg = SamplerConfig(args.seed, args.tol, args.max_iter, args.retries)
    result = sample_pairs(model, args.n, cfg, quantiles)
    if result.x is not None:
        io.write_csv(args.out, result.x)
    else:
        io.write_csv(args.out, result.uv, header=("u", "v"))
    _print_kv({"rows": args.n, "retries": result.retries})


def cmd_p3_report(args):
    model = _load_model(args.model)
    data = _read_data(args.data)
    rep = p3_report(model, pseudo_obs(data))
    if args.out:
        io.write_table(args.out, ("metric", "value"), rep.as_dict().items())
    _print_kv(rep.as_dict())


def cmd_ablate(args):
    cfg, weights, head = _training_setup(args)
    data = _read_data(args.data)
    rows = ablation_run(data, cfg, weights, head)
    header = ("name", "w_C", "w_dC", "w_c", "loss_C", "loss_dC", "loss_c")
    io.write_table(args.out, header, [[r[h] for h in header] for r in rows])
    for r in rows:
        _print_kv(r)


def cmd_validate_derivs(args):
    rows = validate_derivs(args.n, args.seed)
    header = ("family", "param", "r2_u", "r2_v")
    if args.out:
        io.write_table(args.out, header, [[r[h] for h in header] for r in rows])
    for r in rows:
        _print_kv(r)


def build_parser():
    parser = _Parser(prog="twocats", description="Neural copula fitting and evaluation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="sample a synthetic train/test pair")
    p.add_argument("--family", required=True, choices=("gaussian", "clayton", "frank"))
    p.add_argument("--param", required=True, type=float)
    p.add_argument("--n-train", type=int, default=1500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--marginal", choices=("normal", "uniform"), default="normal")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-train", default="train.csv")
    p.add_argument("--out-test", default="test.csv")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("fit", help="train a model on a two-column CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--trace", help="output training trace CSV")
    _add_training_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="test-set NLL with KDE marginals")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", help="per-point NLL CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw pairs from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--retries", type=int, default=10)
    p.add_argument("--marginals", help="CSV whose empirical quantiles map samples to the data scale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("p3-report", help="marginal deviation metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_p3_report)

    p = sub.add_parser("ablate", help="train the four loss subsets")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_training_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("validate-derivs", help="R^2 of the empirical derivative estimator")
    p.add_argument("--n", type=int, default=1500)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate_derivs)
    return parser


def _fail(kind, message):
    print(f"error kind={kind} message={json.dumps(str(message))}", file=sys.stderr)
    return EXIT_CODES.get(kind, 1)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, exc)
    except (NumericError, RootFindError) as exc:
        return _fail("numeric", exc)
    except (DegenerateDataError, ValueError) as exc:
        return _fail("contract", exc)
    except OSError as exc:
        return _fail("io", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
