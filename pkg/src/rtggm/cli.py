"""Command-line entry point: ``rtggm <command> [flags]``.

Metrics and reports go to standard output as tab-separated lines preceded by
``#`` header lines echoing every resolved flag.  Artifacts are only written
to paths named by flags.  Exit codes: 0 success, 1 runtime error, 2 usage.
"""

import argparse
import sys

import numpy as np
from scipy.special import expit

from . import ais as ais_mod
from .data_io import (
    binarize,
    load_bow,
    load_csv,
    load_idx,
    load_model,
    save_model,
)
from .gibbs import generate_deep
from .impute import fill, impute
from .model import MAX_BINARY_UNITS, MAX_SEQUENCES, DeepModel, Kind, exact_log_partition
from .train import TrainConfig, export_relu_init, fit, train_deep
from .truncnorm import TruncNormParams, trunc_mean

VARIANTS = {
    "basic": Kind.TRUNCATED_REAL,
    "real": Kind.REAL,
    "binary": Kind.BINARY,
    "count": Kind.COUNT,
    "rggm": Kind.RGGM_BINARY,
}


class UsageError(Exception):
    pass


def _fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _header(args, out):
    out.write(f"# rtggm {args.command}\n")
    for key in sorted(vars(args)):
        if key in ("command", "func"):
            continue
        out.write(f"# {key}={_fmt(getattr(args, key))}\n")


def _load_data(path, fmt, kind, vocab=None, threshold=0.5):
    if fmt == "bow" or kind is Kind.COUNT:
        if fmt != "bow" or kind is not Kind.COUNT:
            raise UsageError("count models need --format bow, and bow data needs a count model")
        if not vocab:
            raise UsageError("--vocab is required for bow data")
        return load_bow(path, vocab)
    batch = load_idx(path) if fmt == "idx" else load_csv(path)
    if kind.binary_visible:
        batch = binarize(batch, threshold)
    return batch


def _train_config(args):
    return TrainConfig(
        cd_k=args.k,
        learning_rate=args.lr,
        rmsprop_decay=args.rmsprop_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        fix_d=args.fix_d,
    )


def _metrics_writer(args, out, prefix=""):
    def write(row):
        wall = "NA" if args.deterministic else f"{row.wall_seconds:.3f}"
        out.write(f"{prefix}{row.epoch}\t{row.recon_error!r}\t{_fmt(row.exact_loglik)}\t{wall}\n")
        out.flush()
    return write


def cmd_train(args, out):
    kind = VARIANTS[args.variant]
    data = _load_data(args.data, args.format, kind, args.vocab, args.threshold)
    test = _load_data(args.test, args.format, kind, args.vocab, args.threshold) if args.test else None
    if len(data) == 0:
        raise ValueError(f"{args.data}: no training examples")
    cfg = _train_config(args)
    out.write("epoch\trecon_error\texact_loglik\twall_seconds\n")
    model, _ = fit(data, args.hidden, kind, cfg, test=test, callback=_metrics_writer(args, out))
    save_model(args.out, model)


def _parse_widths(text):
    try:
        widths = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise UsageError(f"--widths must be a comma-separated list of integers, got {text!r}") from None
    if not widths or min(widths) < 1:
        raise UsageError("--widths needs at least one positive width")
    return widths


def cmd_train_deep(args, out):
    kind = VARIANTS[args.variant]
    widths = _parse_widths(args.widths)
    data = _load_data(args.data, args.format, kind, args.vocab, args.threshold)
    if len(data) == 0:
        raise ValueError(f"{args.data}: no training examples")
    cfg = _train_config(args)
    out.write("layer\tepoch\trecon_error\texact_loglik\twall_seconds\n")
    writers = {}

    def callback(layer, row):
        if layer not in writers:
            writers[layer] = _metrics_writer(args, out, prefix=f"{layer}\t")
        writers[layer](row)

    deep, _ = train_deep(widths, data, cfg, kind, callback=callback)
    save_model(args.out, deep)


def _single(model, what):
    if isinstance(model, DeepModel):
        if len(model.layers) != 1:
            raise UsageError(f"{what} needs a single two-layer model, got a {len(model.layers)}-layer stack")
        return model.layers[0]
    return model


def cmd_eval(args, out):
    model = _single(load_model(args.model), "eval")
    if model.kind not in ais_mod.AIS_KINDS:
        raise UsageError(f"evaluation supports binary, count and rggm models, not {model.kind.name}")
    report = args.report or ("perplexity" if model.kind is Kind.COUNT else "logprob")
    if (report == "perplexity") != (model.kind is Kind.COUNT):
        raise UsageError(f"--report {report} does not apply to a {model.kind.name} model")
    fmt = args.format or ("bow" if model.kind is Kind.COUNT else "idx")
    test = _load_data(args.test, fmt, model.kind, model.vocab_size, args.threshold)
    X = test.to_array()
    if model.kind is Kind.COUNT:
        X = X[test.lengths > 0]
    if X.shape[0] == 0:
        raise ValueError(f"{args.test}: no test examples")

    if args.exact:
        if model.kind is Kind.COUNT:
            too_long = [int(K) for K in np.unique(X.sum(axis=1)) if model.n ** int(K) > MAX_SEQUENCES]
            if too_long:
                raise UsageError(f"--exact needs N^K <= {MAX_SEQUENCES}; lengths {too_long} exceed it")
        elif model.n > MAX_BINARY_UNITS:
            raise UsageError(f"--exact needs n <= {MAX_BINARY_UNITS} visible units, model has {model.n}")

    if model.kind is Kind.COUNT:
        lengths = sorted({int(K) for K in X.sum(axis=1)})
        if args.exact:
            per_length = {K: (exact_log_partition(model, K), 0.0) for K in lengths}
        else:
            base = _base_rate(args, model, test)
            results = ais_mod.ais_per_length(model, base, _ais_config(args), lengths)
            per_length = {K: (r.log_z, r.log_z_stderr) for K, r in results.items()}
        for K in lengths:
            out.write(f"# length={K}\tlog_z={per_length[K][0]!r}\tstderr={per_length[K][1]!r}\n")
        doc_K = X.sum(axis=1).astype(int)
        log_z = float(np.mean([per_length[K][0] for K in doc_K]))
        stderr = float(np.sqrt(np.mean([per_length[K][1] ** 2 for K in doc_K])))
        metric = ais_mod.perplexity(model, {K: v[0] for K, v in per_length.items()}, X)
    else:
        if args.exact:
            log_z, stderr = exact_log_partition(model), 0.0
        else:
            base = _base_rate(args, model, test)
            result = ais_mod.ais_run(model, base, _ais_config(args))
            log_z, stderr = result.log_z, result.log_z_stderr
        metric = ais_mod.test_log_prob(model, log_z, X)[1]

    temps = "NA" if args.exact else str(args.ais_temps)
    chains = "NA" if args.exact else str(args.ais_runs)
    column = "perplexity" if report == "perplexity" else "mean_test_log_prob"
    out.write(f"model\tkind\tn_temps\tn_chains\tlog_z\tstderr\t{column}\tn_test\n")
    out.write(f"{args.model}\t{model.kind.name}\t{temps}\t{chains}\t{log_z!r}\t{stderr!r}\t{metric!r}\t{X.shape[0]}\n")


def _ais_config(args):
    return ais_mod.AISConfig(n_temps=args.ais_temps, n_chains=args.ais_runs, seed=args.seed)


def _base_rate(args, model, test):
    data = test
    if args.base_data:
        fmt = args.format or ("bow" if model.kind is Kind.COUNT else "idx")
        data = _load_data(args.base_data, fmt, model.kind, model.vocab_size, args.threshold)
    return ais_mod.fit_base_rate(data, args.smoothing, model.kind)


def _save_rows(path, rows):
    np.savetxt(path, np.atleast_2d(rows), fmt="%.17g", delimiter=",")


def cmd_sample(args, out):
    model = load_model(args.model)
    deep = model if isinstance(model, DeepModel) else DeepModel([model])
    bottom = deep.layers[0]
    if bottom.kind is Kind.COUNT and not args.doc_length:
        raise UsageError("--doc-length is required when sampling a count model")
    rng = np.random.default_rng(args.seed)
    result = generate_deep(deep, args.burn_in, args.n, args.thin, rng, args.chains, args.doc_length)
    _save_rows(args.out, result.samples.reshape(-1, bottom.n))
    if args.probs_out:
        _save_rows(args.probs_out, result.means.reshape(-1, bottom.n))
    out.write(f"samples\t{args.n * args.chains}\tsteps\t{result.steps}\n")


def parse_mask_spec(spec, shape):
    """Observed-pixel mask from ``rows:a-b`` / ``cols:a-b`` terms (inclusive, unioned)."""
    rows, cols = shape
    mask = np.zeros((rows, cols), dtype=bool)
    for term in spec.split(","):
        axis, _, span = term.strip().partition(":")
        lo, _, hi = span.partition("-")
        try:
            lo = int(lo)
            hi = int(hi) if hi else lo
        except ValueError:
            raise UsageError(f"bad mask term {term!r}; expected rows:a-b or cols:a-b") from None
        limit = rows if axis == "rows" else cols if axis == "cols" else None
        if limit is None or not 0 <= lo <= hi < limit:
            raise UsageError(f"bad mask term {term!r} for a {rows}x{cols} image")
        if axis == "rows":
            mask[lo:hi + 1, :] = True
        else:
            mask[:, lo:hi + 1] = True
    return mask.ravel()


def _image_shape(text, n):
    if text:
        try:
            r, c = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise UsageError(f"--image-shape must look like 28x28, got {text!r}") from None
    else:
        r = c = int(round(np.sqrt(n)))
    if r * c != n:
        raise UsageError(f"image shape {r}x{c} does not cover {n} visible units")
    return r, c


def cmd_impute(args, out):
    model = _single(load_model(args.model), "impute")
    if model.kind is Kind.COUNT:
        raise UsageError("imputation is not supported for count models")
    mask = parse_mask_spec(args.mask_spec, _image_shape(args.image_shape, model.n))
    if mask.all():
        raise UsageError("--mask-spec marks every unit observed; nothing to impute")
    if not mask.any():
        raise UsageError("--mask-spec marks no unit observed")
    fmt = args.format or "idx"
    X = _load_data(args.data, fmt, model.kind, threshold=args.threshold).to_array()
    if args.limit:
        X = X[:args.limit]
    rng = np.random.default_rng(args.seed)
    rows = []
    for x in X:
        est = impute(model, x[mask], mask, args.burn_in, args.n, rng, args.chains)
        rows.append(fill(x, mask, est))
    _save_rows(args.out, np.asarray(rows).reshape(-1, model.n))
    out.write(f"imputed\t{len(rows)}\tobserved_units\t{int(mask.sum())}\n")


def cmd_export_relu(args, out):
    model = load_model(args.model)
    deep = model if isinstance(model, DeepModel) else DeepModel([model])
    export_relu_init(deep, args.out)
    for ell, layer in enumerate(deep.layers):
        out.write(f"layer\t{ell}\tin\t{layer.n}\tout\t{layer.m}\n")


def parse_range(text):
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--range must look like start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise UsageError("--range needs step > 0 and stop >= start")
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count)


def curve_table(lambda_sq, xi):
    """Columns xi, mu_T(xi, lambda_sq), sigmoid(xi), relu(xi)."""
    mu = np.asarray(trunc_mean(TruncNormParams(xi, np.full_like(xi, lambda_sq))))
    return np.column_stack([xi, mu, expit(xi), np.maximum(xi, 0.0)])


def cmd_curve(args, out):
    if args.lambda_sq <= 0:
        raise UsageError("--lambda-sq must be positive")
    table = curve_table(args.lambda_sq, parse_range(args.range))
    with open(args.out, "w") as fh:
        fh.write("xi\tmu_t\tsigmoid\trelu\n")
        for row in table:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    out.write(f"points\t{len(table)}\n")


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true",
                   help="serial, reproducible output (timing columns print NA)")


def _train_flags(p):
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("idx", "bow", "csv"), required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    p.add_argument("--vocab", type=int)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--rmsprop-decay", type=float, default=0.95)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--fix-d", type=float)
    p.add_argument("--threshold", type=float, default=0.5, help="binarization threshold")
    p.add_argument("--out", required=True)
    _common(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="rtggm")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a two-layer model")
    _train_flags(p)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--test", help="held-out data for the exact log-likelihood column")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-deep", help="layer-wise training of a stack")
    _train_flags(p)
    p.add_argument("--widths", required=True, help="hidden widths, bottom first, e.g. 1000,1000,1000")
    p.set_defaults(func=cmd_train_deep)

    p = sub.add_parser("eval", help="estimate log Z and score test data")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=("idx", "bow", "csv"))
    p.add_argument("--ais-temps", type=int, default=100_000)
    p.add_argument("--ais-runs", type=int, default=100)
    p.add_argument("--report", choices=("logprob", "perplexity"))
    p.add_argument("--exact", action="store_true", help="enumerate Z instead of running AIS")
    p.add_argument("--base-data", help="data for the base-rate model (default: the test data)")
    p.add_argument("--smoothing", type=float, default=0.01)
    p.add_argument("--threshold", type=float, default=0.5)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw samples by Gibbs sampling")
    p.add_argument("--model", required=True)
    p.add_argument("--burn-in", type=int, default=50_000)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--doc-length", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--probs-out", help="also write E[x | h] (pixel probabilities for binary models)")
    _common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("impute", help="fill in unobserved pixels")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("idx", "csv"))
    p.add_argument("--mask-spec", required=True, help="observed region, e.g. rows:0-13")
    p.add_argument("--image-shape", help="ROWSxCOLS (default: square)")
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--limit", type=int, help="only the first N rows")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("export-relu", help="write ReLU network initializers")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_export_relu)

    p = sub.add_parser("curve", help="tabulate the truncated-normal mean nonlinearity")
    p.add_argument("--lambda-sq", type=float, default=0.1)
    p.add_argument("--range", default="-6:6:0.01")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_curve)
    return parser


def _validate(args):
    for name in ("k", "epochs", "batch_size", "hidden", "burn_in", "n", "thin", "chains",
                 "ais_temps", "ais_runs", "vocab", "doc_length", "limit"):
        value = getattr(args, name, None)
        if value is None:
            continue
        floor = 0 if name in ("epochs", "burn_in") else 1
        if name == "ais_temps":
            floor = 2
        if value < floor:
            raise UsageError(f"--{name.replace('_', '-')} must be >= {floor}, got {value}")
    if getattr(args, "lr", 1.0) <= 0:
        raise UsageError("--lr must be positive")
    decay = getattr(args, "rmsprop_decay", 0.5)
    if not 0 < decay < 1:
        raise UsageError("--rmsprop-decay must lie in (0, 1)")
    if getattr(args, "fix_d", None) is not None and args.fix_d <= 0:
        raise UsageError("--fix-d must be positive")


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 after --help
        return exc.code if isinstance(exc.code, int) else 2
    try:
        _validate(args)
        _header(args, out)
        args.func(args, out)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"rtggm {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"rtggm {args.command}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
