"""Command-line interface.

Exit codes: 0 success, 1 usage or parse error, 2 numerical failure
(including an optimizer that stopped before converging).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import classify, evaluate
from .estimation import BootstrapConfig, bootstrap_dot
from .experiments import (
    DEFAULT_METHODS,
    HB_METHODS,
    METHODS,
    MethodOptions,
    SweepPlan,
    cells_table,
    class_priors,
    fit_method,
    leaf_params,
    plot_data,
    run_sweep,
    sweep_table,
    synth_pool,
    transfer_alpha,
)
from .families import family_from_tag
from .hierarchy import HierarchyError, leaves
from .io import (
    FormatError,
    ModelFile,
    check_labels,
    load_hierarchy,
    load_model,
    read_dataset,
    save_hierarchy,
    save_model,
    tokenize_corpus,
    write_dataset,
)
from .objective import DivergenceSpec
from .optimize import OptimizerConfig
from .synth import SynthSpec, synthesize

logger = logging.getLogger("transferhb")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _words(text) -> tuple[str, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(str(v) for v in text)
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


# -- shared argument groups ----------------------------------------------------------


def _add_data_args(p, required=True):
    p.add_argument("--hierarchy", required=required, help="hierarchy JSON file")
    p.add_argument("--data", required=required, help="training data file")
    p.add_argument("--family", choices=("gaussian", "multinomial"), required=required)
    p.add_argument("--vocab", type=int, default=None,
                   help="vocabulary size for document files (default: largest id + 1)")


def _add_method_args(p):
    g = p.add_argument_group("method hyperparameters")
    g.add_argument("--alpha", type=float, default=None,
                   help="regularization strength; default picks per family")
    g.add_argument("--beta", type=float, default=1.0, help="transfer penalty weight")
    g.add_argument("--alpha-grid", type=_floats, default=None)
    g.add_argument("--beta-grid", type=_floats, default=None)
    g.add_argument("--weight-grid", type=_floats, default=None)
    g.add_argument("--cv-folds", type=int, default=5)
    g.add_argument("--divergence", choices=("l2", "l1", "eps"), default="l2")
    g.add_argument("--epsilon", type=float, default=0.0)
    g.add_argument("--smoothing", type=float, default=1e-3)
    g.add_argument("--resamples", type=int, default=50)
    g.add_argument("--variance-floor", type=float, default=1e-6)
    g.add_argument("--granularity", choices=("coordinate", "group"), default="coordinate")
    g.add_argument("--hyper-shape", type=float, default=2.0)
    g.add_argument("--grad-tol", type=float, default=1e-6)
    g.add_argument("--max-iters", type=int, default=2000)
    g.add_argument("--starts", type=int, default=1, help="hyperprior multistarts")


def _add_synth_args(p, required=True):
    p.add_argument("--synth-family", dest="synth_family",
                   choices=("gaussian", "multinomial"), required=required)
    p.add_argument("--branching", type=_ints, default=(2,),
                   help="children per node at each depth, e.g. 3,3")
    p.add_argument("--size", type=int, default=10, help="dimension or vocabulary size")
    p.add_argument("--perturbation", type=float, default=0.1)
    p.add_argument("--root-scale", type=float, default=1.0)
    p.add_argument("--doc-length", type=int, default=50)


def _options(args) -> MethodOptions:
    defaults = MethodOptions()
    return MethodOptions(
        alpha=args.alpha,
        beta=args.beta,
        alpha_grid=args.alpha_grid or defaults.alpha_grid,
        beta_grid=args.beta_grid or defaults.beta_grid,
        weight_grid=args.weight_grid or defaults.weight_grid,
        folds=args.cv_folds,
        divergence=DivergenceSpec(args.divergence, args.epsilon, args.smoothing),
        resamples=args.resamples,
        variance_floor=args.variance_floor,
        granularity=args.granularity,
        hyper_shape=args.hyper_shape,
        opt=OptimizerConfig(grad_tol=args.grad_tol, max_iters=args.max_iters,
                            n_starts=args.starts),
    )


def _load_training(args):
    h = load_hierarchy(args.hierarchy)
    data, size = read_dataset(args.data, args.family, args.vocab)
    check_labels(h, data)
    missing = [h.names[n] for n in leaves(h) if h.names[n] not in data]
    if missing:
        raise FormatError(f"{args.data}: no instances for leaves {missing}")
    return h, data, family_from_tag(args.family, size), size


def _load_test(path, model: ModelFile):
    vocab = model.size if model.family == "multinomial" else None
    data, size = read_dataset(path, model.family, vocab)
    if size != model.size:
        raise FormatError(f"{path}: {size}-dimensional data for a {model.size}-dimensional model")
    unknown = sorted(k for k in data if k not in model.params)
    if unknown:
        raise FormatError(f"{path}: labels {unknown} have no parameters in the model")
    return data


def _write(text: str, path: str | None):
    sys.stdout.write(text)
    if path:
        Path(path).write_text(text)


# -- commands ------------------------------------------------------------------------


def cmd_fit(args) -> int:
    h, data, family, size = _load_training(args)
    options = _options(args)
    method = args.method
    if method == "hb":
        method = {v: k for k, v in HB_METHODS.items()}[args.dot]
    elif args.dot != "none":
        raise UsageError(f"--dot {args.dot} only applies to --method hb")
    fitted = fit_method(method, h, family, data, options, args.seed)
    config = dict(options.to_dict(), seed=args.seed, info=fitted.info)
    model = ModelFile(h, args.family, size, fitted.params, method, fitted.dot, config,
                      {k: len(v) for k, v in sorted(data.items())})
    save_model(args.out, model)

    lines = [f"method\t{method}", f"converged\t{str(fitted.converged).lower()}"]
    if fitted.objective_value is not None:
        tr = fitted.trace
        lines += [f"objective\t{fitted.objective_value!r}",
                  f"iterations\t{fitted.iterations}",
                  f"trace\t{tr[0]!r} -> {tr[-1]!r} ({len(tr)} accepted values)"]
    for key in ("alpha", "beta", "weights"):
        if key in fitted.info:
            lines.append(f"{key}\t{json.dumps(fitted.info[key], sort_keys=True)}")
    print("\n".join(lines))
    if not fitted.converged:
        print(f"error: optimizer stopped before converging ({fitted.info.get('status')})",
              file=sys.stderr)
        return 2
    return 0


def _report(model: ModelFile, test, uniform: bool):
    family = family_from_tag(model.family, model.size)
    h = model.hierarchy
    priors = class_priors(h, model.class_counts, uniform)
    return evaluate(family, leaf_params(h, model.params), test, model.method, None, priors)


def cmd_eval(args) -> int:
    model = load_model(args.model)
    test = _load_test(args.data, model)
    rep = _report(model, test, args.uniform_priors)
    text = rep.to_table()
    if args.baseline_model:
        base_model = load_model(args.baseline_model)
        base = _report(base_model, _load_test(args.data, base_model), args.uniform_priors)
        text += f"\nclass\tdelta_bits_vs_{base.method}\n"
        for k, v in rep.deltas(base).items():
            text += f"{k}\t{float(v)!r}\n"
    _write(text, args.out)
    return 0


def cmd_classify(args) -> int:
    model = load_model(args.model)
    if model.family != "multinomial":
        raise UsageError("classify needs a multinomial model")
    docs = _load_test(args.data, model)
    h = model.hierarchy
    params = leaf_params(h, model.params)
    classes = sorted(params)
    priors = class_priors(h, model.class_counts, args.uniform_priors)
    logits = np.array([params[c] for c in classes])
    pri = np.array([priors[c] for c in classes])
    lines = ["doc\tlabel\tpredicted"]
    correct = total = 0
    for label in sorted(docs):
        pred = classify(docs[label], logits, pri)
        for i, p in enumerate(pred):
            lines.append(f"{total}\t{label}\t{classes[p]}")
            correct += classes[p] == label
            total += 1
    _write("\n".join(lines) + "\n", args.out)
    if total:
        print(f"accuracy {correct}/{total} = {correct / total!r}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(args.synth_family, args.branching, args.size, args.perturbation,
                     args.n_train, args.n_test, args.seed, args.root_scale, args.doc_length,
                     args.test_total)
    h, truth, train, test = synthesize(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if spec.family == "gaussian" else "docs"
    save_hierarchy(out / "hierarchy.json", h)
    write_dataset(out / f"train.{ext}", spec.family, train)
    write_dataset(out / f"test.{ext}", spec.family, test)
    config = {"seed": args.seed, "perturbation": spec.perturbation,
              "branching": list(spec.branching), "root_scale": spec.root_scale,
              "n_train": spec.n_train, "n_test": spec.n_test}
    save_model(out / "truth.json", ModelFile(h, spec.family, spec.size, truth, "truth",
                                             None, config))
    print(f"wrote {out}/hierarchy.json, train.{ext}, test.{ext}, truth.json")
    return 0


def cmd_sweep(args) -> int:
    if args.hierarchy:
        if not (args.data and args.family):
            raise UsageError("sweep on files needs --hierarchy, --data and --family")
        h, pool, family, _ = _load_training(args)
        tag = args.family
    elif args.synth_family:
        spec = SynthSpec(args.synth_family, args.branching, args.size, args.perturbation,
                         1, 1, args.seed, args.root_scale, args.doc_length)
        h, family, pool, _ = synth_pool(spec, max(args.sizes), args.n_test)
        tag = args.synth_family
    else:
        raise UsageError("sweep needs --hierarchy/--data/--family or --synth-family")
    methods = args.methods or DEFAULT_METHODS[tag]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    plan = SweepPlan(tuple(methods), args.sizes, args.folds, args.n_test, args.seed,
                     args.baseline)
    cells = run_sweep(h, family, pool, plan, _options(args), args.jobs)
    _write(sweep_table(cells, plan), args.out)
    if args.plot_data:
        Path(args.plot_data).write_text(plot_data(cells, plan))
    if args.cells:
        Path(args.cells).write_text(cells_table(cells))
    return 0


def cmd_bootstrap(args) -> int:
    h, data, family, _ = _load_training(args)
    options = _options(args)
    alpha = transfer_alpha(family, data, options, args.seed)
    cfg = BootstrapConfig(args.resamples, args.seed, args.variance_floor, args.granularity)
    dot = bootstrap_dot(h, data, family, cfg, alpha)
    lines = [f"# alpha={alpha!r} resamples={cfg.resamples} granularity={cfg.granularity}",
             "edge\tparent\tindex\tlambda"]
    for c, p in h.edges:
        for i, v in enumerate(dot.values[h.names[c]]):
            lines.append(f"{h.names[c]}\t{h.names[p]}\t{i}\t{float(v)!r}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


def cmd_tokenize(args) -> int:
    records = []
    with open(args.input) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep or not label.strip():
                raise FormatError(f"{args.input}:{lineno}: expected 'label<TAB>text'")
            records.append((label.strip(), text))
    vocab, docs = tokenize_corpus(records, args.min_count)
    with open(args.out, "w") as fh:
        for label, counts in docs:
            pairs = " ".join(f"{i}:{counts[i]}" for i in sorted(counts))
            fh.write(f"{label}\t{pairs}\n")
    if args.vocab_out:
        Path(args.vocab_out).write_text("".join(f"{w}\n" for w in vocab))
    print(f"{len(docs)} documents, vocabulary {len(vocab)}")
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="master random seed (default 0)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="parallel worker processes for sweep (default 1)")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON file of option defaults")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="transferhb", description="Hierarchical transfer learning: fit, evaluate, classify and sweep.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--config", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    p = sub.add_parser("fit", parents=[common], help="fit a model and write a model file")
    _add_data_args(p)
    p.add_argument("--method", choices=("hb", "cvreg", "likelihood", "shrinkage", "cvconst"),
                   default="hb")
    p.add_argument("--dot", choices=("none", "bootstrap", "hyperprior"), default="none")
    p.add_argument("--out", required=True, help="model file to write")
    _add_method_args(p)
    p.set_defaults(handler=cmd_fit)
    subs["fit"] = p

    p = sub.add_parser("eval", parents=[common], help="held-out log-likelihood and accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="test data file")
    p.add_argument("--baseline-model", default=None, help="report deltas against this model")
    p.add_argument("--uniform-priors", action="store_true")
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(handler=cmd_eval)
    subs["eval"] = p

    p = sub.add_parser("classify", parents=[common], help="label documents with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--uniform-priors", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_classify)
    subs["classify"] = p

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic hierarchy")
    _add_synth_args(p)
    p.add_argument("--n-train", type=int, default=5)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--test-total", type=int, default=None,
                   help="multinomial only: this many test documents with random labels")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_synth)
    subs["synth"] = p

    p = sub.add_parser("sweep", parents=[common], help="train-size sweep over methods")
    _add_data_args(p, required=False)
    _add_synth_args(p, required=False)
    p.add_argument("--methods", type=_words, default=None)
    p.add_argument("--sizes", type=_ints, default=(3, 5, 10, 15))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--baseline", choices=METHODS, default="cvreg")
    p.add_argument("--out", default=None, help="also write the table here")
    p.add_argument("--plot-data", default=None, help="x = N, y = metric per method")
    p.add_argument("--cells", default=None, help="per-cell results table")
    _add_method_args(p)
    p.set_defaults(handler=cmd_sweep)
    subs["sweep"] = p

    p = sub.add_parser("bootstrap", parents=[common], help="bootstrap DOT coefficients")
    _add_data_args(p)
    _add_method_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_bootstrap)
    subs["bootstrap"] = p

    p = sub.add_parser("tokenize", parents=[common], help="raw text to word-id documents")
    p.add_argument("--input", required=True, help="lines of 'label<TAB>raw text'")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out", default=None)
    p.add_argument("--min-count", type=int, default=2)
    p.set_defaults(handler=cmd_tokenize)
    subs["tokenize"] = p
    return parser, subs


def _apply_config(path: str, command: str, parser, sub) -> None:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    section = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    section.update(cfg.get(command, {}))
    known = {a.dest for a in sub._actions}
    unknown = sorted(k for k in section if k.replace("-", "_") not in known)
    if unknown:
        raise UsageError(f"config {path}: unknown options {unknown} for {command}")
    values = {k.replace("-", "_"): v for k, v in section.items()}
    parser.set_defaults(**{k: v for k, v in values.items() if k in ("seed", "jobs")})
    sub.set_defaults(**values)


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        _apply_config(args.config, args.command, parser, subs[args.command])
        args = parser.parse_args(argv)
    for name in ("alpha_grid", "beta_grid", "weight_grid"):
        if getattr(args, name, None) is not None:
            setattr(args, name, _floats(getattr(args, name)))
    for name in ("sizes", "branching"):
        if getattr(args, name, None) is not None:
            setattr(args, name, _ints(getattr(args, name)))
    if getattr(args, "methods", None) is not None:
        args.methods = _words(args.methods)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, HierarchyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
