"""Gaussian transfer on a synthetic two-level hierarchy.

Draws a root Gaussian, perturbs it down a 3x3 tree, then fits every leaf
from a handful of samples. Prints held-out bits per instance for each
method, averaged over leaves, as the training size grows.

    python3 demos/gaussian_transfer.py    # about 40 s
"""

from transferhb import SynthSpec, evaluate, family_from_tag, synthesize
from transferhb.experiments import MethodOptions, fit_method, leaf_params

METHODS = ("cvreg", "cvconst", "bootstrap", "hyperprior")


def main(sizes=(5, 10, 20), seed=0):
    print(f"{'N':>4} " + " ".join(f"{m:>11}" for m in METHODS))
    for n in sizes:
        spec = SynthSpec("gaussian", (3, 3), size=5, perturbation=0.1, n_train=n,
                         n_test=200, seed=seed)
        h, _, train, test = synthesize(spec)
        family = family_from_tag(spec.family, spec.size)
        row = []
        for method in METHODS:
            fitted = fit_method(method, h, family, train, MethodOptions(), seed)
            rep = evaluate(family, leaf_params(h, fitted.params), test)
            row.append(rep.mean_bits)
        print(f"{n:>4} " + " ".join(f"{v:>11.3f}" for v in row))


if __name__ == "__main__":
    main()
