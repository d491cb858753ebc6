"""Naive Bayes over a newsgroup-shaped hierarchy, on synthetic documents.

Five topic groups of three leaf classes each, a 200-word
vocabulary and three training documents per class. Compares plain
smoothed counts against the hierarchical fit on held-out accuracy.

    python3 demos/document_classification.py
"""

from transferhb import MultinomialFamily, SynthSpec, evaluate, synthesize
from transferhb.experiments import compact_vocabulary, fit_method, leaf_params

# Fifteen leaves under five topic groups, like the newsgroup tree.
SPEC = SynthSpec("multinomial", (5, 3), size=200, perturbation=0.5, n_train=3,
                 n_test=50, seed=7, root_scale=1.0, doc_length=30)


def main():
    h, _, train, test = synthesize(SPEC)
    _, train, test = compact_vocabulary(train, test)
    family = MultinomialFamily(next(iter(train.values())).shape[1])
    for method in ("likelihood", "cvreg", "shrinkage", "hb"):
        fitted = fit_method(method, h, family, train, seed=SPEC.seed)
        rep = evaluate(family, leaf_params(h, fitted.params), test)
        print(f"{method:>11}: accuracy {rep.accuracy:.3f}   "
              f"{rep.mean_bits:8.2f} bits/doc")


if __name__ == "__main__":
    main()
