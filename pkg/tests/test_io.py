import json

import numpy as np
import pytest

from helpers import newsgroup_hierarchy
from transferhb.hierarchy import build_hierarchy
from transferhb.io import (
    FormatError,
    ModelFile,
    check_labels,
    dumps_model,
    load_hierarchy,
    load_model,
    read_dataset,
    read_docs,
    read_gaussian_csv,
    save_hierarchy,
    save_model,
    tokenize,
    tokenize_corpus,
    write_dataset,
)
from transferhb.objective import DotCoefficients


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_hierarchy_round_trip(tmp_path):
    h = newsgroup_hierarchy()
    save_hierarchy(tmp_path / "h.json", h)
    assert load_hierarchy(tmp_path / "h.json") == h


@pytest.mark.parametrize("text,msg", [
    ('{"nodes": ["a", "b"], "edges": [["a", "b"], ["b", "a"]]}', "cycle"),
    ('{"edges": []}', "nodes"),
    ('{"nodes": ["a"],', "line 1"),
])
def test_bad_hierarchy_files(tmp_path, text, msg):
    with pytest.raises(FormatError, match=msg):
        load_hierarchy(write(tmp_path, "h.json", text))


def test_gaussian_csv_round_trip(tmp_path):
    data = {"a": np.array([[0.1, 1 / 3], [2.0, -1e-300]]), "b": np.array([[np.pi, 5.0]])}
    write_dataset(tmp_path / "d.csv", "gaussian", data)
    back, dim = read_dataset(tmp_path / "d.csv", "gaussian")
    assert dim == 2 and list(back) == ["a", "b"]
    for k in data:
        assert back[k].tobytes() == data[k].tobytes()


@pytest.mark.parametrize("text,line", [
    ("a,1,2\nb,1\n", 2),
    ("a,1,2\n,3,4\n", 2),
    ("a,1,x\n", 1),
    ("a,1,2\n\nb,nan,1\n", 3),
    ("a\n", 1),
])
def test_gaussian_csv_diagnostics(tmp_path, text, line):
    with pytest.raises(FormatError, match=f":{line}:"):
        read_gaussian_csv(write(tmp_path, "d.csv", text))


def test_docs_round_trip(tmp_path):
    data = {"x": np.array([[0, 3, 0, 1.0]]), "y": np.array([[2.0, 0, 0, 0], [0, 0, 0, 0]])}
    write_dataset(tmp_path / "d.docs", "multinomial", data)
    back, vocab = read_docs(tmp_path / "d.docs", 4)
    assert vocab == 4
    for k in data:
        np.testing.assert_array_equal(back[k], data[k])


def test_docs_vocab_inferred_and_duplicates_summed(tmp_path):
    back, vocab = read_docs(write(tmp_path, "d.docs", "x\t0:1 5:2 0:3\n"))
    assert vocab == 6
    np.testing.assert_array_equal(back["x"], [[4, 0, 0, 0, 0, 2]])


@pytest.mark.parametrize("text,msg", [
    ("x 0:1\n", ":1: expected"),
    ("x\t0:1\ny\t1-2\n", ":2: bad pair #1"),
    ("x\t0:1 3:-1\n", ":1: negative"),
    ("x\t0:1\n\nx\t9:1\n", ":3: word id 9 outside"),
])
def test_docs_diagnostics(tmp_path, text, msg):
    with pytest.raises(FormatError, match=msg):
        read_docs(write(tmp_path, "d.docs", text), 4)


def test_check_labels():
    h = build_hierarchy([("a", "r"), ("b", "r")], ["r", "a", "b"])
    check_labels(h, {"a": 1, "b": 2})
    with pytest.raises(FormatError, match="'r'"):
        check_labels(h, {"r": 1})
    check_labels(h, {"r": 1}, leaves_only=False)


def test_tokenizer():
    assert tokenize("Hello, World! it's 2nd-rate") == ["hello", "world", "it", "s", "2nd", "rate"]
    vocab, docs = tokenize_corpus([("a", "cat dog cat"), ("b", "dog bird")], min_count=2)
    assert vocab == ["cat", "dog"]
    assert docs[0] == ("a", {0: 2, 1: 1})
    assert docs[1] == ("b", {1: 1})


def model(dot=True):
    h = build_hierarchy([("a", "r"), ("b", "r")], ["r", "a", "b"])
    params = {"r": np.array([0.1, -np.inf]), "a": np.array([1 / 3, 2.0]),
              "b": np.array([np.nextafter(1, 2), 5e-324])}
    d = DotCoefficients({"a": [0.5, 1e-6], "b": [2.0, 3.0]}) if dot else None
    return ModelFile(h, "multinomial", 2, params, "hyperprior", d,
                     {"alpha": 0.1, "grid": np.array([0.1, 1.0]), "n": 3, "tag": "x",
                      "flag": True, "nested": {"k": [1.5, None]}}, {"a": 4, "b": 5})


def test_model_round_trip_exact(tmp_path):
    m = model()
    save_model(tmp_path / "m.json", m)
    back = load_model(tmp_path / "m.json")
    for k, v in m.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert back.dot.values["a"].tobytes() == m.dot.values["a"].tobytes()
    assert back.config["alpha"] == 0.1 and back.config["nested"] == {"k": [1.5, None]}
    np.testing.assert_array_equal(back.config["grid"], [0.1, 1.0])
    assert back.class_counts == {"a": 4, "b": 5}
    assert dumps_model(back) == (tmp_path / "m.json").read_text()
    assert load_model(tmp_path / "m.json").dot is not None
    save_model(tmp_path / "n.json", model(dot=False))
    assert load_model(tmp_path / "n.json").dot is None


def test_model_version_and_corruption(tmp_path):
    obj = json.loads(dumps_model(model()))
    obj["version"] = 99
    with pytest.raises(FormatError, match="version 99"):
        load_model(write(tmp_path, "v.json", json.dumps(obj)))
    with pytest.raises(FormatError, match="not a transferhb model"):
        load_model(write(tmp_path, "o.json", "{}"))
    with pytest.raises(FormatError, match="corrupt"):
        load_model(write(tmp_path, "t.json", dumps_model(model())[:-20]))
    obj["version"] = 1
    obj["params"]["a"] = ["zz"]
    with pytest.raises(FormatError, match="corrupt numeric"):
        load_model(write(tmp_path, "p.json", json.dumps(obj)))
    del obj["hierarchy"]
    with pytest.raises(FormatError, match="hierarchy"):
        load_model(write(tmp_path, "h.json", json.dumps(obj)))
