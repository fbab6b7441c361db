import json

import pytest

from kramers_exit.problem import (
    ProblemFileError,
    bundled_examples,
    document_hash,
    example_path,
    load_problem,
    spec_from_document,
    validate_document,
)


def _doc(name="disc_plus"):
    return json.loads(example_path(name).read_text())


def test_bundled_examples_all_load():
    names = bundled_examples()
    assert {"disc_plus", "disc_minus", "disc_gibbs", "interval", "ellipse", "broken_orthogonality"} <= set(names)
    for name in names:
        spec, doc = load_problem(example_path(name))
        assert spec.dimension == doc["dimension"]


def test_unknown_example():
    with pytest.raises(KeyError):
        example_path("nope")


def test_hash_ignores_key_order_and_whitespace(tmp_path):
    doc = _doc()
    p = tmp_path / "p.json"
    p.write_text(json.dumps(dict(reversed(list(doc.items()))), indent=7))
    _, again = load_problem(p)
    assert document_hash(again) == document_hash(doc)
    doc["witness"] = [0.0, 0.1]
    assert document_hash(again) != document_hash(doc)


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda d: d.pop("f"), "'f' is a required property"),
        (lambda d: d.update(dimension=0), "/dimension"),
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d["domain"].update(type="cube"), "/domain"),
        (lambda d: d["options"].update(seed="x"), "/options/seed"),
        (lambda d: d["options"].update(n_sample=3), "n_sample"),
    ],
)
def test_schema_diagnostics(mutate, needle):
    doc = _doc()
    mutate(doc)
    with pytest.raises(ProblemFileError) as info:
        validate_document(doc)
    assert any(needle in line for line in info.value.diagnostics)


def test_all_schema_issues_reported_together():
    doc = _doc()
    doc.pop("f")
    doc["extra"] = 1
    with pytest.raises(ProblemFileError) as info:
        validate_document(doc)
    assert len(info.value.diagnostics) == 2


def test_dimension_consistency():
    doc = _doc()
    doc["witness"] = [0.0, 0.0, 0.0]
    doc["ell"] = ["x2"]
    with pytest.raises(ProblemFileError) as info:
        validate_document(doc)
    assert len(info.value.diagnostics) == 2


def test_expression_error_wrapped():
    doc = _doc()
    doc["ell"] = ["x1*x2", "-x1^^2"]
    with pytest.raises(ProblemFileError, match="expression"):
        spec_from_document(doc)


def test_witness_outside_domain_wrapped():
    doc = _doc()
    doc["witness"] = [4.0, 4.0]
    with pytest.raises(ProblemFileError):
        spec_from_document(doc)


def test_gibbsian_ell_may_be_null():
    doc = _doc()
    doc["ell"] = None
    spec = spec_from_document(doc)
    assert spec.ell([0.3, 0.2]).tolist() == [0.0, 0.0]
