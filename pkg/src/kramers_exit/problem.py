"""JSON problem files: schema validation, loading and bundled examples."""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .expr import ExpressionError
from .geometry import GeometryError, domain_from_json
from .wellspec import ProblemSpec, SolverOptions, WellSpecError

_NUMBER = {"type": "number"}
_OPTION_TYPES = {
    "seed": {"type": "integer", "minimum": 0},
    "n_samples": {"type": "integer", "minimum": 10},
    "interior_starts": {"type": ["integer", "null"], "minimum": 1},
    "boundary_starts": {"type": ["integer", "null"], "minimum": 1},
    "tol_crit": {"type": "number", "exclusiveMinimum": 0},
    "tol_level_rel": {"type": "number", "exclusiveMinimum": 0},
    "dedupe_rel": {"type": "number", "exclusiveMinimum": 0},
    "det_tol": {"type": "number", "exclusiveMinimum": 0},
    "eps_x": {"type": "number", "exclusiveMinimum": 0},
    "eps_tail": {"type": "number", "exclusiveMinimum": 0},
    "t_max": {"type": "number", "exclusiveMinimum": 0},
    "ode_tol": {"type": "number", "exclusiveMinimum": 0},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["dimension", "f", "domain", "witness"],
    "properties": {
        "name": {"type": "string"},
        "dimension": {"type": "integer", "minimum": 1},
        "f": {"type": "string", "minLength": 1},
        "ell": {"oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "string", "minLength": 1}}]},
        "domain": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type", "center", "radius"],
                    "properties": {
                        "type": {"const": "ball"},
                        "center": {"type": "array", "items": _NUMBER, "minItems": 1},
                        "radius": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type", "g", "bbox"],
                    "properties": {
                        "type": {"const": "implicit"},
                        "g": {"type": "string", "minLength": 1},
                        "bbox": {
                            "type": "array",
                            "minItems": 1,
                            "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                        },
                    },
                },
            ]
        },
        "witness": {"type": "array", "items": _NUMBER, "minItems": 1},
        "options": {"type": "object", "additionalProperties": False, "properties": _OPTION_TYPES},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


class ProblemFileError(ValueError):
    """The problem document is malformed; ``diagnostics`` lists every issue found."""

    def __init__(self, message: str, diagnostics=None):
        self.diagnostics = list(diagnostics or [message])
        super().__init__(message)


def _location(err) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def validate_document(doc) -> None:
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        diags = [f"{_location(e)}: {e.message}" for e in errors]
        raise ProblemFileError(f"problem file fails schema validation ({len(diags)} issue(s))", diags)
    d = doc["dimension"]
    diags = []
    if doc.get("ell") is not None and len(doc["ell"]) != d:
        diags.append(f"/ell: expected {d} components, got {len(doc['ell'])}")
    if len(doc["witness"]) != d:
        diags.append(f"/witness: expected {d} coordinates, got {len(doc['witness'])}")
    dom = doc["domain"]
    if dom["type"] == "ball" and len(dom["center"]) != d:
        diags.append(f"/domain/center: expected {d} coordinates")
    if dom["type"] == "implicit" and len(dom["bbox"]) != d:
        diags.append(f"/domain/bbox: expected {d} intervals")
    if diags:
        raise ProblemFileError("problem file has inconsistent dimensions", diags)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def document_hash(doc) -> str:
    """SHA-256 of the canonical serialization, insensitive to whitespace and key order."""
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def spec_from_document(doc) -> ProblemSpec:
    validate_document(doc)
    d = doc["dimension"]
    try:
        domain = domain_from_json(doc["domain"], d)
        options = SolverOptions.from_dict(doc.get("options", {}))
        return ProblemSpec.from_strings(
            doc["f"], doc.get("ell"), domain, doc["witness"], options, name=doc.get("name", "")
        )
    except ExpressionError as exc:
        raise ProblemFileError(f"expression error: {exc}") from exc
    except (GeometryError, WellSpecError) as exc:
        raise ProblemFileError(str(exc)) from exc


def load_document(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(
            f"invalid JSON in {path}", [f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]
        ) from exc


def load_problem(path) -> tuple[ProblemSpec, dict]:
    """Parse and validate a problem file; returns the ProblemSpec and the raw document."""
    doc = load_document(path)
    return spec_from_document(doc), doc


def bundled_examples() -> list[str]:
    root = resources.files(__package__) / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def example_path(name: str) -> Path:
    """Filesystem path of a bundled example such as ``"disc_plus"``."""
    p = resources.files(__package__) / "data" / f"{name}.json"
    if not p.is_file():
        raise KeyError(f"no bundled example {name!r}; available: {bundled_examples()}")
    return Path(str(p))


def load_example(name: str) -> ProblemSpec:
    return load_problem(example_path(name))[0]
