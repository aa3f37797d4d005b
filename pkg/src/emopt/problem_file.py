"""JSON problem files: validation with JSON-pointer diagnostics and serialization.

A problem file is a flat JSON object::

    {"version": 1, "kind": "poly_rect",
     "terms": [{"coef": 1, "exps": [2]}, {"coef": -1, "exps": [1]}],
     "l": [0], "u": [1],
     "options": {"theta0": [0.25], "max_iter": 500}}

Matrices are row-major nested arrays. The keys each kind needs are listed
in ``KIND_FIELDS``; ``lp_dual`` accepts an optional ``Q`` that turns the LP
into the dual of a convex QP.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._errors import ProblemFileError
from .problem import PolynomialObjective, QuadraticObjective

__all__ = ["SCHEMA_VERSION", "KINDS", "KIND_FIELDS", "ProblemFile", "parse_problem", "load_problem", "serialize_problem"]

SCHEMA_VERSION = 1

KIND_FIELDS = {
    "qp_unconstrained": ("Q", "b"),
    "qp_l1": ("Q", "b"),
    "poly_rect": ("terms", "l", "u"),
    "poly_simplex": ("terms",),
    "poly_polytope": ("terms", "B", "c", "l", "u"),
    "qp_ineq": ("Q", "b", "A", "c"),
    "qp_box": ("Q", "b", "l", "u"),
    "lp_dual": ("A", "b", "c"),
}
KINDS = tuple(KIND_FIELDS)
_OPTIONAL_FIELDS = {"lp_dual": ("Q",)}
_OPTION_KEYS = ("sigma", "delta", "theta0", "K", "max_iter", "tol")


@dataclass(frozen=True)
class ProblemFile:
    """A validated problem description.

    ``data`` holds the payload as plain Python values (floats, integer
    exponent lists and nested lists), so equality and serialization are
    structural.
    """

    kind: str
    data: dict
    options: dict = field(default_factory=dict)
    version: int = SCHEMA_VERSION

    @property
    def dim(self) -> int:
        if "terms" in self.data:
            return len(self.data["terms"][0]["exps"])
        if self.kind == "lp_dual":
            return len(self.data["A"])
        return len(self.data["b"])

    def polynomial(self) -> PolynomialObjective:
        terms = self.data["terms"]
        return PolynomialObjective([t["coef"] for t in terms], [t["exps"] for t in terms], dim=self.dim)

    def quadratic(self) -> QuadraticObjective:
        return QuadraticObjective(self.data["Q"], self.data["b"])

    def array(self, key) -> np.ndarray:
        return np.asarray(self.data[key], dtype=float)


# --------------------------------------------------------------------------
# Validation helpers. Each raises ProblemFileError with the offending pointer.
# --------------------------------------------------------------------------


def _escape(key) -> str:
    return str(key).replace("~", "~0").replace("/", "~1")


def _number(value, pointer) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProblemFileError(pointer, "expected a number")
    if not math.isfinite(value):
        raise ProblemFileError(pointer, "expected a finite number")
    return float(value)


def _integer(value, pointer, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ProblemFileError(pointer, "expected an integer")
    if minimum is not None and value < minimum:
        raise ProblemFileError(pointer, f"expected an integer >= {minimum}")
    return int(value)


def _vector(value, pointer, length=None) -> list:
    if not isinstance(value, list) or not value:
        raise ProblemFileError(pointer, "expected a non-empty array of numbers")
    out = [_number(v, f"{pointer}/{i}") for i, v in enumerate(value)]
    if length is not None and len(out) != length:
        raise ProblemFileError(pointer, f"expected {length} entries, found {len(out)}")
    return out


def _matrix(value, pointer, rows=None, cols=None) -> list:
    if not isinstance(value, list) or not value:
        raise ProblemFileError(pointer, "expected a non-empty array of rows")
    width = cols
    out = []
    for i, row in enumerate(value):
        vec = _vector(row, f"{pointer}/{i}", width)
        width = len(vec)
        out.append(vec)
    if rows is not None and len(out) != rows:
        raise ProblemFileError(pointer, f"expected {rows} rows, found {len(out)}")
    return out


def _terms(value, pointer) -> list:
    if not isinstance(value, list) or not value:
        raise ProblemFileError(pointer, "expected a non-empty array of terms")
    dim = None
    out = []
    for k, term in enumerate(value):
        at = f"{pointer}/{k}"
        if not isinstance(term, dict):
            raise ProblemFileError(at, "expected an object with coef and exps")
        for key in term:
            if key not in ("coef", "exps"):
                raise ProblemFileError(f"{at}/{_escape(key)}", "unknown term field")
        if "coef" not in term:
            raise ProblemFileError(f"{at}/coef", "missing field")
        if "exps" not in term:
            raise ProblemFileError(f"{at}/exps", "missing field")
        coef = _number(term["coef"], f"{at}/coef")
        exps = term["exps"]
        if not isinstance(exps, list) or not exps:
            raise ProblemFileError(f"{at}/exps", "expected a non-empty array of exponents")
        exps = [_integer(e, f"{at}/exps/{j}", minimum=0) for j, e in enumerate(exps)]
        if dim is None:
            dim = len(exps)
        elif len(exps) != dim:
            raise ProblemFileError(f"{at}/exps", f"expected {dim} exponents, found {len(exps)}")
        out.append({"coef": coef, "exps": exps})
    return out


def _options(value, pointer="/options") -> dict:
    if not isinstance(value, dict):
        raise ProblemFileError(pointer, "expected an object")
    out = {}
    for key, item in value.items():
        at = f"{pointer}/{_escape(key)}"
        if key not in _OPTION_KEYS:
            raise ProblemFileError(at, "unknown option")
        if key == "sigma":
            out[key] = _number(item, at) if not isinstance(item, list) else _vector(item, at)
            if isinstance(out[key], float) and out[key] <= 0:
                raise ProblemFileError(at, "sigma must be positive")
        elif key == "theta0":
            out[key] = _vector(item, at)
        elif key == "max_iter":
            out[key] = _integer(item, at, minimum=0)
        else:
            out[key] = _number(item, at)
            if key in ("delta",) and out[key] < 0:
                raise ProblemFileError(at, "delta must be non-negative")
            if key == "tol" and out[key] <= 0:
                raise ProblemFileError(at, "tol must be positive")
    return out


def _check_start_length(kind, data, dim, theta0):
    if kind == "poly_simplex":
        allowed = {dim - 1}
    elif kind == "poly_polytope":
        allowed = {dim - len(data["B"])}
    elif kind == "lp_dual":
        # theta1 alone, or (theta1, theta2) when the dual carries a quadratic term
        allowed = {dim, dim + len(data["c"])} if "Q" in data else {dim}
    else:
        allowed = {dim}
    if len(theta0) not in allowed:
        expected = " or ".join(str(n) for n in sorted(allowed))
        raise ProblemFileError("/options/theta0", f"expected {expected} entries, found {len(theta0)}")


def _validate(raw) -> ProblemFile:
    if not isinstance(raw, dict):
        raise ProblemFileError("", "expected a JSON object at the top level")
    version = SCHEMA_VERSION
    if "version" in raw:
        version = _integer(raw["version"], "/version")
        if version != SCHEMA_VERSION:
            raise ProblemFileError("/version", f"unsupported schema version {version}")
    if "kind" not in raw:
        raise ProblemFileError("/kind", "missing field")
    kind = raw["kind"]
    if kind not in KIND_FIELDS:
        raise ProblemFileError("/kind", f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    required = KIND_FIELDS[kind]
    allowed = set(required) | set(_OPTIONAL_FIELDS.get(kind, ())) | {"version", "kind", "options"}
    for key in raw:
        if key not in allowed:
            raise ProblemFileError(f"/{_escape(key)}", f"field not used by kind {kind}")
    for key in required:
        if key not in raw:
            raise ProblemFileError(f"/{key}", "missing field")

    data = {}
    if "terms" in required:
        data["terms"] = _terms(raw["terms"], "/terms")
        dim = len(data["terms"][0]["exps"])
    else:
        data["b"] = _vector(raw["b"], "/b")
        if kind == "lp_dual":
            data["A"] = _matrix(raw["A"], "/A", rows=len(data["b"]))
            dim = len(data["b"])
        else:
            dim = len(data["b"])
            data["Q"] = _matrix(raw["Q"], "/Q", rows=dim, cols=dim)

    if kind == "poly_simplex" and dim < 2:
        raise ProblemFileError("/terms/0/exps", "a simplex needs at least two coordinates")
    if "l" in required:
        data["l"] = _vector(raw["l"], "/l", dim)
        data["u"] = _vector(raw["u"], "/u", dim)
        for j, (lo, hi) in enumerate(zip(data["l"], data["u"])):
            if not lo < hi:
                raise ProblemFileError(f"/u/{j}", "upper bound must exceed the lower bound")
    if kind == "poly_polytope":
        data["B"] = _matrix(raw["B"], "/B", cols=dim)
        data["c"] = _vector(raw["c"], "/c", len(data["B"]))
        if len(data["B"]) >= dim:
            raise ProblemFileError("/B", "need fewer equality rows than variables")
    if kind == "qp_ineq":
        data["A"] = _matrix(raw["A"], "/A", rows=dim)
        data["c"] = _vector(raw["c"], "/c", len(data["A"][0]))
    if kind == "lp_dual":
        cols = len(data["A"][0])
        data["c"] = _vector(raw["c"], "/c", cols)
        if "Q" in raw:
            data["Q"] = _matrix(raw["Q"], "/Q", rows=cols, cols=cols)

    options = _options(raw.get("options", {}))
    if "theta0" in options:
        _check_start_length(kind, data, dim, options["theta0"])
    if isinstance(options.get("sigma"), list):
        # the step-size vector acts on theta2 (one entry per column of A) in the dual route
        expected = len(data["c"]) if kind == "lp_dual" else dim
        if len(options["sigma"]) != expected:
            raise ProblemFileError("/options/sigma", f"expected {expected} entries, found {len(options['sigma'])}")
    return ProblemFile(kind=kind, data=data, options=options, version=version)


def _reject_constant(name):
    raise ValueError(f"non-standard JSON constant {name}")


def parse_problem(text: str) -> ProblemFile:
    """Validate a problem given as JSON text."""
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except ValueError as exc:
        raise ProblemFileError("", f"invalid JSON: {exc}") from None
    return _validate(raw)


def load_problem(path) -> ProblemFile:
    """Read and validate a UTF-8 problem file."""
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ProblemFileError("", f"cannot read {path}: {exc}") from None
    return parse_problem(text)


def serialize_problem(problem: ProblemFile) -> str:
    """JSON text that :func:`parse_problem` maps back to an equal ProblemFile."""
    out = {"version": problem.version, "kind": problem.kind}
    out.update(problem.data)
    if problem.options:
        out["options"] = dict(problem.options)
    return json.dumps(out, indent=2) + "\n"
