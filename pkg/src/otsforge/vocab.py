"""Operator vocabulary: symbols, arities, constant slots and generation constraints.

Token id 0 is reserved for the 'end' filler used by the BFS sequence codec and
is never an operator. Operator ids are dense in 1..N; special tokens used by
sequence models occupy N+1..N+Ñ.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

from .errors import NotAnOperator, SchemaMismatch, UnknownSymbol

END_ID = 0

SPECIAL_TOKEN_NAMES = ("[CLS]", "[ENC]", "[BOS]", "[SEP]", "[PAD]", "[MASK]")


@dataclass(frozen=True)
class OperatorSpec:
    """One vocabulary entry with its generation constraints.

    ``domain`` is the admissible open/closed interval of the (single) real
    argument for unary operators that are not total on the reals; purely
    informational for evaluation, which encodes violations as NaN.
    """

    name: str
    token_id: int
    arity: int
    n_constants: int = 0
    domain: tuple[float, float] | None = None
    max_consecutive: int | None = None
    forbidden_adjacent: frozenset[str] = field(default_factory=frozenset)
    max_count: int | None = None


@dataclass(frozen=True)
class Vocab:
    """Immutable operator table plus the extended special-token ids."""

    specs: tuple[OperatorSpec, ...]
    special_tokens: tuple[str, ...] = SPECIAL_TOKEN_NAMES
    end_id: int = END_ID

    def __post_init__(self):
        ids = sorted(s.token_id for s in self.specs)
        if ids != list(range(1, len(self.specs) + 1)):
            raise ValueError("operator ids must be unique and dense in 1..N")

    @property
    def n_operators(self) -> int:
        return len(self.specs)

    @cached_property
    def special_ids(self) -> dict[str, int]:
        n = self.n_operators
        return {name: n + 1 + i for i, name in enumerate(self.special_tokens)}

    @cached_property
    def _by_name(self) -> dict[str, OperatorSpec]:
        return {s.name: s for s in self.specs}

    @cached_property
    def _by_id(self) -> dict[int, OperatorSpec]:
        return {s.token_id: s for s in self.specs}

    def __contains__(self, key) -> bool:
        try:
            lookup(self, key)
            return True
        except (UnknownSymbol, NotAnOperator):
            return False

    def by_arity(self, arity: int) -> tuple[OperatorSpec, ...]:
        return tuple(s for s in self.specs if s.arity == arity)

    def variables(self, n_vars: int) -> tuple[OperatorSpec, ...]:
        names = tuple(f"x{i}" for i in range(n_vars))
        return tuple(lookup(self, name) for name in names)


# Canonical table. The unary chain cap, adjacency bans and frequency caps are
# generation-time constraints; all are overridable through build_vocab().
_DEFAULT_TABLE = (
    # name, arity, n_constants, domain, forbidden_adjacent, max_count
    ("add", 2, 0, None, (), None),
    ("sub", 2, 0, None, (), None),
    ("mul", 2, 0, None, (), None),
    ("div", 2, 0, None, (), None),
    ("pow", 2, 0, None, (), None),  # exponent child restricted to C at generation time
    ("neg", 1, 0, None, ("neg",), None),
    ("inv", 1, 0, None, ("inv",), None),
    ("sin", 1, 0, None, (), None),
    ("cos", 1, 0, None, (), None),
    ("tan", 1, 0, None, (), None),
    ("exp", 1, 0, None, ("exp", "log"), 2),
    ("log", 1, 0, (0.0, float("inf")), ("exp",), 2),
    ("sqrt", 1, 0, (0.0, float("inf")), (), None),
    ("abs", 1, 0, None, (), None),
    ("L", 1, 2, None, (), None),  # affine wrapper: a*child + b, constants (a, b)
    ("C", 0, 1, None, (), None),
    ("x0", 0, 0, None, (), None),
    ("x1", 0, 0, None, (), None),
)

DEFAULT_UNARY_MAX_CONSECUTIVE = 3


def build_default_vocab() -> Vocab:
    """The canonical 18-operator table with default generation constraints."""
    return build_vocab()


@lru_cache(maxsize=1)
def default_vocab() -> Vocab:
    """Shared immutable instance of the canonical table."""
    return build_vocab()


def build_vocab(overrides: dict | None = None) -> Vocab:
    """Build the canonical vocab, optionally overriding per-operator constraints.

    ``overrides`` maps operator name to a dict with any of ``max_consecutive``,
    ``max_count``, ``forbidden_adjacent`` (list of names).
    """
    specs = []
    for i, (name, arity, n_consts, domain, forbidden, max_count) in enumerate(_DEFAULT_TABLE):
        spec = OperatorSpec(
            name=name,
            token_id=i + 1,
            arity=arity,
            n_constants=n_consts,
            domain=domain,
            max_consecutive=DEFAULT_UNARY_MAX_CONSECUTIVE if arity == 1 else None,
            forbidden_adjacent=frozenset(forbidden),
            max_count=max_count,
        )
        if overrides and name in overrides:
            ov = dict(overrides[name])
            if "forbidden_adjacent" in ov:
                ov["forbidden_adjacent"] = frozenset(ov["forbidden_adjacent"])
            spec = replace(spec, **ov)
        specs.append(spec)
    return Vocab(specs=tuple(specs))


def lookup(vocab: Vocab, key: str | int) -> OperatorSpec:
    """Resolve an operator by name or token id.

    Raises NotAnOperator for id 0 and special-token ids, UnknownSymbol for
    anything not in the table.
    """
    if isinstance(key, str):
        spec = vocab._by_name.get(key)
        if spec is None:
            raise UnknownSymbol(f"unknown operator name {key!r}")
        return spec
    key = int(key)
    spec = vocab._by_id.get(key)
    if spec is not None:
        return spec
    if key == vocab.end_id:
        raise NotAnOperator("id 0 is the 'end' filler, not an operator")
    if key in vocab.special_ids.values():
        raise NotAnOperator(f"id {key} is a special token, not an operator")
    raise UnknownSymbol(f"unknown operator id {key}")


def vocab_to_json(vocab: Vocab) -> str:
    """Serialize the table to the JSON document shared with downstream consumers."""
    doc = {
        "version": 1,
        "end_id": vocab.end_id,
        "n_operators": vocab.n_operators,
        "operators": [
            {
                "name": s.name,
                "id": s.token_id,
                "arity": s.arity,
                "n_constants": s.n_constants,
                "domain": _domain_to_json(s.domain),
                "max_consecutive": s.max_consecutive,
                "forbidden_adjacent": sorted(s.forbidden_adjacent),
                "max_count": s.max_count,
            }
            for s in vocab.specs
        ],
        "special_tokens": [
            {"name": name, "id": tid} for name, tid in vocab.special_ids.items()
        ],
    }
    return json.dumps(doc, indent=2, allow_nan=False, default=_json_inf) + "\n"


def _json_inf(obj):
    raise TypeError(f"not JSON serializable: {obj!r}")


def _domain_to_json(domain):
    # JSON has no Infinity literal; unbounded ends serialize as null.
    if domain is None:
        return None
    lo, hi = domain
    return [None if lo == float("-inf") else lo, None if hi == float("inf") else hi]


def _domain_from_json(raw):
    if raw is None:
        return None
    lo, hi = raw
    return (float("-inf") if lo is None else lo, float("inf") if hi is None else hi)


def vocab_from_json(text: str) -> Vocab:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise SchemaMismatch(f"unsupported vocab version {doc.get('version')!r}")
    specs = tuple(
        OperatorSpec(
            name=op["name"],
            token_id=op["id"],
            arity=op["arity"],
            n_constants=op["n_constants"],
            domain=_domain_from_json(op.get("domain")),
            max_consecutive=op.get("max_consecutive"),
            forbidden_adjacent=frozenset(op.get("forbidden_adjacent", ())),
            max_count=op.get("max_count"),
        )
        for op in sorted(doc["operators"], key=lambda o: o["id"])
    )
    names = tuple(t["name"] for t in doc["special_tokens"])
    return Vocab(specs=specs, special_tokens=names, end_id=doc["end_id"])
