"""Core rule IR for structured tensor programs.

A program is an ordered list of rules.  Each rule defines a named collection
(a tensor, its compressed form, its unique set, or its redundancy map) by a
sum of products of factors; a factor is either a comparison over integer
index expressions or an access to another collection.  Summation and
multiplication mean real addition/multiplication for tensor-valued rules and
set union/intersection for unique sets and redundancy maps.  Variables that
appear in a body but not in the rule head are existentially quantified
(marginalized).

All values here are immutable; every operation is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Union

__all__ = [
    "Var", "Const", "Arith", "IndexExpr",
    "Comparison", "Kind", "Access", "Factor", "Product", "Body",
    "Rule", "Program", "Diagnostic", "IrError", "SubstitutionError",
    "expr_vars", "free_vars", "product_vars", "rule_vars",
    "check_well_formed", "alpha_rename", "substitute",
    "fresh_name", "rename_expr", "rename_factor", "rename_product",
    "body_mul", "body_add", "defining_rules", "input_tensors",
]


class IrError(Exception):
    """Malformed IR value or operation."""


class SubstitutionError(IrError):
    """Arity mismatch or missing definition during rule substitution."""


# ---------------------------------------------------------------------------
# index expressions

@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: int


ARITH_OPS = ("+", "-", "*", "/", "%")


@dataclass(frozen=True)
class Arith:
    """Integer arithmetic over indices.  `/` is floor division and `%` a
    nonnegative remainder; only nonnegative index values arise at run time."""

    op: str
    lhs: "IndexExpr"
    rhs: "IndexExpr"

    def __post_init__(self) -> None:
        if self.op not in ARITH_OPS:
            raise IrError(f"unknown arithmetic operator {self.op!r}")


IndexExpr = Union[Var, Const, Arith]


# ---------------------------------------------------------------------------
# factors

CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Comparison:
    lhs: IndexExpr
    op: str
    rhs: IndexExpr

    def __post_init__(self) -> None:
        if self.op not in CMP_OPS:
            raise IrError(f"unknown comparison operator {self.op!r}")


class Kind(Enum):
    """Which facet of a tensor an access refers to."""

    PLAIN = ""
    COMPRESSED = "C"
    UNIQUE = "U"
    REDUNDANCY = "R"

    @property
    def suffix(self) -> str:
        return "" if self is Kind.PLAIN else f":{self.value}"


@dataclass(frozen=True)
class Access:
    """Access to a named collection.  Args are plain variable names only;
    arithmetic in index positions is desugared into fresh variables plus
    equality comparisons before IR construction."""

    tensor: str
    kind: Kind
    args: tuple[str, ...]


Factor = Union[Comparison, Access]
Product = tuple[Factor, ...]          # nonempty
Body = tuple[Product, ...]            # empty tuple denotes the empty sum


@dataclass(frozen=True)
class Rule:
    head: Access
    body: Body


@dataclass
class Program:
    """Ordered rules plus declarations.

    dims maps tensor name to its extent expressions (over size constants);
    sizes is the set of declared symbolic size-constant names; assumes are
    comparisons over size constants taken as facts (structure side
    conditions such as a fixed row index being in range).
    """

    rules: tuple[Rule, ...] = ()
    dims: dict[str, tuple[IndexExpr, ...]] = field(default_factory=dict)
    sizes: tuple[str, ...] = ()
    assumes: tuple[Comparison, ...] = ()

    def with_rules(self, rules: tuple[Rule, ...]) -> "Program":
        return Program(rules, dict(self.dims), self.sizes, self.assumes)


@dataclass(frozen=True)
class Diagnostic:
    rule_index: int | None
    kind: str
    message: str


# ---------------------------------------------------------------------------
# free variables

def expr_vars(e: IndexExpr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    return expr_vars(e.lhs) | expr_vars(e.rhs)


def product_vars(p: Product) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    for f in p:
        out |= free_vars(f)
    return out


def free_vars(x) -> frozenset[str]:
    """Free variables of a body, product, factor, or index expression.

    A product's variables are the union over its factors, a sum's the
    intersection over its summands, a comparison's the union of both sides,
    and an access's the set of its arguments.
    """
    if isinstance(x, (Var, Const, Arith)):
        return expr_vars(x)
    if isinstance(x, Comparison):
        return expr_vars(x.lhs) | expr_vars(x.rhs)
    if isinstance(x, Access):
        return frozenset(x.args)
    if isinstance(x, tuple):
        if not x:
            return frozenset()  # the empty sum binds nothing
        if isinstance(x[0], tuple):  # Body
            out = product_vars(x[0])
            for p in x[1:]:
                out &= product_vars(p)
            return out
        return product_vars(x)  # Product
    raise IrError(f"free_vars: unsupported value {x!r}")


def rule_vars(r: Rule) -> frozenset[str]:
    out = frozenset(r.head.args)
    for p in r.body:
        out |= product_vars(p)
    return out


# ---------------------------------------------------------------------------
# body algebra

def body_mul(a: Body, b: Body) -> Body:
    """Distribute a product of two sums back into sum-of-products form.
    Multiplying by the empty sum yields the empty sum."""
    return tuple(pa + pb for pa in a for pb in b)


def body_add(a: Body, b: Body) -> Body:
    return a + b


# ---------------------------------------------------------------------------
# well-formedness

def defining_rules(p: Program) -> dict[tuple[str, Kind], int]:
    """First defining rule index per (tensor, kind)."""
    out: dict[tuple[str, Kind], int] = {}
    for i, r in enumerate(p.rules):
        out.setdefault((r.head.tensor, r.head.kind), i)
    return out


def input_tensors(p: Program) -> frozenset[str]:
    """Names accessed or declared but never defined by a plain rule."""
    defined = {r.head.tensor for r in p.rules if r.head.kind is Kind.PLAIN}
    seen = set(p.dims)
    for r in p.rules:
        for prod in r.body:
            for f in prod:
                if isinstance(f, Access):
                    seen.add(f.tensor)
    return frozenset(seen - defined)


def tensor_order(p: Program, name: str) -> int | None:
    """Order (number of indices) of a tensor if derivable."""
    if name in p.dims:
        return len(p.dims[name])
    for r in p.rules:
        if r.head.tensor == name and r.head.kind in (Kind.PLAIN, Kind.UNIQUE, Kind.COMPRESSED):
            return len(r.head.args)
    return None


def check_well_formed(p: Program) -> list[Diagnostic]:
    """Structural checks: head containment, per-name arity consistency,
    redundancy arity 2k, single definition per (name, kind), and acyclic
    definition order.  An empty list means the program is well formed."""
    diags: list[Diagnostic] = []
    defined_at: dict[tuple[str, Kind], int] = {}
    arity: dict[tuple[str, Kind], int] = {}

    def note_arity(i: int, name: str, kind: Kind, n: int) -> None:
        key = (name, kind)
        if key in arity and arity[key] != n:
            diags.append(Diagnostic(i, "arity",
                                    f"{name}{kind.suffix} used with arity {n}, previously {arity[key]}"))
        else:
            arity[key] = n

    for name, ds in p.dims.items():
        arity[(name, Kind.PLAIN)] = len(ds)

    for i, r in enumerate(p.rules):
        head = r.head
        if r.body:
            missing = frozenset(head.args) - free_vars(r.body)
            for v in sorted(missing):
                diags.append(Diagnostic(i, "head-containment",
                                        f"head variable {v!r} of {head.tensor}{head.kind.suffix} is not bound in the body"))
        key = (head.tensor, head.kind)
        if key in defined_at:
            diags.append(Diagnostic(i, "redefinition",
                                    f"{head.tensor}{head.kind.suffix} already defined at rule {defined_at[key]}"))
        else:
            defined_at[key] = i

        for name, kind, args in _accesses_of(r):
            if kind is Kind.REDUNDANCY:
                k = tensor_order(p, name)
                if k is not None and len(args) != 2 * k:
                    diags.append(Diagnostic(i, "redundancy-arity",
                                            f"{name}:R takes {2 * k} indices for an order-{k} tensor, got {len(args)}"))
            else:
                note_arity(i, name, kind, len(args))

        for prod in r.body:
            for f in prod:
                if isinstance(f, Access) and f.kind is Kind.PLAIN:
                    dkey = (f.tensor, Kind.PLAIN)
                    if dkey in defined_at and defined_at[dkey] > i:
                        pass  # caught below as a forward reference
        # forward / self references
        for prod in r.body:
            for f in prod:
                if isinstance(f, Access):
                    dkey = (f.tensor, f.kind)
                    at = defined_at.get(dkey)
                    if at == i and f.tensor == head.tensor and f.kind == head.kind:
                        diags.append(Diagnostic(i, "recursion",
                                                f"{head.tensor}{head.kind.suffix} refers to itself"))
    # forward references need a second pass over the final definition table
    all_defined = defining_rules(p)
    for i, r in enumerate(p.rules):
        for prod in r.body:
            for f in prod:
                if isinstance(f, Access):
                    at = all_defined.get((f.tensor, f.kind))
                    if at is not None and at > i:
                        diags.append(Diagnostic(i, "definition-order",
                                                f"{f.tensor}{f.kind.suffix} is defined later (rule {at})"))
    return diags


def _accesses_of(r: Rule) -> Iterator[tuple[str, Kind, tuple[str, ...]]]:
    yield (r.head.tensor, r.head.kind, r.head.args)
    for prod in r.body:
        for f in prod:
            if isinstance(f, Access):
                yield (f.tensor, f.kind, f.args)


# ---------------------------------------------------------------------------
# renaming and substitution

def fresh_name(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    i = 0
    while f"{base}{i}" in taken:
        i += 1
    return f"{base}{i}"


def rename_expr(e: IndexExpr, m: dict[str, str]) -> IndexExpr:
    if isinstance(e, Var):
        return Var(m.get(e.name, e.name))
    if isinstance(e, Const):
        return e
    return Arith(e.op, rename_expr(e.lhs, m), rename_expr(e.rhs, m))


def rename_factor(f: Factor, m: dict[str, str]) -> Factor:
    if isinstance(f, Comparison):
        return Comparison(rename_expr(f.lhs, m), f.op, rename_expr(f.rhs, m))
    return Access(f.tensor, f.kind, tuple(m.get(a, a) for a in f.args))


def rename_product(p: Product, m: dict[str, str]) -> Product:
    return tuple(rename_factor(f, m) for f in p)


def rename_rule(r: Rule, m: dict[str, str]) -> Rule:
    head = Access(r.head.tensor, r.head.kind, tuple(m.get(a, a) for a in r.head.args))
    return Rule(head, tuple(rename_product(p, m) for p in r.body))


def alpha_rename(r: Rule, avoid: frozenset[str] | set[str], keep=()) -> Rule:
    """Rename the rule's variables apart from `avoid`.  Names in `keep`
    (size constants) are never touched.  Fresh names are deterministic:
    base name plus the smallest unused counter suffix."""
    own = rule_vars(r) - frozenset(keep)
    clashes = sorted(own & frozenset(avoid))
    if not clashes:
        return r
    taken = set(avoid) | set(own) | set(keep)
    m: dict[str, str] = {}
    for v in clashes:
        nv = fresh_name(v, taken)
        taken.add(nv)
        m[v] = nv
    return rename_rule(r, m)


def substitute(target: Rule, defn: Rule, protected=()) -> Rule:
    """Inline `defn` into every matching access of `target`'s body.

    The definition's body-only variables are renamed apart from all of the
    target's variables (fresh per occurrence), which establishes the
    disjointness side condition that makes inlining meaning-preserving.
    Products are re-distributed so the result stays in sum-of-products form;
    inlining an empty-sum definition erases the enclosing product.
    """
    protected = frozenset(protected)
    key = (defn.head.tensor, defn.head.kind)
    head_args = defn.head.args
    taken = set(rule_vars(target)) | set(protected)
    out_products: list[Product] = []
    for prod in target.body:
        partial: list[tuple[Factor, ...]] = [()]
        for f in prod:
            if isinstance(f, Access) and (f.tensor, f.kind) == key:
                if len(f.args) != len(head_args):
                    raise SubstitutionError(
                        f"{defn.head.tensor}{defn.head.kind.suffix} has arity "
                        f"{len(head_args)}, occurrence has {len(f.args)}")
                inst = _instantiate(defn, f.args, taken, protected)
                partial = [pp + q for pp in partial for q in inst]
            else:
                partial = [pp + (f,) for pp in partial]
        out_products.extend(p for p in partial if p)
    return Rule(target.head, tuple(out_products))


def _instantiate(defn: Rule, args: tuple[str, ...], taken: set[str],
                 protected: frozenset[str]) -> Body:
    """Definition body with head variables bound to `args` and body-only
    variables freshened against `taken` (which grows as names are used)."""
    body_only = sorted((rule_vars(defn) - frozenset(defn.head.args)) - protected)
    m: dict[str, str] = dict(zip(defn.head.args, args))
    for v in body_only:
        nv = fresh_name(v, taken | set(m.values()))
        taken.add(nv)
        m[v] = nv
    return tuple(rename_product(p, m) for p in defn.body)
