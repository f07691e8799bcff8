"""Structured linear-algebra front end.

Translates a small LA expression language into rule programs (one rule per
operation node), instantiates the catalog of well-known matrix structures,
and classifies inferred structures back to named tags.  Self outer products
of concatenated vectors are decomposed into distinct blocks first, so a
covariance-style expression compiles to one flat power per interaction
degree instead of recomputing equal blocks in different layouts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .ir import (
    Access, Arith, Body, Comparison, Const, IndexExpr, Kind, Product,
    Program, Rule, Var, rename_rule,
)
from .optimizer import canonicalize, poly_of, simplify_body, sort_key
from .structure import StructureInfo, index_names, primed

__all__ = [
    "Input", "Transpose", "Add", "MatMul", "Hadamard", "Kron", "DirectSum",
    "Vectorize", "ConcatH", "ConcatV", "LAExpr", "ShapeError",
    "StructureTag", "TAG_NAMES", "dims_of", "translate", "Translation",
    "instantiate_structure", "classify_structure", "parse_la", "LAFile",
]


class ShapeError(Exception):
    pass


# ---------------------------------------------------------------------------
# expression language

@dataclass(frozen=True)
class Input:
    name: str
    shape: tuple[IndexExpr, ...]


@dataclass(frozen=True)
class Transpose:
    e: "LAExpr"


@dataclass(frozen=True)
class Add:
    a: "LAExpr"
    b: "LAExpr"


@dataclass(frozen=True)
class MatMul:
    a: "LAExpr"
    b: "LAExpr"


@dataclass(frozen=True)
class Hadamard:
    a: "LAExpr"
    b: "LAExpr"


@dataclass(frozen=True)
class Kron:
    """Kronecker product of matrices; outer product of vectors."""

    a: "LAExpr"
    b: "LAExpr"


@dataclass(frozen=True)
class DirectSum:
    """Block-diagonal sum of matrices; concatenation of vectors."""

    a: "LAExpr"
    b: "LAExpr"


@dataclass(frozen=True)
class Vectorize:
    e: "LAExpr"


@dataclass(frozen=True)
class ConcatH:
    a: "LAExpr"
    b: "LAExpr"


@dataclass(frozen=True)
class ConcatV:
    a: "LAExpr"
    b: "LAExpr"


LAExpr = (Input | Transpose | Add | MatMul | Hadamard | Kron | DirectSum
          | Vectorize | ConcatH | ConcatV)


def _mul(a: IndexExpr, b: IndexExpr) -> IndexExpr:
    return Arith("*", a, b)


def _add(a: IndexExpr, b: IndexExpr) -> IndexExpr:
    return Arith("+", a, b)


def _same(a: IndexExpr, b: IndexExpr) -> bool:
    return poly_of(a) == poly_of(b)


def dims_of(e: LAExpr) -> tuple[IndexExpr, ...]:
    if isinstance(e, Input):
        return e.shape
    if isinstance(e, Transpose):
        d = dims_of(e.e)
        if len(d) != 2:
            raise ShapeError("transpose needs a matrix")
        return (d[1], d[0])
    if isinstance(e, (Add, Hadamard)):
        da, db = dims_of(e.a), dims_of(e.b)
        if len(da) != len(db) or not all(_same(x, y) for x, y in zip(da, db)):
            raise ShapeError(f"shape mismatch in elementwise op: {da} vs {db}")
        return da
    if isinstance(e, MatMul):
        da, db = dims_of(e.a), dims_of(e.b)
        if len(da) == 2 and len(db) == 2:
            if not _same(da[1], db[0]):
                raise ShapeError("inner dimensions disagree")
            return (da[0], db[1])
        if len(da) == 2 and len(db) == 1:
            if not _same(da[1], db[0]):
                raise ShapeError("inner dimensions disagree")
            return (da[0],)
        if len(da) == 1 and len(db) == 1:
            if not _same(da[0], db[0]):
                raise ShapeError("inner dimensions disagree")
            return ()
        raise ShapeError("matmul over unsupported shapes")
    if isinstance(e, Kron):
        da, db = dims_of(e.a), dims_of(e.b)
        if len(da) == 2 and len(db) == 2:
            return (_mul(da[0], db[0]), _mul(da[1], db[1]))
        if len(da) == 1 and len(db) == 1:
            return (da[0], db[0])
        raise ShapeError("kron needs two matrices or two vectors")
    if isinstance(e, DirectSum):
        da, db = dims_of(e.a), dims_of(e.b)
        if len(da) == 2 and len(db) == 2:
            return (_add(da[0], db[0]), _add(da[1], db[1]))
        if len(da) == 1 and len(db) == 1:
            return (_add(da[0], db[0]),)
        raise ShapeError("direct sum needs equal orders")
    if isinstance(e, Vectorize):
        d = dims_of(e.e)
        if len(d) != 2:
            raise ShapeError("vec needs a matrix")
        return (_mul(d[0], d[1]),)
    if isinstance(e, ConcatH):
        da, db = dims_of(e.a), dims_of(e.b)
        if len(da) != 2 or len(db) != 2 or not _same(da[0], db[0]):
            raise ShapeError("hcat needs matrices with equal row counts")
        return (da[0], _add(da[1], db[1]))
    if isinstance(e, ConcatV):
        da, db = dims_of(e.a), dims_of(e.b)
        if len(da) != 2 or len(db) != 2 or not _same(da[1], db[1]):
            raise ShapeError("vcat needs matrices with equal column counts")
        return (_add(da[0], db[0]), da[1])
    raise ShapeError(f"unknown expression {e!r}")


# ---------------------------------------------------------------------------
# translation

@dataclass
class Translation:
    program: Program
    output: str
    blocks: list[str] = field(default_factory=list)  # distinct block tensors


class _Emitter:
    def __init__(self, out_name: str):
        self.rules: list[Rule] = []
        self.dims: dict[str, tuple[IndexExpr, ...]] = {}
        self.sizes: dict[str, None] = {}
        self.counter = 0
        self.out_name = out_name
        self.cache: dict[LAExpr, str] = {}

    def fresh(self) -> str:
        name = f"%t{self.counter}"
        self.counter += 1
        return name

    def declare(self, name: str, dims: tuple[IndexExpr, ...]) -> None:
        self.dims[name] = dims
        for d in dims:
            for v in sorted(_size_names(d)):
                self.sizes.setdefault(v)

    def rule(self, name: str, args: tuple[str, ...], body: Body,
             dims: tuple[IndexExpr, ...]) -> None:
        self.declare(name, dims)
        self.rules.append(Rule(Access(name, Kind.PLAIN, args), body))


def _size_names(e: IndexExpr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    return _size_names(e.lhs) | _size_names(e.rhs)


def translate(e: LAExpr, out_name: str = "out") -> Translation:
    """One rule per operation node; Kronecker/direct-sum index arithmetic is
    desugared into fresh component variables constrained by equalities."""
    em = _Emitter(out_name)
    blocks: list[str] = []
    if isinstance(e, Kron) and e.a == e.b and len(dims_of(e.a)) == 1:
        decomposed = _vector_blocks(e.a)
        if len(decomposed) > 1:
            name = _emit_self_outer_blocks(em, e.a, decomposed, out_name, blocks)
            return _finish(em, name, blocks)
    name = _emit(em, e, out_name)
    return _finish(em, name, blocks)


def _finish(em: _Emitter, name: str, blocks: list[str]) -> Translation:
    prog = Program(tuple(em.rules), em.dims, tuple(em.sizes), ())
    return Translation(prog, name, blocks)


def _vars(k: int, taken: set[str]) -> tuple[str, ...]:
    if k == 0:
        return ()
    out = []
    pool = list("ijklpqst") + [f"x{n}" for n in range(1, 30)]
    for cand in pool:
        if cand not in taken:
            out.append(cand)
            taken.add(cand)
        if len(out) == k:
            return tuple(out)
    raise ShapeError("out of index names")


def _emit(em: _Emitter, e: LAExpr, name: str | None = None) -> str:
    """Emit rules computing e; returns the tensor name.  Children are
    emitted before index variables are drawn, so size constants declared
    anywhere in the tree never collide with index names."""
    if isinstance(e, Input):
        em.declare(e.name, e.shape)
        return e.name
    if name is None:
        cached = em.cache.get(e)
        if cached is not None:
            return cached
        name = em.fresh()
    em.cache[e] = name
    dims = dims_of(e)

    children = [c for c in (getattr(e, "a", None), getattr(e, "b", None),
                            getattr(e, "e", None)) if c is not None]
    sub = [_emit(em, c) for c in children]

    used: set[str] = set()

    def fvars(k: int) -> tuple[str, ...]:
        out = _vars(k, set(em.sizes) | used)
        used.update(out)
        return out

    xs = fvars(len(dims))

    if isinstance(e, Transpose):
        (a,) = sub
        em.rule(name, xs, ((Access(a, Kind.PLAIN, (xs[1], xs[0])),),), dims)
    elif isinstance(e, Add):
        a, b = sub
        em.rule(name, xs, ((Access(a, Kind.PLAIN, xs),), (Access(b, Kind.PLAIN, xs),)), dims)
    elif isinstance(e, Hadamard):
        a, b = sub
        em.rule(name, xs, ((Access(a, Kind.PLAIN, xs), Access(b, Kind.PLAIN, xs)),), dims)
    elif isinstance(e, MatMul):
        a, b = sub
        da, db = dims_of(e.a), dims_of(e.b)
        (k,) = fvars(1)
        if len(da) == 2 and len(db) == 2:
            body = ((Access(a, Kind.PLAIN, (xs[0], k)), Access(b, Kind.PLAIN, (k, xs[1]))),)
        elif len(da) == 2:
            body = ((Access(a, Kind.PLAIN, (xs[0], k)), Access(b, Kind.PLAIN, (k,))),)
        else:
            body = ((Access(a, Kind.PLAIN, (k,)), Access(b, Kind.PLAIN, (k,))),)
        em.rule(name, xs, body, dims)
    elif isinstance(e, Kron):
        a, b = sub
        da, db = dims_of(e.a), dims_of(e.b)
        if len(da) == 1:
            body = ((Access(a, Kind.PLAIN, (xs[0],)), Access(b, Kind.PLAIN, (xs[1],))),)
            em.rule(name, xs, body, dims)
        else:
            ia, ja = fvars(2)
            ib, jb = fvars(2)
            comps = (
                Comparison(Var(xs[0]), "=", _add(_mul(Var(ia), db[0]), Var(ib))),
                Comparison(Var(xs[1]), "=", _add(_mul(Var(ja), db[1]), Var(jb))),
            )
            body = ((Access(a, Kind.PLAIN, (ia, ja)), Access(b, Kind.PLAIN, (ib, jb))) + comps,)
            em.rule(name, xs, body, dims)
    elif isinstance(e, DirectSum):
        a, b = sub
        da = dims_of(e.a)
        ys = fvars(len(dims))
        comps = tuple(Comparison(Var(y), "=", Arith("-", Var(x), d))
                      for y, x, d in zip(ys, xs, da))
        body = ((Access(a, Kind.PLAIN, xs),), (Access(b, Kind.PLAIN, ys),) + comps)
        em.rule(name, xs, body, dims)
    elif isinstance(e, Vectorize):
        (a,) = sub
        da = dims_of(e.e)
        r, c = fvars(2)
        comps = (Comparison(Var(xs[0]), "=", _add(_mul(Var(r), da[1]), Var(c))),)
        em.rule(name, xs, ((Access(a, Kind.PLAIN, (r, c)),) + comps,), dims)
    elif isinstance(e, (ConcatH, ConcatV)):
        a, b = sub
        da = dims_of(e.a)
        pos = 1 if isinstance(e, ConcatH) else 0
        (y,) = fvars(1)
        ys = list(xs)
        ys[pos] = y
        comps = (Comparison(Var(y), "=", Arith("-", Var(xs[pos]), da[pos])),)
        body = ((Access(a, Kind.PLAIN, xs),), (Access(b, Kind.PLAIN, tuple(ys)),) + comps)
        em.rule(name, xs, body, dims)
    else:
        raise ShapeError(f"cannot translate {e!r}")
    return name


# --- self outer products of concatenations --------------------------------

@dataclass(frozen=True)
class _Block:
    offset: IndexExpr
    factors: tuple[LAExpr, ...]   # vector factors; their outer product, flattened


def _vector_blocks(e: LAExpr) -> list[_Block]:
    if isinstance(e, DirectSum) and len(dims_of(e.a)) == 1:
        left = _vector_blocks(e.a)
        right = _vector_blocks(e.b)
        off = dims_of(e.a)[0]
        shifted = [_Block(_add(b.offset, off) if not _is_zero(b.offset) else off, b.factors)
                   for b in right]
        return left + shifted
    return [_Block(Const(0), tuple(_flatten_factors(e)))]


def _is_zero(e: IndexExpr) -> bool:
    return isinstance(e, Const) and e.value == 0


def _flatten_factors(e: LAExpr) -> list[LAExpr]:
    """A vector expression as a list of vector factors whose flattened outer
    product it equals (row-major)."""
    if isinstance(e, Vectorize):
        inner = e.e
        if isinstance(inner, Kron):
            da, db = dims_of(inner.a), dims_of(inner.b)
            if len(da) <= 2 and len(db) <= 2:
                return _flatten_factors_any(inner.a) + _flatten_factors_any(inner.b)
        raise ShapeError("vec() of a non-outer-product is not decomposable")
    return [e]


def _flatten_factors_any(e: LAExpr) -> list[LAExpr]:
    if len(dims_of(e)) == 1:
        return _flatten_factors(e)
    if isinstance(e, Kron):
        return _flatten_factors_any(e.a) + _flatten_factors_any(e.b)
    raise ShapeError("matrix factor is not an outer product")


def _emit_self_outer_blocks(em: _Emitter, vec: LAExpr, blocks: list[_Block],
                            out_name: str, kept_out: list[str]) -> str:
    """Emit one tensor per distinct block pair (by factor multiset) plus the
    assembly rule mapping block cells into the full result."""
    dims = dims_of(Kron(vec, vec))
    kept: dict[tuple, tuple[str, tuple[LAExpr, ...]]] = {}
    terms: list[tuple[_Block, _Block, str, tuple[LAExpr, ...]]] = []
    n_kept = 0
    for rb in blocks:
        for cb in blocks:
            fs = rb.factors + cb.factors
            key = tuple(sorted((repr(f) for f in fs)))
            if key not in kept:
                n_kept += 1
                name = f"{out_name}{n_kept}"
                kept[key] = (name, fs)
                kept_out.append(name)
                fdims = tuple(dims_of(f)[0] for f in fs)
                fnames = [_emit(em, f) for f in fs]
                xs = _vars(len(fs), set(em.sizes))
                prod = tuple(Access(fn, Kind.PLAIN, (x,))
                             for fn, x in zip(fnames, xs))
                em.rule(name, xs, (prod,), fdims)
            terms.append((rb, cb, kept[key][0], kept[key][1]))

    taken = set(em.sizes)
    i, j = _vars(2, taken)
    body = []
    for rb, cb, tname, torder in terms:
        fs = rb.factors + cb.factors
        avail = list(range(len(fs)))
        perm = []
        for want in torder:
            for idx in avail:
                if fs[idx] == want:
                    perm.append(idx)
                    avail.remove(idx)
                    break
        cell_vars = _vars(len(fs), set(taken))
        args = tuple(cell_vars[p] for p in perm)
        row_lin = _linearize([dims_of(f)[0] for f in rb.factors],
                             cell_vars[:len(rb.factors)])
        col_lin = _linearize([dims_of(f)[0] for f in cb.factors],
                             cell_vars[len(rb.factors):])
        comps = (
            Comparison(Var(i), "=", _offset(rb.offset, row_lin)),
            Comparison(Var(j), "=", _offset(cb.offset, col_lin)),
        )
        body.append((Access(tname, Kind.PLAIN, args),) + comps)
    em.rule(out_name, (i, j), tuple(body), dims)
    return out_name


def _offset(off: IndexExpr, lin: IndexExpr) -> IndexExpr:
    return lin if _is_zero(off) else _add(off, lin)


def _linearize(lens: list[IndexExpr], vs: tuple[str, ...]) -> IndexExpr:
    out: IndexExpr = Var(vs[0])
    for ln, v in zip(lens[1:], vs[1:]):
        out = _add(_mul(out, ln), Var(v))
    return out


# ---------------------------------------------------------------------------
# the structure catalog

TAG_NAMES = ("G", "S", "D", "Row", "Col", "Singular", "Z", "UpperTriangular", "Custom")


@dataclass(frozen=True)
class StructureTag:
    kind: str
    params: tuple[IndexExpr, ...] = ()

    def __post_init__(self):
        if self.kind not in TAG_NAMES:
            raise ShapeError(f"unknown structure tag {self.kind}")

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        from .textio import _print_expr
        return f"{self.kind}({', '.join(_print_expr(p) for p in self.params)})"


def instantiate_structure(tag: StructureTag, dims: tuple[IndexExpr, ...],
                          name: str = "T") -> tuple[StructureInfo, tuple[Comparison, ...]]:
    """The catalog template for `tag` on a tensor of the given extents,
    plus the side conditions (parameter in range, squareness captured by
    construction) to be assumed during simplification."""
    k = len(dims)
    xs = index_names(k)
    ps = primed(xs)
    assumes: tuple[Comparison, ...] = ()

    def box(vs=xs, ds=dims) -> Product:
        out: Product = ()
        for v, d in zip(vs, ds):
            out += (Comparison(Const(0), "<=", Var(v)), Comparison(Var(v), "<", d))
        return out

    empty_r = Rule(Access(name, Kind.REDUNDANCY, xs + ps), ())

    if tag.kind == "Z":
        return StructureInfo(Rule(Access(name, Kind.UNIQUE, xs), ()), empty_r, dims), ()
    if tag.kind == "G":
        u = Rule(Access(name, Kind.UNIQUE, xs), (box(),))
        return StructureInfo(u, empty_r, dims), ()
    if tag.kind == "Singular":
        if len(tag.params) != k:
            raise ShapeError(f"Singular needs {k} position parameters")
        prod = tuple(Comparison(Var(v), "=", p) for v, p in zip(xs, tag.params))
        for p, d in zip(tag.params, dims):
            assumes += (Comparison(Const(0), "<=", p), Comparison(p, "<", d))
        return StructureInfo(Rule(Access(name, Kind.UNIQUE, xs), (prod,)), empty_r, dims), assumes
    if k != 2:
        raise ShapeError(f"structure {tag.kind} needs a matrix")
    i, j = xs
    if tag.kind == "D":
        if not _same(dims[0], dims[1]):
            raise ShapeError("diagonal structure needs a square matrix")
        prod = (Comparison(Const(0), "<=", Var(i)), Comparison(Var(i), "<", dims[0]),
                Comparison(Var(i), "=", Var(j)))
        return StructureInfo(Rule(Access(name, Kind.UNIQUE, xs), (prod,)), empty_r, dims), ()
    if tag.kind == "Row":
        (r,) = tag.params
        prod = (Comparison(Var(i), "=", r),
                Comparison(Const(0), "<=", Var(j)), Comparison(Var(j), "<", dims[1]))
        assumes = (Comparison(Const(0), "<=", r), Comparison(r, "<", dims[0]))
        return StructureInfo(Rule(Access(name, Kind.UNIQUE, xs), (prod,)), empty_r, dims), assumes
    if tag.kind == "Col":
        (c,) = tag.params
        prod = (Comparison(Const(0), "<=", Var(i)), Comparison(Var(i), "<", dims[0]),
                Comparison(Var(j), "=", c))
        assumes = (Comparison(Const(0), "<=", c), Comparison(c, "<", dims[1]))
        return StructureInfo(Rule(Access(name, Kind.UNIQUE, xs), (prod,)), empty_r, dims), assumes
    if tag.kind in ("S", "UpperTriangular"):
        if not _same(dims[0], dims[1]):
            raise ShapeError(f"{tag.kind} needs a square matrix")
        n = dims[0]
        uprod = (Comparison(Const(0), "<=", Var(i)), Comparison(Var(i), "<=", Var(j)),
                 Comparison(Var(j), "<", n))
        u = Rule(Access(name, Kind.UNIQUE, xs), (uprod,))
        if tag.kind == "UpperTriangular":
            return StructureInfo(u, empty_r, dims), ()
        ip, jp = ps
        rprod = (Comparison(Const(0), "<=", Var(j)), Comparison(Var(j), "<", Var(i)),
                 Comparison(Var(i), "<", n),
                 Comparison(Var(ip), "=", Var(j)), Comparison(Var(jp), "=", Var(i)))
        r = Rule(Access(name, Kind.REDUNDANCY, xs + ps), (rprod,))
        return StructureInfo(u, r, dims), ()
    raise ShapeError(f"cannot instantiate tag {tag.kind}")


def classify_structure(s: StructureInfo) -> StructureTag:
    """Match a simplified structure against the catalog templates up to
    variable renaming and comparison normal form; Custom when nothing
    matches."""
    if not s.unique.body:
        return StructureTag("Z")
    k = s.order
    candidates: list[StructureTag] = []
    if k == 2:
        params = _equality_params(s)
        candidates = [StructureTag("D"), StructureTag("S"), StructureTag("UpperTriangular"),
                      StructureTag("G")]
        if params.get(0) is not None and params.get(1) is not None:
            candidates.insert(0, StructureTag("Singular", (params[0], params[1])))
        if params.get(0) is not None:
            candidates.insert(0, StructureTag("Row", (params[0],)))
        if params.get(1) is not None:
            candidates.insert(0, StructureTag("Col", (params[1],)))
    elif k == 1:
        candidates = [StructureTag("G")]
        params = _equality_params(s)
        if params.get(0) is not None:
            candidates.insert(0, StructureTag("Singular", (params[0],)))
    for tag in candidates:
        try:
            template, _ = instantiate_structure(tag, s.dims, s.tensor)
        except ShapeError:
            continue
        if _structures_match(s, template):
            return tag
    return StructureTag("Custom")


def _equality_params(s: StructureInfo) -> dict[int, IndexExpr]:
    """Constant-ish right sides of per-coordinate equalities in a
    single-product unique set."""
    out: dict[int, IndexExpr] = {}
    if len(s.unique.body) != 1:
        return out
    args = s.unique.head.args
    own = set(args)
    for f in s.unique.body[0]:
        if isinstance(f, Comparison) and f.op == "=":
            for side, other in ((f.lhs, f.rhs), (f.rhs, f.lhs)):
                if isinstance(side, Var) and side.name in own:
                    from .ir import expr_vars
                    if not (expr_vars(other) & own):
                        out[args.index(side.name)] = other
    return out


def _structures_match(s: StructureInfo, t: StructureInfo) -> bool:
    m = dict(zip(t.unique.head.args, s.unique.head.args))
    m.update(dict(zip(t.redundancy.head.args, s.redundancy.head.args)))
    tu = canonicalize(simplify_body(rename_rule(t.unique, m).body,
                                    s.unique.head.args, frozenset(_poly_sizes(s)), ()))
    tr = canonicalize(simplify_body(rename_rule(t.redundancy, m).body,
                                    s.redundancy.head.args, frozenset(_poly_sizes(s)), ()))
    su = canonicalize(s.unique.body)
    sr = canonicalize(s.redundancy.body)
    return su == tu and sr == tr


def _poly_sizes(s: StructureInfo) -> set[str]:
    out: set[str] = set()
    for d in s.dims:
        out |= _size_names(d)
    return out


# ---------------------------------------------------------------------------
# front-end pipeline

def analyze(t: Translation, tags: dict[str, StructureTag] | None = None):
    """Inline intermediates (keeping inputs, blocks, and the output), seed
    declared input structures, and infer everything else.  Returns the
    inlined program and the inference context."""
    from .inference import infer_structures
    from .optimizer import inline_program

    tags = tags or {}
    p = t.program
    defined = {r.head.tensor for r in p.rules}
    inputs = {name for name in p.dims if name not in defined}
    keep = inputs | set(t.blocks) | {t.output}
    inlined = inline_program(p, keep)
    seeds: dict[str, StructureInfo] = {}
    assumes: tuple[Comparison, ...] = inlined.assumes
    for name, tag in tags.items():
        if name not in p.dims:
            raise ShapeError(f"@struct for unknown input {name}")
        info, asum = instantiate_structure(tag, p.dims[name], name)
        seeds[name] = info
        assumes += asum
    inlined = Program(inlined.rules, dict(inlined.dims), inlined.sizes, assumes)
    ctx = infer_structures(inlined, seeds)
    return inlined, ctx


# ---------------------------------------------------------------------------
# LA text files

@dataclass
class LAFile:
    expr: LAExpr
    out_name: str
    structs: dict[str, StructureTag]
    inputs: dict[str, Input]


_LA_TOKEN = re.compile(r"\s*(\^T|[A-Za-z_][A-Za-z0-9_]*|\d+|[().,*+=])")


def parse_la(text: str) -> LAFile:
    """Parse the LA surface syntax:

        @size n
        @vector f(n)
        @matrix A(n, m)
        @struct A = S          # or D, G, Z, UT, Row(0), Col(2), Sing(1, 2)
        out = (f dsum vec(f kron f)) kron (f dsum vec(f kron f))

    Operators: `.` (matmul/dot), `had`, `kron`, `+`, `dsum`, `hcat`, `vcat`,
    postfix `^T`, and `vec(...)`.
    """
    from .textio import ParseError, _tokenize, _Cursor, _parse_index_expr

    inputs: dict[str, Input] = {}
    structs: dict[str, StructureTag] = {}
    sizes: set[str] = set()
    defn: tuple[str, str] | None = None
    tag_alias = {"UT": "UpperTriangular", "Sing": "Singular"}

    for lineno, raw in enumerate(text.splitlines(), 1):
        src = raw.split("#", 1)[0].strip()
        if not src:
            continue
        if src.startswith("@"):
            cur = _Cursor(_tokenize(src, lineno), lineno)
            cur.expect("@")
            word = cur.next()[1]
            if word == "size":
                sizes.add(cur.next()[1])
            elif word in ("vector", "matrix"):
                name = cur.next()[1]
                cur.expect("(")
                ds = [_parse_index_expr(cur)]
                while cur.at(","):
                    cur.next()
                    ds.append(_parse_index_expr(cur))
                cur.expect(")")
                want = 1 if word == "vector" else 2
                if len(ds) != want:
                    raise ParseError(f"@{word} takes {want} extent(s)", lineno, 1)
                inputs[name] = Input(name, tuple(ds))
            elif word == "struct":
                name = cur.next()[1]
                cur.expect("=")
                tname = cur.next()[1]
                tname = tag_alias.get(tname, tname)
                params: tuple[IndexExpr, ...] = ()
                if cur.at("("):
                    cur.next()
                    ps = [_parse_index_expr(cur)]
                    while cur.at(","):
                        cur.next()
                        ps.append(_parse_index_expr(cur))
                    cur.expect(")")
                    params = tuple(ps)
                structs[name] = StructureTag(tname, params)
            else:
                raise ParseError(f"unknown declaration @{word}", lineno, 1)
        else:
            if "=" not in src:
                raise ParseError("expected `name = expression`", lineno, 1)
            lhs, rhs = src.split("=", 1)
            defn = (lhs.strip(), rhs.strip())

    if defn is None:
        raise ShapeError("no output definition found")
    expr = _parse_la_expr(defn[1], inputs)
    return LAFile(expr, defn[0], structs, inputs)


def _parse_la_expr(text: str, inputs: dict[str, Input]) -> LAExpr:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _LA_TOKEN.match(text, pos)
        if not m:
            raise ShapeError(f"bad LA syntax near {text[pos:pos+10]!r}")
        tokens.append(m.group(1))
        pos = m.end()
    idx = 0

    def peek():
        return tokens[idx] if idx < len(tokens) else None

    def take():
        nonlocal idx
        t = peek()
        idx += 1
        return t

    def atom() -> LAExpr:
        t = take()
        if t == "(":
            e = sum_level()
            if take() != ")":
                raise ShapeError("missing )")
        elif t == "vec":
            if take() != "(":
                raise ShapeError("vec needs (")
            e = sum_level()
            if take() != ")":
                raise ShapeError("missing )")
            e = Vectorize(e)
        elif t is not None and t in inputs:
            e = inputs[t]
        else:
            raise ShapeError(f"unknown operand {t!r}")
        while peek() == "^T":
            take()
            e = Transpose(e)
        return e

    def mul_level() -> LAExpr:
        e = atom()
        while peek() in (".", "had", "kron", "*"):
            op = take()
            rhs = atom()
            if op in (".", "*"):
                e = MatMul(e, rhs)
            elif op == "had":
                e = Hadamard(e, rhs)
            else:
                e = Kron(e, rhs)
        return e

    def sum_level() -> LAExpr:
        e = mul_level()
        while peek() in ("+", "dsum", "hcat", "vcat"):
            op = take()
            rhs = mul_level()
            e = {"+": Add, "dsum": DirectSum, "hcat": ConcatH, "vcat": ConcatV}[op](e, rhs)
        return e

    e = sum_level()
    if idx != len(tokens):
        raise ShapeError(f"trailing LA tokens: {tokens[idx:]}")
    return e
