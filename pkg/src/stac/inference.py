"""Structure inference: a unique set and redundancy map for every defined
tensor, derived by matching each (binarized) rule against a registry of
cases ordered most-specific first:

  1. self-multiplication (flat powers of one tensor, disjoint index blocks),
     including the shared-block form produced by Gram-style contractions;
  2. products of two distinct tensors over disjoint indices;
  3. addition of operands with identical structure;
  4. offset (direct-sum shaped) addition;
  5. constant-range bodies (all values equal: one representative survives);
  6. general two-operand products;
  7. general addition;
  8. projection (redundancy-preserving when the map is identity on the
     summed indices and stays functional, general otherwise);
  9. the dense fallback: everything in range is unique.

Inferred structures are stored closed (bodies of comparisons only) and
simplified, so later side-condition checks compare canonical forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

from .ir import (
    Access, Arith, Body, Comparison, Const, Factor, IndexExpr, Kind, Product,
    Program, Rule, Var, body_mul, check_well_formed, fresh_name, free_vars,
    product_vars, rename_product, substitute,
)
from .optimizer import canonicalize, simplify_body
from .structure import StructureInfo, dense_box_structure

__all__ = ["InferenceError", "InferenceContext", "binarize", "infer_rule",
           "infer_program", "infer_structures", "structure_rules"]


class InferenceError(Exception):
    pass


@dataclass
class InferenceContext:
    """Known structures plus the (binarized) program they belong to."""

    structures: dict[str, StructureInfo]
    program: Program

    def require(self, name: str) -> StructureInfo:
        info = self.structures.get(name)
        if info is None:
            raise InferenceError(f"no structure known for {name!r} "
                                 f"(inference must run in definition order)")
        return info


# ---------------------------------------------------------------------------
# binarization

def binarize(p: Program) -> Program:
    """Rewrite every tensor rule so inference patterns apply: products have
    at most two accesses (flat self-powers stay whole), additions have
    exactly two operands, and marginalizing heads are isolated into their
    own projection rules."""
    taken = {r.head.tensor for r in p.rules} | set(p.dims)
    counter = 0

    def fresh() -> str:
        nonlocal counter
        while True:
            name = f"%b{counter}"
            counter += 1
            if name not in taken:
                taken.add(name)
                return name

    out: list[Rule] = []
    dims: dict[str, tuple[IndexExpr, ...]] = dict(p.dims)

    def head_dims(args: tuple[str, ...], prod: Product, outer: Rule) -> tuple[IndexExpr, ...] | None:
        per_var: dict[str, IndexExpr] = {}
        for f in prod:
            if isinstance(f, Access):
                ds = dims.get(f.tensor)
                if ds is None:
                    continue
                if f.kind is Kind.REDUNDANCY:
                    ds = ds + ds
                for v, d in zip(f.args, ds):
                    per_var.setdefault(v, d)
        outer_ds = dims.get(outer.head.tensor)
        if outer_ds is not None:
            for v, d in zip(outer.head.args, outer_ds):
                per_var.setdefault(v, d)
        got = tuple(per_var.get(v) for v in args)
        if any(d is None for d in got):
            return None
        return got  # type: ignore[return-value]

    def note_dims(name: str, args: tuple[str, ...], prod: Product, outer: Rule) -> None:
        ds = head_dims(args, prod, outer)
        if ds is not None:
            dims[name] = ds

    def emit_product(name: str, kind: Kind, args: tuple[str, ...],
                     prod: Product, outer: Rule) -> None:
        accesses = [f for f in prod if isinstance(f, Access)]
        comps = [f for f in prod if isinstance(f, Comparison)]
        if not _is_self_power(accesses):
            while len(accesses) > 2:
                a1, a2 = accesses[0], accesses[1]
                ivars = _ordered_union(a1.args, a2.args)
                iname = fresh()
                note_dims(iname, ivars, (a1, a2), outer)
                out.append(Rule(Access(iname, Kind.PLAIN, ivars), ((a1, a2),)))
                accesses = [Access(iname, Kind.PLAIN, ivars)] + accesses[2:]
        core: tuple[str, ...] = ()
        for f in [*accesses, *comps]:
            vs = f.args if isinstance(f, Access) else _expr_var_order(f.lhs) + _expr_var_order(f.rhs)
            for v in vs:
                if v not in core and v not in p.sizes:
                    core = core + (v,)
        prod2 = tuple(accesses) + tuple(comps)
        if set(core) == set(args):
            out.append(Rule(Access(name, kind, args), (prod2,)))
        else:
            iname = fresh()
            note_dims(iname, core, prod2, outer)
            out.append(Rule(Access(iname, Kind.PLAIN, core), (prod2,)))
            out.append(Rule(Access(name, kind, args), ((Access(iname, Kind.PLAIN, core),),)))

    for r in p.rules:
        if r.head.kind is not Kind.PLAIN or len(r.body) == 0:
            out.append(r)
            continue
        if len(r.body) == 1:
            emit_product(r.head.tensor, r.head.kind, r.head.args, r.body[0], r)
            continue
        summands: list[Product] = []
        for prod in r.body:
            if _is_bare_access(prod) or _is_offset_product(prod, r.head.args):
                summands.append(prod)
            else:
                iname = fresh()
                note_dims(iname, r.head.args, prod, r)
                emit_product(iname, Kind.PLAIN, r.head.args, prod, r)
                summands.append((Access(iname, Kind.PLAIN, r.head.args),))
        acc = summands[0]
        for nxt in summands[1:-1]:
            iname = fresh()
            dims.setdefault(iname, dims.get(r.head.tensor, ()))
            out.append(Rule(Access(iname, Kind.PLAIN, r.head.args), (acc, nxt)))
            acc = (Access(iname, Kind.PLAIN, r.head.args),)
        out.append(Rule(r.head, (acc, summands[-1])))
    return Program(tuple(out), dims, p.sizes, p.assumes)


def _expr_var_order(e: IndexExpr) -> tuple[str, ...]:
    if isinstance(e, Var):
        return (e.name,)
    if isinstance(e, Const):
        return ()
    return _expr_var_order(e.lhs) + _expr_var_order(e.rhs)


def _ordered_union(a: tuple[str, ...], b: tuple[str, ...]) -> tuple[str, ...]:
    seen = list(a)
    for v in b:
        if v not in seen:
            seen.append(v)
    return tuple(seen)


def _is_bare_access(prod: Product) -> bool:
    return len(prod) == 1 and isinstance(prod[0], Access)


def _is_offset_product(prod: Product, head_args: tuple[str, ...]) -> bool:
    accesses = [f for f in prod if isinstance(f, Access)]
    if len(accesses) != 1:
        return False
    return all(isinstance(f, Access) or (isinstance(f, Comparison) and f.op == "=")
               for f in prod)


def _is_self_power(accesses: list[Access]) -> bool:
    if len(accesses) < 2:
        return False
    first = (accesses[0].tensor, accesses[0].kind)
    if any((a.tensor, a.kind) != first for a in accesses):
        return False
    seen: set[str] = set()
    for a in accesses:
        if len(set(a.args)) != len(a.args):
            return False
        if seen & set(a.args):
            return False
        seen |= set(a.args)
    return True


# ---------------------------------------------------------------------------
# comparison vectors

def _eq_product(ys: tuple[str, ...], zs: tuple[str, ...]) -> Product:
    return tuple(Comparison(Var(y), "=", Var(z)) for y, z in zip(ys, zs))


def _lex_le(ys: tuple[str, ...], zs: tuple[str, ...]) -> Body:
    """y <=_lex z as a sum of products (coincides with y <= z for blocks of
    one variable)."""
    products = []
    for t in range(len(ys)):
        eqs = _eq_product(ys[:t], zs[:t])
        op = "<=" if t == len(ys) - 1 else "<"
        products.append(eqs + (Comparison(Var(ys[t]), op, Var(zs[t])),))
    return tuple(products)


def _lex_lt(ys: tuple[str, ...], zs: tuple[str, ...]) -> Body:
    products = []
    for t in range(len(ys)):
        eqs = _eq_product(ys[:t], zs[:t])
        products.append(eqs + (Comparison(Var(ys[t]), "<", Var(zs[t])),))
    return tuple(products)


# ---------------------------------------------------------------------------
# inference proper

def infer_program(p: Program, inputs: dict[str, StructureInfo] | None = None) -> InferenceContext:
    """Fold inference over a binarized program in definition order; every
    inferred structure is simplified before being stored so equality side
    conditions see canonical forms."""
    ctx = InferenceContext(dict(inputs or {}), p)
    declared = _declared_structures(p)
    for name, info in declared.items():
        ctx.structures.setdefault(name, info)
    defined = {r.head.tensor for r in p.rules if r.head.kind is Kind.PLAIN}
    for name, ds in p.dims.items():
        if name not in defined and name not in ctx.structures:
            ctx.structures[name] = dense_box_structure(name, ds, avoid=p.sizes)
    for r in p.rules:
        if r.head.kind is not Kind.PLAIN:
            continue
        ctx.structures[r.head.tensor] = infer_rule(r, ctx)
    return ctx


def infer_structures(p: Program, inputs: dict[str, StructureInfo] | None = None) -> InferenceContext:
    """Convenience: binarize then infer."""
    return infer_program(binarize(p), inputs)


def _declared_structures(p: Program) -> dict[str, StructureInfo]:
    uniq: dict[str, Rule] = {}
    red: dict[str, Rule] = {}
    for r in p.rules:
        if r.head.kind is Kind.UNIQUE:
            uniq[r.head.tensor] = r
        elif r.head.kind is Kind.REDUNDANCY:
            red[r.head.tensor] = r
    out: dict[str, StructureInfo] = {}
    for name, urule in uniq.items():
        ds = p.dims.get(name)
        if ds is None:
            raise InferenceError(f"structure declared for {name} but no @dim")
        rrule = red.get(name)
        if rrule is None:
            args = urule.head.args
            rrule = Rule(Access(name, Kind.REDUNDANCY, args + _primed(args)), ())
        out[name] = StructureInfo(_close(urule, p), _close(rrule, p), ds)
    for name in red:
        if name not in out:
            raise InferenceError(f"redundancy map for {name} without a unique set")
    return out


def _close(rule: Rule, p: Program) -> Rule:
    """Inline any unique/redundancy accesses from the same program and
    simplify; declared structures may be written in terms of others."""
    defs = {(r.head.tensor, r.head.kind): r for r in p.rules
            if r.head.kind in (Kind.UNIQUE, Kind.REDUNDANCY)}
    cur = rule
    for _ in range(64):
        keys = {(f.tensor, f.kind) for prod in cur.body for f in prod
                if isinstance(f, Access) and (f.tensor, f.kind) in defs
                and (f.tensor, f.kind) != (cur.head.tensor, cur.head.kind)}
        if not keys:
            break
        for key in sorted(keys, key=lambda t: (t[0], t[1].value)):
            cur = substitute(cur, defs[key], protected=p.sizes)
    return _tidy(cur, p)


def _tidy(rule: Rule, p: Program) -> Rule:
    body = simplify_body(rule.body, rule.head.args, p.sizes, p.assumes)
    return Rule(rule.head, canonicalize(body))


def _primed(args: tuple[str, ...]) -> tuple[str, ...]:
    taken = set(args)
    out = []
    for a in args:
        cand = a + "'"
        while cand in taken:
            cand += "'"
        taken.add(cand)
        out.append(cand)
    return tuple(out)


def infer_rule(r: Rule, ctx: InferenceContext) -> StructureInfo:
    """Match the first applicable registry case, build the unique/redundancy
    bodies by inlining operand structures, and simplify."""
    p = ctx.program
    name = r.head.tensor
    args = r.head.args
    dims = p.dims.get(name)
    if dims is None:
        raise InferenceError(f"no dimensions known for {name}")
    primed = _primed(args)
    prime_of = dict(zip(args, primed))

    if len(r.body) == 0:
        return _pack(name, args, primed, (), (), dims, p)

    if len(r.body) == 1:
        u_body, r_body = _infer_product(r.body[0], args, prime_of, ctx, dims)
    elif len(r.body) == 2:
        u_body, r_body = _infer_addition(r.body, args, prime_of, ctx, dims)
    else:
        raise InferenceError(f"rule for {name} is not binarized")
    return _pack(name, args, primed, u_body, r_body, dims, p)


def _pack(name: str, args, primed, u_body: Body, r_body: Body,
          dims, p: Program) -> StructureInfo:
    urule = Rule(Access(name, Kind.UNIQUE, args), u_body)
    rrule = Rule(Access(name, Kind.REDUNDANCY, args + primed), r_body)
    return StructureInfo(_tidy(urule, p), _tidy(rrule, p), dims)


def _u_access(info: StructureInfo, args: tuple[str, ...]) -> Access:
    return Access(info.tensor, Kind.UNIQUE, args)


def _r_access(info: StructureInfo, args: tuple[str, ...], primed: tuple[str, ...]) -> Access:
    return Access(info.tensor, Kind.REDUNDANCY, args + primed)


def _inline_all(body: Body, ctx: InferenceContext) -> Body:
    """Replace unique/redundancy accesses by the closed bodies in context."""
    cur = body
    for _ in range(64):
        targets = {(f.tensor, f.kind) for prod in cur for f in prod
                   if isinstance(f, Access)}
        if not targets:
            break
        done = True
        for tname, kind in sorted(targets, key=lambda t: (t[0], t[1].value)):
            info = ctx.require(tname)
            defn = info.unique if kind is Kind.UNIQUE else info.redundancy
            host = Rule(Access("%inline", Kind.PLAIN, ()), cur)
            host = substitute(host, defn, protected=ctx.program.sizes)
            cur = host.body
            done = False
        if done:
            break
    return cur


def _with_comps(body: Body, comps: list[Comparison],
                primed_comps: list[Comparison] | None = None) -> Body:
    extra: Product = tuple(comps) + tuple(primed_comps or ())
    if not extra:
        return body
    return body_mul(body, (extra,))


def _prime_comparison(c: Comparison, prime_of: dict[str, str]) -> Comparison:
    from .ir import rename_factor
    return rename_factor(c, prime_of)  # type: ignore[return-value]


def _infer_product(prod: Product, args, prime_of, ctx: InferenceContext,
                   dims) -> tuple[Body, Body]:
    p = ctx.program
    accesses = [f for f in prod if isinstance(f, Access)]
    comps = [f for f in prod if isinstance(f, Comparison)]
    for a in accesses:
        if a.kind is not Kind.PLAIN:
            raise InferenceError(f"structure access {a.tensor}{a.kind.suffix} "
                                 f"in a tensor rule is not inferable")
    pcomps = [_prime_comparison(c, prime_of) for c in comps]
    primed = tuple(prime_of[v] for v in args)

    # (5) constant ranges: every value equals 1, one representative survives
    if not accesses:
        rng = _match_constant_range(comps, args)
        if rng is not None:
            return _constant_range_structure(rng, args, prime_of)
        return _default_structure(args, dims, ctx), ()

    # (1) self-multiplication
    if _is_self_power(accesses):
        info = ctx.require(accesses[0].tensor)
        if len(accesses) == 2 or not info.redundancy.body:
            got = _self_power(accesses, info, args, prime_of, ctx)
            if got is not None:
                u, rb = got
                return (_with_comps(u, comps),
                        _with_comps(rb, comps, pcomps))

    # Gram form: same tensor twice sharing a block at equal positions
    if len(accesses) == 2 and (accesses[0].tensor, accesses[0].kind) == (accesses[1].tensor, accesses[1].kind):
        got = _gram(accesses, ctx.require(accesses[0].tensor), args, prime_of, ctx)
        if got is not None:
            u, rb = got
            return (_with_comps(u, comps), _with_comps(rb, comps, pcomps))

    if len(accesses) == 2:
        m, v = accesses
        mi, vi = ctx.require(m.tensor), ctx.require(v.tensor)
        mp = tuple(prime_of[x] for x in m.args)
        vp = tuple(prime_of[x] for x in v.args)
        disjoint = not (set(m.args) & set(v.args))
        if disjoint and m.tensor != v.tensor:
            # (2) product over disjoint indices
            u = ((_u_access(mi, m.args), _u_access(vi, v.args)),)
            rb = (
                (_r_access(mi, m.args, mp), _r_access(vi, v.args, vp)),
                (_u_access(mi, m.args), *_eq_product(m.args, mp),
                 _r_access(vi, v.args, vp)),
                (_r_access(mi, m.args, mp), _u_access(vi, v.args),
                 *_eq_product(v.args, vp)),
            )
        else:
            # (6) general product
            u = (
                (_u_access(mi, m.args), _u_access(vi, v.args)),
                (_u_access(mi, m.args), _r_access(vi, v.args, _fresh_primed(v.args, args))),
                (_r_access(mi, m.args, _fresh_primed(m.args, args)), _u_access(vi, v.args)),
            )
            rb = ((_r_access(mi, m.args, mp), _r_access(vi, v.args, vp)),)
        u = _with_comps(_inline_all(u, ctx), comps)
        rb = _with_comps(_inline_all(rb, ctx), comps, pcomps)
        return u, rb

    # single access
    m = accesses[0]
    mi = ctx.require(m.tensor)
    if not comps and set(args) <= set(m.args):
        # (8) projection; redundancy-preserving when sound
        got = _projection_preserving(m, mi, args, prime_of, ctx)
        if got is not None:
            return got
        u = ((_u_access(mi, m.args),),
             (_r_access(mi, m.args, _fresh_primed(m.args, args)),))
        return _inline_all(u, ctx), ()
    # single access with comparisons: unique wherever the operand is nonzero
    u = ((_u_access(mi, m.args),),
         (_r_access(mi, m.args, _fresh_primed(m.args, args)),))
    return _with_comps(_inline_all(u, ctx), comps), ()


def _fresh_primed(vs: tuple[str, ...], avoid: tuple[str, ...]) -> tuple[str, ...]:
    taken = set(vs) | set(avoid)
    out = []
    for v in vs:
        cand = v + "'"
        while cand in taken:
            cand += "'"
        taken.add(cand)
        out.append(cand)
    return tuple(out)


def _self_power(accesses: list[Access], info: StructureInfo, args, prime_of,
                ctx: InferenceContext) -> tuple[Body, Body] | None:
    """Flat powers M(y1)*...*M(yd) over pairwise-disjoint blocks: sorted
    blocks are unique; every other arrangement maps to its sorted image.
    Regions are the standard staircase decomposition (strict inequality at
    each descent), so they partition and the map stays functional."""
    blocks = [a.args for a in accesses]
    d = len(blocks)
    if d == 2:
        return _self_square(blocks, info, args, prime_of, ctx)
    u: Body = ((),)
    for b in blocks:
        u = body_mul(u, ((_u_access(info, b),),))
    for a in range(d - 1):
        u = body_mul(u, _lex_le(blocks[a], blocks[a + 1]))
    rb: Body = ()
    for perm in permutations(range(d)):
        if perm == tuple(range(d)):
            continue
        region: Body = ((),)
        for b in blocks:
            region = body_mul(region, ((_u_access(info, b),),))
        for a in range(d - 1):
            lo, hi = perm[a], perm[a + 1]
            cmp = _lex_le(blocks[lo], blocks[hi]) if lo < hi else _lex_lt(blocks[lo], blocks[hi])
            region = body_mul(region, cmp)
        mapping: Product = ()
        for i in range(d):
            src = tuple(prime_of[v] for v in blocks[i])
            mapping = mapping + _eq_product(src, blocks[perm[i]])
        rb = rb + body_mul(region, (mapping,))
    return _inline_all(u, ctx), _inline_all(rb, ctx)


def _self_square(blocks, info: StructureInfo, args, prime_of,
                 ctx: InferenceContext) -> tuple[Body, Body]:
    """Binary self-multiplication with the full four-part redundancy map
    (operand redundancy in either or both coordinates, plus the swapped
    half of the unique-by-unique region)."""
    y, z = blocks
    yp = tuple(prime_of[v] for v in y)
    zp = tuple(prime_of[v] for v in z)
    u = body_mul(((_u_access(info, y), _u_access(info, z)),), _lex_le(y, z))
    rb: Body = (
        (_r_access(info, y, yp), _r_access(info, z, zp)),
        (_u_access(info, y), *_eq_product(y, yp), _r_access(info, z, zp)),
        (_r_access(info, y, yp), _u_access(info, z), *_eq_product(z, zp)),
    )
    swap = body_mul(((_u_access(info, y), _u_access(info, z)),), _lex_lt(z, y))
    swap = body_mul(swap, (_eq_product(yp, z) + _eq_product(zp, y),))
    rb = rb + swap
    return _inline_all(u, ctx), _inline_all(rb, ctx)


def _gram(accesses: list[Access], info: StructureInfo, args, prime_of,
          ctx: InferenceContext) -> tuple[Body, Body] | None:
    """M(y)*M(z) sharing variables at equal positions only: swapping the
    non-shared blocks leaves the product invariant, so the ordered half is
    unique and the rest maps to its swap (shared coordinates fixed)."""
    if info.redundancy.body:
        return None
    y, z = accesses[0].args, accesses[1].args
    if len(y) != len(z):
        return None
    if len(set(y)) != len(y) or len(set(z)) != len(z):
        return None
    shared_pos = [t for t in range(len(y)) if y[t] == z[t]]
    other_pos = [t for t in range(len(y)) if y[t] != z[t]]
    if not shared_pos or not other_pos:
        return None
    ys = set(y)
    zs = set(z)
    for t in other_pos:
        if y[t] in zs or z[t] in ys:
            return None
    u_blk = tuple(y[t] for t in other_pos)
    v_blk = tuple(z[t] for t in other_pos)
    w_blk = tuple(y[t] for t in shared_pos)
    base = ((_u_access(info, y), _u_access(info, z)),)
    u = body_mul(base, _lex_le(u_blk, v_blk))
    mapping = (_eq_product(tuple(prime_of[v] for v in u_blk), v_blk)
               + _eq_product(tuple(prime_of[v] for v in v_blk), u_blk)
               + _eq_product(tuple(prime_of[v] for v in w_blk), w_blk))
    rb = body_mul(body_mul(base, _lex_lt(v_blk, u_blk)), (mapping,))
    return _inline_all(u, ctx), _inline_all(rb, ctx)


def _match_constant_range(comps: list[Comparison], args) -> dict[str, tuple[IndexExpr, IndexExpr]] | None:
    """Body of the exact shape lo <= x < hi for every head variable."""
    from .optimizer import normalize_comparison, TRUE, EMPTY
    bounds: dict[str, list] = {v: [] for v in args}
    for c in comps:
        n = normalize_comparison(c)
        if n in (TRUE, EMPTY) or not isinstance(n, Comparison):
            return None
        if n.op not in ("<", "<="):
            return None
        if isinstance(n.lhs, Var) and n.lhs.name in bounds and not (free_vars(n.rhs) & set(args)):
            hi = n.rhs if n.op == "<" else Arith("+", n.rhs, Const(1))
            bounds[n.lhs.name].append(("hi", hi))
        elif isinstance(n.rhs, Var) and n.rhs.name in bounds and not (free_vars(n.lhs) & set(args)):
            lo = n.lhs if n.op == "<=" else Arith("+", n.lhs, Const(1))
            bounds[n.rhs.name].append(("lo", lo))
        else:
            return None
    out = {}
    for v, bs in bounds.items():
        los = [e for k, e in bs if k == "lo"]
        his = [e for k, e in bs if k == "hi"]
        if len(los) != 1 or len(his) != 1:
            return None
        out[v] = (los[0], his[0])
    return out


def _constant_range_structure(rng, args, prime_of) -> tuple[Body, Body]:
    corner = tuple(Comparison(Var(v), "=", rng[v][0]) for v in args)
    u: Body = (corner,)
    rb: Body = ()
    target = tuple(Comparison(Var(prime_of[v]), "=", rng[v][0]) for v in args)
    for t, v in enumerate(args):
        prefix = tuple(Comparison(Var(w), "=", rng[w][0]) for w in args[:t])
        mid = (Comparison(rng[v][0], "<", Var(v)), Comparison(Var(v), "<", rng[v][1]))
        rest: Product = ()
        for w in args[t + 1:]:
            rest = rest + (Comparison(rng[w][0], "<=", Var(w)),
                           Comparison(Var(w), "<", rng[w][1]))
        rb = rb + (prefix + mid + rest + target,)
    return u, rb


def _default_structure(args, dims, ctx: InferenceContext) -> Body:
    comps: Product = ()
    for v, d in zip(args, dims):
        comps = comps + (Comparison(Const(0), "<=", Var(v)),
                         Comparison(Var(v), "<", d))
    return (comps,)


def _projection_preserving(m: Access, mi: StructureInfo, args, prime_of,
                           ctx: InferenceContext) -> tuple[Body, Body] | None:
    """Projection that keeps the redundancy map: sound when the operand map
    is the identity on every summed-out coordinate, the projected unique
    set and redundancy domain stay disjoint, and the projected map stays
    functional.  All three conditions are discharged syntactically on the
    closed operand structure (conjunctions that must be contradictory are
    simplified to the empty sum)."""
    if not mi.redundancy.body:
        return None
    p = ctx.program
    op_args = mi.unique.head.args
    op_primed = mi.redundancy.head.args[len(op_args):]
    kept_pos = [t for t in range(len(m.args)) if m.args[t] in set(args)]
    dropped_pos = [t for t in range(len(m.args)) if t not in kept_pos]
    # identity on dropped coordinates, per product of the closed map
    for prod in mi.redundancy.body:
        have = {(c.lhs, c.rhs) for c in prod if isinstance(c, Comparison) and c.op == "="}
        have |= {(b, a) for a, b in have}
        for t in dropped_pos:
            if (Var(op_args[t]), Var(op_primed[t])) not in have:
                return None
    # disjointness of projections: unique x redundancy-domain must vanish
    # even with independently chosen dropped coordinates
    for uprod in mi.unique.body:
        for rprod in mi.redundancy.body:
            ren = {v: v + "~" for t in dropped_pos for v in (op_args[t],)}
            extra = {v: v + "~" for v in product_vars(rprod)
                     if v not in set(op_args) and v not in p.sizes}
            rren = rename_product(rprod, {**ren, **extra})
            test = simplify_body(((uprod + rren),), (), p.sizes, p.assumes)
            if test:
                return None
    # functionality: distinct map products must not share a projected source
    prods = list(mi.redundancy.body)
    for i in range(len(prods)):
        for j in range(i + 1, len(prods)):
            ren = {v: v + "~" for v in product_vars(prods[j])
                   if v not in {op_args[t] for t in kept_pos} and v not in p.sizes}
            test = simplify_body(((prods[i] + rename_product(prods[j], ren)),),
                                 (), p.sizes, p.assumes)
            if test:
                return None
    u = ((_u_access(mi, m.args),),)
    primed_args = tuple(prime_of[m.args[t]] if t in kept_pos else _fresh_primed((m.args[t],), tuple(args))[0]
                        for t in range(len(m.args)))
    rb = ((_r_access(mi, m.args, primed_args),),)
    return _inline_all(u, ctx), _inline_all(rb, ctx)


def _infer_addition(body: Body, args, prime_of, ctx: InferenceContext,
                    dims) -> tuple[Body, Body]:
    p1, p2 = body
    primed = tuple(prime_of[v] for v in args)

    # (3) aligned addition with equal structures
    if _is_aligned_access(p1, args) and _is_aligned_access(p2, args):
        m, v = p1[0], p2[0]
        mi, vi = ctx.require(m.tensor), ctx.require(v.tensor)
        if _same_structure(mi, vi, ctx):
            u = ((_u_access(mi, args),),)
            rb = ((_r_access(mi, args, primed),),)
            return _inline_all(u, ctx), _inline_all(rb, ctx)

    # (4) offset addition (direct-sum shape)
    for first, second in ((p1, p2), (p2, p1)):
        off = _match_offset(first, second, args, ctx)
        if off is not None:
            m, v, eqs = off
            mi, vi = ctx.require(m.tensor), ctx.require(v.tensor)
            vp = _fresh_primed(v.args, args + primed)
            peqs = tuple(_prime_with(c, prime_of, dict(zip(v.args, vp))) for c in eqs)
            u = ((_u_access(mi, args),),)
            u = u + ((_u_access(vi, v.args),) + tuple(eqs),)
            rb = ((_r_access(mi, args, primed),),)
            rb = rb + ((_r_access(vi, v.args, vp),) + tuple(eqs) + peqs,)
            return _inline_all(u, ctx), _inline_all(rb, ctx)

    # (7) general addition: union of everything nonzero on both sides
    u: Body = ()
    for prod in (p1, p2):
        acc = [f for f in prod if isinstance(f, Access)]
        comps = tuple(f for f in prod if isinstance(f, Comparison))
        if len(acc) != 1:
            raise InferenceError("addition operand is not a single access")
        info = ctx.require(acc[0].tensor)
        u = u + ((_u_access(info, acc[0].args),) + comps,)
        u = u + ((_r_access(info, acc[0].args, _fresh_primed(acc[0].args, args)),) + comps,)
    return _inline_all(u, ctx), ()


def _prime_with(c: Comparison, prime_of: dict[str, str], extra: dict[str, str]) -> Comparison:
    from .ir import rename_factor
    return rename_factor(c, {**prime_of, **extra})  # type: ignore[return-value]


def _is_aligned_access(prod: Product, args) -> bool:
    return (len(prod) == 1 and isinstance(prod[0], Access)
            and prod[0].args == tuple(args))


def _same_structure(a: StructureInfo, b: StructureInfo, ctx: InferenceContext) -> bool:
    """Canonical syntactic equality after renaming to common head names."""
    from .ir import rename_rule
    def normal(info: StructureInfo, other: StructureInfo):
        m = dict(zip(info.unique.head.args, other.unique.head.args))
        m.update(dict(zip(info.redundancy.head.args, other.redundancy.head.args)))
        u = rename_rule(info.unique, m)
        r = rename_rule(info.redundancy, m)
        return (canonicalize(u.body), canonicalize(r.body))
    ua, ra = normal(a, a)
    ub, rb = normal(b, a)
    return ua == ub and ra == rb


def _match_offset(first: Product, second: Product, args, ctx: InferenceContext):
    """first = M(args) bare; second = V(ys) * (y = x - d) with d the extent
    of M in that coordinate (or the coordinate passed through unchanged)."""
    from .optimizer import poly_add, poly_of, poly_scale
    if not _is_aligned_access(first, args):
        return None
    m = first[0]
    acc = [f for f in second if isinstance(f, Access)]
    comps = [f for f in second if isinstance(f, Comparison)]
    if len(acc) != 1 or any(not (isinstance(c, Comparison) and c.op == "=") for c in comps):
        return None
    v = acc[0]
    if len(v.args) != len(args):
        return None
    mdims = ctx.program.dims.get(m.tensor)
    if mdims is None:
        return None
    eqs: list[Comparison] = []
    matched: set[str] = set()
    for t, (y, x) in enumerate(zip(v.args, args)):
        if y == x:
            continue
        want = poly_add(poly_of(Var(y)), poly_scale(poly_add(poly_of(Var(x)), poly_scale(poly_of(mdims[t]), -1)), -1))
        found = None
        for c in comps:
            d = poly_add(poly_of(c.lhs), poly_scale(poly_of(c.rhs), -1))
            if d == want or poly_scale(d, -1) == want:
                found = c
                break
        if found is None:
            return None
        eqs.append(found)
        matched.add(y)
    if len(eqs) != len(comps):
        return None
    return m, v, tuple(eqs)


# ---------------------------------------------------------------------------
# rendering structures back into programs

def structure_rules(ctx: InferenceContext, names: list[str] | None = None) -> Program:
    """Program containing the context's structure rules (for printing or
    evaluation), in a stable order."""
    rules: list[Rule] = []
    for name in (names if names is not None else sorted(ctx.structures)):
        info = ctx.structures[name]
        rules.append(info.unique)
        rules.append(info.redundancy)
    return Program(tuple(rules), dict(ctx.program.dims), ctx.program.sizes,
                   ctx.program.assumes)
