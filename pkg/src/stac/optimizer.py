"""Rule inlining and logical simplification of comparison products.

Comparisons are normalized through an integer linear form over "atoms"
(index variables, size constants, and opaque floor-div/mod subtrees), which
makes constant folding, duplicate detection, contradiction detection
((a <= b) * (a > b) has no solutions), bound subsumption, and equality
propagation uniform term rewrites.  Simplification never changes a
product's set of satisfying assignments over its head variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .ir import (
    Access, Arith, Body, Comparison, Const, Factor, IndexExpr, Kind, Product,
    Program, Rule, Var, expr_vars, substitute,
)

__all__ = [
    "canonicalize", "simplify_body", "simplify_rule", "inline_program",
    "optimize_program", "sort_key", "FIXPOINT_CAP", "normalize_comparison",
]

FIXPOINT_CAP = 64

# ---------------------------------------------------------------------------
# linear forms over atoms

Poly = dict[tuple, int]  # sorted atom-key tuple -> integer coefficient


def sort_key(e: IndexExpr) -> tuple:
    if isinstance(e, Const):
        return ("c", e.value)
    if isinstance(e, Var):
        return ("v", e.name)
    return ("a", e.op, sort_key(e.lhs), sort_key(e.rhs))


def _atom(e: IndexExpr) -> Poly:
    return {(e,): 1}


def poly_add(a: Poly, b: Poly) -> Poly:
    out = dict(a)
    for k, c in b.items():
        nc = out.get(k, 0) + c
        if nc:
            out[k] = nc
        else:
            out.pop(k, None)
    return out


def poly_scale(a: Poly, c: int) -> Poly:
    if c == 0:
        return {}
    return {k: v * c for k, v in a.items()}


def poly_mul(a: Poly, b: Poly) -> Poly:
    out: Poly = {}
    for ka, ca in a.items():
        for kb, cb in b.items():
            k = tuple(sorted(ka + kb, key=sort_key))
            nc = out.get(k, 0) + ca * cb
            if nc:
                out[k] = nc
            else:
                out.pop(k, None)
    return out


def poly_of(e: IndexExpr) -> Poly:
    if isinstance(e, Const):
        return {(): e.value} if e.value else {}
    if isinstance(e, Var):
        return _atom(e)
    la, lb = poly_of(e.lhs), poly_of(e.rhs)
    if e.op == "+":
        return poly_add(la, lb)
    if e.op == "-":
        return poly_add(la, poly_scale(lb, -1))
    if e.op == "*":
        return poly_mul(la, lb)
    ca, cb = poly_const(la), poly_const(lb)
    if ca is not None and cb is not None and cb != 0:
        v = ca // cb if e.op == "/" else ca % cb
        return {(): v} if v else {}
    return _atom(Arith(e.op, emit_poly(la), emit_poly(lb)))


def poly_const(p: Poly) -> int | None:
    if not p:
        return 0
    if len(p) == 1 and () in p:
        return p[()]
    return None


def poly_vars(p: Poly) -> frozenset[str]:
    out: set[str] = set()
    for key in p:
        for atom in key:
            out |= expr_vars(atom)
    return frozenset(out)


def _emit_term(key: tuple, coeff: int) -> IndexExpr:
    if not key:
        return Const(coeff)
    e: IndexExpr = key[0]
    for atom in key[1:]:
        e = Arith("*", e, atom)
    if coeff != 1:
        e = Arith("*", e, Const(coeff))
    return e


def emit_poly(p: Poly) -> IndexExpr:
    if not p:
        return Const(0)
    terms = sorted(p.items(), key=lambda kv: (len(kv[0]) == 0, tuple(sort_key(a) for a in kv[0])))
    out: IndexExpr | None = None
    negatives = []
    for key, coeff in terms:
        if coeff < 0:
            negatives.append((key, -coeff))
            continue
        t = _emit_term(key, coeff)
        out = t if out is None else Arith("+", out, t)
    if out is None:
        out = Const(0)
    for key, coeff in negatives:
        out = Arith("-", out, _emit_term(key, coeff))
    return out


def _split(p: Poly) -> tuple[Poly, Poly]:
    """p == pos - neg with all coefficients positive."""
    pos = {k: c for k, c in p.items() if c > 0}
    neg = {k: -c for k, c in p.items() if c < 0}
    return pos, neg


TRUE = "true"
EMPTY = "empty"


def normalize_comparison(c: Comparison):
    """Canonical comparison, or TRUE / EMPTY for constant outcomes.

    Ordering facts are held as `diff <= 0`; a trailing +1 constant is
    rendered back as strictness, so `(i + 1 <= n)` and `(i < n)` coincide.
    """
    lhs, op, rhs = c.lhs, c.op, c.rhs
    if op == ">":
        lhs, op, rhs = rhs, "<", lhs
    elif op == ">=":
        lhs, op, rhs = rhs, "<=", lhs
    d = poly_add(poly_of(lhs), poly_scale(poly_of(rhs), -1))
    k = poly_const(d)
    if op in ("=", "!="):
        if k is not None:
            ok = (k == 0) if op == "=" else (k != 0)
            return TRUE if ok else EMPTY
        pos, neg = _split(d)
        l, r = emit_poly(pos), emit_poly(neg)
        if sort_key(l) > sort_key(r):
            l, r = r, l
        return Comparison(l, op, r)
    if op == "<":
        d = poly_add(d, {(): 1})
    if (k := poly_const(d)) is not None:
        return TRUE if k <= 0 else EMPTY
    const = d.get((), 0)
    if const == 1:
        core = dict(d)
        core.pop(())
        pos, neg = _split(core)
        return Comparison(emit_poly(pos), "<", emit_poly(neg))
    pos, neg = _split(d)
    return Comparison(emit_poly(pos), "<=", emit_poly(neg))


def _le_poly(c: Comparison) -> Poly:
    """The `d <= 0` form of a canonical ordering comparison."""
    d = poly_add(poly_of(c.lhs), poly_scale(poly_of(c.rhs), -1))
    if c.op == "<":
        d = poly_add(d, {(): 1})
    return d


def _eq_poly(c: Comparison) -> Poly:
    return poly_add(poly_of(c.lhs), poly_scale(poly_of(c.rhs), -1))


# ---------------------------------------------------------------------------
# per-product simplification

def _unit_vars(p: Poly, sizes: frozenset[str] = frozenset()) -> list[tuple[str, int]]:
    """Index variables (not size constants) occurring as lone atoms with
    coefficient +-1."""
    out = []
    for key, c in p.items():
        if len(key) == 1 and isinstance(key[0], Var) and c in (1, -1):
            v = key[0].name
            if v in sizes:
                continue
            if sum(1 for k in p for a in k if v in expr_vars(a)) == 1:
                out.append((v, c))
    return out


class _UF:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def find(self, v: str) -> str:
        p = self.parent.setdefault(v, v)
        if p != v:
            r = self.find(p)
            self.parent[v] = r
            return r
        return v

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass
class _Ctx:
    head_args: tuple[str, ...]
    sizes: frozenset[str]
    assume_polys: list[Poly]


def _poly_subst(p: Poly, sub: dict[str, Poly]) -> Poly:
    out: Poly = {}
    for key, coeff in p.items():
        term: Poly = {(): coeff}
        for atom in key:
            avars = expr_vars(atom)
            if isinstance(atom, Var) and atom.name in sub:
                term = poly_mul(term, sub[atom.name])
            elif avars & sub.keys():
                term = poly_mul(term, _atom(_subst_expr(atom, sub)))
            else:
                term = poly_mul(term, _atom(atom))
        out = poly_add(out, term)
    return out


def _subst_expr(e: IndexExpr, sub: dict[str, Poly]) -> IndexExpr:
    if isinstance(e, Var):
        return emit_poly(sub[e.name]) if e.name in sub else e
    if isinstance(e, Const):
        return e
    return Arith(e.op, _subst_expr(e.lhs, sub), _subst_expr(e.rhs, sub))


def _simplify_product_once(prod: Product, ctx: _Ctx):
    """One rewrite pass; returns a Product, or None for an empty product."""
    accesses: list[Access] = []
    eqs: list[Poly] = []          # equality facts, poly == 0
    neqs: list[Comparison] = []
    ords: list[Poly] = []         # ordering facts, poly <= 0
    for f in prod:
        if isinstance(f, Access):
            accesses.append(f)
            continue
        n = normalize_comparison(f)
        if n is TRUE:
            continue
        if n is EMPTY:
            return None
        if n.op == "=":
            eqs.append(_eq_poly(n))
        elif n.op == "!=":
            neqs.append(n)
        else:
            ords.append(_le_poly(n))

    access_vars: set[str] = set()
    for a in accesses:
        access_vars.update(a.args)
    head = set(ctx.head_args)
    protected = head | access_vars | set(ctx.sizes)

    # --- equality classes and bindings -------------------------------------
    uf = _UF()
    bindings: list[tuple[str, Poly]] = []   # var = poly (var-free rhs)
    residual_eqs: list[Poly] = []
    for d in eqs:
        units = _unit_vars(d, ctx.sizes)
        keys = list(d.keys())
        if (len(d) == 2 and len(units) == 2
                and all(len(k) == 1 for k in keys) and () not in d):
            (v1, c1), (v2, c2) = units
            if c1 + c2 == 0:
                uf.union(v1, v2)
                continue
        bound = False
        for v, c in sorted(units, key=lambda t: (t[0] in protected, t[0])):
            rest = poly_scale(poly_add(d, poly_scale({(Var(v),): c}, -1)), -c)
            if v not in poly_vars(rest):
                bindings.append((v, rest))
                bound = True
                break
        if not bound:
            residual_eqs.append(d)

    # group bindings per class representative
    class_binding: dict[str, Poly] = {}
    for v, p in bindings:
        r = uf.find(v)
        if r in class_binding:
            diff = poly_add(class_binding[r], poly_scale(p, -1))
            k = poly_const(diff)
            if k is not None:
                if k != 0:
                    return None
            else:
                residual_eqs.append(diff)
        else:
            class_binding[r] = p

    classes: dict[str, list[str]] = {}
    for v in uf.parent:
        classes.setdefault(uf.find(v), []).append(v)

    sub: dict[str, Poly] = {}
    kept_eqs: list[Comparison] = []

    def order_members(ms: list[str]) -> list[str]:
        def k(v: str) -> tuple:
            return (v not in head, ctx.head_args.index(v) if v in head else 0, v)
        return sorted(set(ms), key=k)

    for rep in sorted(classes, key=lambda r: order_members(classes[r])[0]):
        members = order_members(classes[rep])
        binding = class_binding.pop(rep, None)
        lead = members[0]
        # rename everything in the class to the lead variable
        for m in members[1:]:
            if m in head or m in access_vars:
                kept_eqs.append(Comparison(Var(min(lead, m)), "=", Var(max(lead, m))))
            sub[m] = _atom(Var(lead))
        if binding is not None:
            # eliminate by substitution only when the replacement mentions
            # nothing existential (otherwise keep the equality as a factor;
            # the pair eliminations below may still consume it)
            bvars = poly_vars(binding)
            closed = bvars <= (head | set(ctx.sizes))
            if lead in protected or not closed:
                if bvars & sub.keys():
                    binding = _poly_subst(binding, sub)
                kept_eqs.append(_emit_eq(_atom(Var(lead)), binding))
            else:
                sub[lead] = binding

    if sub:
        ords = [_poly_subst(d, sub) for d in ords]
        residual_eqs = [_poly_subst(d, sub) for d in residual_eqs]
        neqs = [Comparison(_subst_expr(c.lhs, sub), "!=", _subst_expr(c.rhs, sub)) for c in neqs]

    # --- rebuild comparisons ------------------------------------------------
    out_cmps: list[Comparison] = []
    empty = False

    def add(c) -> None:
        nonlocal empty
        n = normalize_comparison(c) if isinstance(c, Comparison) else c
        if n is EMPTY:
            empty = True
        elif n is not TRUE and n not in out_cmps:
            out_cmps.append(n)

    for c in kept_eqs:
        add(c)
    for d in residual_eqs:
        pos, neg = _split(d)
        add(Comparison(emit_poly(pos), "=", emit_poly(neg)))
    for c in neqs:
        add(c)
    ord_cmps: list[Comparison] = []
    for d in ords:
        n = _emit_le(d)
        if n is EMPTY:
            empty = True
        elif n is not TRUE and n not in ord_cmps:
            ord_cmps.append(n)
    if empty:
        return None

    # --- congruence: equalities sharing their non-variable side ------------
    eq_list = [c for c in out_cmps if c.op == "="]
    for i in range(len(eq_list)):
        for j in range(i + 1, len(eq_list)):
            d1, d2 = _eq_poly(eq_list[i]), _eq_poly(eq_list[j])
            for dd in (poly_add(d1, poly_scale(d2, -1)), poly_add(d1, d2)):
                units = _unit_vars(dd, ctx.sizes)
                if (len(dd) == 2 and len(units) == 2 and () not in dd
                        and all(len(k) == 1 for k in dd)
                        and units[0][1] + units[1][1] == 0
                        and len(d2) > 2):
                    derived = Comparison(Var(min(units[0][0], units[1][0])), "=",
                                         Var(max(units[0][0], units[1][0])))
                    if derived not in out_cmps:
                        out_cmps[out_cmps.index(eq_list[j])] = derived
                    break

    # --- contradiction and subsumption over ordering facts -----------------
    # facts hold as d <= 0; two facts whose sum is a positive constant cannot
    # both hold; a fact implied by a stronger one (difference a nonnegative
    # constant) is dropped.
    facts = [_le_poly(c) for c in ord_cmps]
    assume_n = len(ctx.assume_polys)
    all_facts = facts + ctx.assume_polys
    drop: set[int] = set()
    for i in range(len(facts)):
        for j in range(len(all_facts)):
            if j == i or (j < len(facts) and j in drop):
                continue
            s = poly_const(poly_add(facts[i], all_facts[j]))
            if s is not None and s > 0:
                return None
            diff = poly_const(poly_add(all_facts[j], poly_scale(facts[i], -1)))
            if diff is not None and diff >= 0:
                if j < len(facts) and diff == 0 and j > i:
                    continue  # identical facts: keep the earlier
                drop.add(i)
                break
    ord_cmps = [c for k, c in enumerate(ord_cmps) if k not in drop]

    # --- structural eliminations -------------------------------------------
    def body_free(v: str) -> bool:
        return v not in head and v not in access_vars and v not in ctx.sizes

    out_cmps, ord_cmps, _ = _eliminate_linear_pairs(out_cmps, ord_cmps, body_free, ctx)

    dropped_loose = _drop_loose_vars(out_cmps, ord_cmps, neqs, body_free, ctx)
    if dropped_loose is not None:
        ord_cmps = dropped_loose

    ord_cmps = _prune_transitive(ord_cmps, ctx)

    factors: list[Factor] = []
    factors.extend(sorted(accesses, key=lambda a: ("", a.tensor, a.kind.value, a.args)))
    cmps = out_cmps + ord_cmps
    factors.extend(sorted(cmps, key=_cmp_key))
    return tuple(factors)


_OP_RANK = {"=": 0, "!=": 1, "<=": 2, "<": 3}


def _cmp_key(c: Comparison) -> tuple:
    return (_OP_RANK[c.op], sort_key(c.lhs), sort_key(c.rhs))


def _emit_eq(lhs: Poly, rhs: Poly) -> Comparison:
    d = poly_add(lhs, poly_scale(rhs, -1))
    pos, neg = _split(d)
    l, r = emit_poly(pos), emit_poly(neg)
    if sort_key(l) > sort_key(r):
        l, r = r, l
    return Comparison(l, "=", r)


def _emit_le(d: Poly):
    k = poly_const(d)
    if k is not None:
        return TRUE if k <= 0 else EMPTY
    const = d.get((), 0)
    if const == 1:
        core = dict(d)
        core.pop(())
        pos, neg = _split(core)
        return Comparison(emit_poly(pos), "<", emit_poly(neg))
    pos, neg = _split(d)
    return Comparison(emit_poly(pos), "<=", emit_poly(neg))


def _var_bounds(v: str, ords: list[Comparison]) -> tuple[list[tuple[int, Poly]], list[Comparison]]:
    """(bounds, others): bounds are (kind, rest) with kind -1 for lower
    (0 <= v - rest form ... rest <= v) and +1 for upper (v < rest)."""
    bounds = []
    others = []
    for c in ords:
        d = _le_poly(c)
        coeff = d.get((Var(v),))
        in_terms = any(v in expr_vars(a) for k in d for a in k)
        if not in_terms:
            continue
        rest = poly_add(d, poly_scale({(Var(v),): coeff or 0}, -1))
        if coeff in (1, -1) and v not in poly_vars(rest):
            bounds.append((coeff, rest, c))
        else:
            others.append(c)
    return bounds, others


def _eliminate_linear_pairs(eqs_and_more: list[Comparison], ords: list[Comparison],
                            body_free, ctx: _Ctx):
    """Rewrite `x = a*K + b` with a, b existential, 0 <= a < A, 0 <= b < K
    into 0 <= x < A*K.  The component pair enumerates [0, A*K) bijectively,
    so the projection is exact."""
    changed = False
    out_eqs = list(eqs_and_more)
    out_ords = list(ords)
    for c in list(out_eqs):
        if c.op != "=":
            continue
        d = _eq_poly(c)
        if () in d or len(d) != 3:
            continue
        single = [(k, cf) for k, cf in d.items() if len(k) == 1 and isinstance(k[0], Var)]
        multi = [(k, cf) for k, cf in d.items() if len(k) > 1]
        if len(single) != 2 or len(multi) != 1:
            continue
        (mk, mc) = multi[0]
        m_vars = [a for a in mk if isinstance(a, Var) and body_free(a.name)]
        if len(m_vars) != 1:
            continue
        a_var = m_vars[0].name
        stride_atoms = [a for a in mk if not (isinstance(a, Var) and a.name == a_var)]
        if not all(isinstance(a, Var) and a.name in ctx.sizes for a in stride_atoms):
            continue
        stride: Poly = {(): 1}
        for a in stride_atoms:
            stride = poly_mul(stride, _atom(a))
        bs = [(k[0].name, cf) for k, cf in single if body_free(k[0].name)]
        xs = [(k[0].name, cf) for k, cf in single if not body_free(k[0].name)]
        if len(bs) != 1 or len(xs) != 1:
            continue
        b_var, b_c = bs[0]
        x_var, x_c = xs[0]
        if x_var in ctx.sizes or b_c != mc or x_c != -mc or abs(mc) != 1:
            continue
        if _occurrences(a_var, out_eqs, []) != 1 or _occurrences(b_var, out_eqs, []) != 1:
            continue
        a_b, a_rest = _var_bounds(a_var, out_ords)
        b_b, b_rest = _var_bounds(b_var, out_ords)
        if a_rest or b_rest:
            continue
        a_lo = [r for k, r, _ in a_b if k == -1]
        a_hi = [r for k, r, _ in a_b if k == 1]
        b_lo = [r for k, r, _ in b_b if k == -1]
        b_hi = [r for k, r, _ in b_b if k == 1]
        if len(a_lo) != 1 or len(a_hi) != 1 or len(b_lo) != 1 or len(b_hi) != 1:
            continue
        # lower bounds must be exactly 0; upper exclusive: rest + 1 for <=0 form
        # upper fact is v - U + 1 <= 0, rest = -U + 1 => U = 1 - rest
        if poly_const(poly_scale(a_lo[0], -1)) != 0 or poly_const(poly_scale(b_lo[0], -1)) != 0:
            continue
        upper_a = poly_add({(): 1}, poly_scale(a_hi[0], -1))
        upper_b = poly_add({(): 1}, poly_scale(b_hi[0], -1))
        if upper_b != stride:
            continue
        if not _positive_poly(upper_a, ctx.sizes) or not _positive_poly(stride, ctx.sizes):
            continue
        # rewrite
        out_eqs.remove(c)
        used = {cc for _, _, cc in a_b} | {cc for _, _, cc in b_b}
        out_ords = [cc for cc in out_ords if cc not in used]
        big = poly_mul(upper_a, stride)
        lo = _emit_le(poly_scale(_atom(Var(x_var)), -1))
        hi = _emit_le(poly_add(poly_add(_atom(Var(x_var)), {(): 1}), poly_scale(big, -1)))
        for nb in (lo, hi):
            if isinstance(nb, Comparison) and nb not in out_ords:
                out_ords.append(nb)
        changed = True
    return out_eqs, out_ords, changed


def _occurrences(v: str, eqs: list[Comparison], ords: list[Comparison]) -> int:
    n = 0
    for c in eqs + ords:
        if v in (expr_vars(c.lhs) | expr_vars(c.rhs)):
            n += 1
    return n


def _positive_poly(p: Poly, sizes: frozenset[str]) -> bool:
    """Provably >= 1 assuming every size constant is >= 1."""
    if not p:
        return False
    total_min = 0
    for key, c in p.items():
        if c <= 0:
            return False
        if not all(isinstance(a, Var) and a.name in sizes for a in key):
            return False
        total_min += c
    return total_min >= 1


_ZERO = ("0",)


def _difference_form(d: Poly) -> tuple[tuple, tuple, int] | None:
    """d as x - y + c with x, y single monomials (or the zero node)."""
    c = d.get((), 0)
    terms = [(k, v) for k, v in d.items() if k != ()]
    if len(terms) > 2 or any(v not in (1, -1) for _, v in terms):
        return None
    x = y = _ZERO
    for k, v in terms:
        if v == 1:
            if x is not _ZERO:
                return None
            x = k
        else:
            if y is not _ZERO:
                return None
            y = k
    if x == y:
        return None
    return x, y, c


def _prune_transitive(ord_cmps: list[Comparison], ctx: _Ctx) -> list[Comparison]:
    """Drop ordering facts implied by chains of the others (difference-bound
    closure): e.g. (0 <= i) * (i <= j) makes (0 <= j) redundant."""
    parsed = []
    for c in ord_cmps:
        f = _difference_form(_le_poly(c))
        parsed.append((c, f))
    extra = [f for f in (_difference_form(d) for d in ctx.assume_polys) if f is not None]
    kept = [True] * len(parsed)
    for i, (c, f) in enumerate(parsed):
        if f is None:
            continue
        edges = [g for j, (_, g) in enumerate(parsed)
                 if j != i and kept[j] and g is not None] + extra
        x, y, cc = f
        if _reachable_weight(edges, y, x) <= -cc:
            kept[i] = False
    return [c for k, (c, _) in zip(kept, parsed) if k]


def _reachable_weight(edges: list[tuple[tuple, tuple, int]], src: tuple, dst: tuple) -> int:
    """Shortest-path weight from src to dst where a fact x - y + c <= 0 is
    an edge y -> x of weight -c (Bellman-Ford over few nodes)."""
    INF = 1 << 40
    nodes = {src, dst}
    for x, y, c in edges:
        nodes.add(x)
        nodes.add(y)
    dist = {n: INF for n in nodes}
    dist[src] = 0
    for _ in range(len(nodes)):
        changed = False
        for x, y, c in edges:
            if dist[y] < INF and dist[y] - c < dist[x]:
                dist[x] = dist[y] - c
                changed = True
        if not changed:
            break
    return dist[dst]


def _drop_loose_vars(eqs: list[Comparison], ords: list[Comparison],
                     neqs: list[Comparison], body_free, ctx: _Ctx):
    """Existential variables constrained only by a provably nonempty
    0-based range quantify to true; their bound factors are dropped."""
    eq_vars: set[str] = set()
    for c in eqs + neqs:
        eq_vars |= expr_vars(c.lhs) | expr_vars(c.rhs)
    candidates: set[str] = set()
    for c in ords:
        for v in expr_vars(c.lhs) | expr_vars(c.rhs):
            if body_free(v) and v not in eq_vars:
                candidates.add(v)
    dropped: set[Comparison] = set()
    out = list(ords)
    changed = False
    for v in sorted(candidates):
        bounds, others = _var_bounds(v, out)
        if others:
            continue
        lows = [r for k, r, _ in bounds if k == -1]
        his = [r for k, r, _ in bounds if k == 1]
        if not lows or not his:
            continue
        if any(poly_const(poly_scale(r, -1)) != 0 for r in lows):
            continue
        uppers = [poly_add({(): 1}, poly_scale(r, -1)) for r in his]
        if not all(_positive_poly(u, ctx.sizes) for u in uppers):
            continue
        used = {c for _, _, c in bounds}
        out = [c for c in out if c not in used]
        changed = True
    return out if changed else None


# ---------------------------------------------------------------------------
# public passes

def simplify_body(b: Body, head_args: tuple[str, ...] = (),
                  sizes: frozenset[str] = frozenset(),
                  assumes: tuple[Comparison, ...] = ()) -> Body:
    """Simplify every product, drop empty products, deduplicate, and merge
    products that differ only in adjacent ranges of one variable."""
    assume_polys = []
    for a in assumes:
        n = normalize_comparison(a)
        if isinstance(n, Comparison) and n.op in ("<", "<="):
            assume_polys.append(_le_poly(n))
    ctx = _Ctx(head_args, frozenset(sizes), assume_polys)
    out: list[Product] = []
    for prod in b:
        cur: Product | None = prod
        for _ in range(16):
            nxt = _simplify_product_once(cur, ctx)
            if nxt is None:
                cur = None
                break
            if nxt == cur:
                break
            cur = nxt
        if cur is not None and cur not in out:
            out.append(cur)
    out = _merge_adjacent_ranges(out, ctx)
    return tuple(sorted(out, key=_product_key))


def _product_key(p: Product) -> tuple:
    return tuple(("", f.tensor, f.kind.value, f.args) if isinstance(f, Access)
                 else ("~",) + _cmp_key(f) for f in p)


def _merge_adjacent_ranges(products: list[Product], ctx: _Ctx) -> list[Product]:
    """(lo <= v < m) * rest + (m <= v < hi) * rest  ->  (lo <= v < hi) * rest"""
    changed = True
    prods = list(products)
    while changed:
        changed = False
        for i in range(len(prods)):
            for j in range(len(prods)):
                if i == j:
                    continue
                merged = _try_merge(prods[i], prods[j], ctx)
                if merged is not None:
                    keep = [p for k, p in enumerate(prods) if k not in (i, j)]
                    keep.append(merged)
                    prods = keep
                    changed = True
                    break
            if changed:
                break
    return prods


def _try_merge(p1: Product, p2: Product, ctx: _Ctx) -> Product | None:
    s1, s2 = set(p1), set(p2)
    if s1 == s2:
        return None
    only1 = [f for f in p1 if f not in s2]
    only2 = [f for f in p2 if f not in s1]
    if not (1 <= len(only1) <= 2 and 1 <= len(only2) <= 2):
        return None
    if not all(isinstance(f, Comparison) and f.op in ("<", "<=") for f in only1 + only2):
        return None
    vars1 = set()
    for f in only1 + only2:
        vs = expr_vars(f.lhs) | expr_vars(f.rhs)
        vars1 |= vs
    shared_var = None
    for v in sorted(vars1):
        if all(v in (expr_vars(f.lhs) | expr_vars(f.rhs)) for f in only1 + only2):
            shared_var = v
            break
    if shared_var is None:
        return None
    b1, o1 = _var_bounds(shared_var, [f for f in only1])
    b2, o2 = _var_bounds(shared_var, [f for f in only2])
    if o1 or o2:
        return None
    up1 = [r for k, r, _ in b1 if k == 1]
    lo2 = [r for k, r, _ in b2 if k == -1]
    lo1 = [r for k, r, _ in b1 if k == -1]
    up2 = [r for k, r, _ in b2 if k == 1]
    # orientation: p1 holds the upper edge matching p2's lower edge
    for (ua, la, keep_lo, keep_hi, host, guest) in (
            (up1, lo2, lo1, up2, p1, p2), (up2, lo1, lo2, up1, p2, p1)):
        if len(ua) == 1 and len(la) == 1:
            # upper fact: v - U + 1 <= 0, rest = 1 - U ; lower fact: L - v <= 0, rest = L
            upper_val = poly_add({(): 1}, poly_scale(ua[0], -1))
            lower_val = la[0]
            if upper_val == lower_val:
                edge_facts = {c for k, r, c in (b1 + b2) if (k == 1 and r == ua[0]) or (k == -1 and r == la[0])}
                rest = [f for f in host if f not in edge_facts]
                guest_extra = [f for f in guest if f not in set(host) and f not in edge_facts]
                merged = tuple(rest) + tuple(f for f in guest_extra)
                sim = _simplify_product_once(merged, ctx)
                return sim
    return None


def simplify_rule(r: Rule, p: Program) -> Rule:
    return Rule(r.head, simplify_body(r.body, r.head.args, p.sizes, p.assumes))


def canonicalize(b: Body) -> Body:
    """Stable ordering and comparison normal form; no factor is dropped
    except constant-true comparisons folded by normalization."""
    out = []
    for prod in b:
        fs: list[Factor] = []
        empty = False
        for f in prod:
            if isinstance(f, Access):
                fs.append(f)
            else:
                n = normalize_comparison(f)
                if n is EMPTY:
                    empty = True
                    break
                if n is not TRUE:
                    fs.append(n)
        if empty:
            continue
        accesses = sorted((f for f in fs if isinstance(f, Access)),
                          key=lambda a: (a.tensor, a.kind.value, a.args))
        cmps = sorted((f for f in fs if isinstance(f, Comparison)), key=_cmp_key)
        out.append(tuple(accesses) + tuple(cmps))
    return tuple(sorted(out, key=_product_key))


def inline_program(p: Program, keep: frozenset[str] | set[str]) -> Program:
    """Substitute definitions of tensors outside `keep` into their use
    sites; only rules for kept tensors remain.  Acyclic definition order
    guarantees termination."""
    inlined: dict[tuple[str, Kind], Rule] = {}
    out_rules: list[Rule] = []
    for r in p.rules:
        cur = r
        for _ in range(FIXPOINT_CAP):
            target_keys = {(f.tensor, f.kind) for prod in cur.body
                           for f in prod if isinstance(f, Access)
                           and f.tensor not in keep and (f.tensor, f.kind) in inlined}
            if not target_keys:
                break
            for key in sorted(target_keys, key=lambda t: (t[0], t[1].value)):
                cur = substitute(cur, inlined[key], protected=p.sizes)
        inlined[(cur.head.tensor, cur.head.kind)] = cur
        if cur.head.tensor in keep:
            out_rules.append(cur)
    return Program(tuple(out_rules), dict(p.dims), p.sizes, p.assumes)


def optimize_program(p: Program, keep: frozenset[str] | set[str] | None = None) -> Program:
    """inline -> simplify -> canonicalize to a bounded fixpoint."""
    if keep is None:
        consumed = {f.tensor for r in p.rules for prod in r.body
                    for f in prod if isinstance(f, Access)}
        keep = {r.head.tensor for r in p.rules} - consumed
        keep |= {r.head.tensor for r in p.rules if r.head.kind is not Kind.PLAIN}
    cur = p
    for _ in range(FIXPOINT_CAP):
        nxt = inline_program(cur, frozenset(keep))
        nxt = Program(tuple(simplify_rule(r, nxt) for r in nxt.rules),
                      dict(nxt.dims), nxt.sizes, nxt.assumes)
        nxt = Program(tuple(Rule(r.head, canonicalize(r.body)) for r in nxt.rules),
                      dict(nxt.dims), nxt.sizes, nxt.assumes)
        if nxt == cur:
            break
        cur = nxt
    return cur
