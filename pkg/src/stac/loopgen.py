"""Loop-nest construction from optimized rules and rendering as portable
C-family source.

Variables are ordered syntactically (head order, then first body occurrence)
and each variable's range is the maximum of its lower bounds and the minimum
of its upper bounds; equality-determined variables become let bindings
instead of loops.  One compute nest is built per product, iterating the
compressed domain and accumulating into the output; reconstruction nests
copy redundancy-mapped values afterwards.  A small evaluator executes the
loop IR directly so kernels can be checked against the dense interpreter
without a compiler in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    Access, Arith, Body, Comparison, Const, IndexExpr, Kind, Product,
    Program, Rule, Var, expr_vars, substitute,
)
from .interp import DenseTensor, OpCounter, eval_expr, eval_cmp, _strides
from .optimizer import (
    Poly, _difference_form, _le_poly, _poly_subst, _positive_poly,
    _reachable_weight, emit_poly, normalize_comparison, poly_add, poly_const,
    poly_of, poly_scale, poly_vars, simplify_body, TRUE, EMPTY,
)
from .structure import StructureInfo

__all__ = ["Loop", "Let", "Guard", "LoopNest", "KernelUnit",
           "UnboundedVariableError", "order_variables", "compute_bounds",
           "build_kernel", "render", "run_kernel"]


class UnboundedVariableError(Exception):
    def __init__(self, var: str, where: str):
        super().__init__(f"variable {var!r} has no finite bounds in {where}")
        self.var = var


@dataclass
class Loop:
    var: str
    lowers: tuple[IndexExpr, ...]   # inclusive; effective bound is the max
    uppers: tuple[IndexExpr, ...]   # exclusive; effective bound is the min


@dataclass
class Let:
    var: str
    expr: IndexExpr


@dataclass
class Guard:
    cmp: Comparison


@dataclass
class LoopNest:
    steps: tuple[Loop | Let | Guard, ...]
    out: str
    out_args: tuple[str, ...]
    reads: tuple[Access, ...]       # empty for pure copies
    src_args: tuple[str, ...] = ()  # reconstruction: out[out_args] = out[src_args]

    @property
    def is_copy(self) -> bool:
        return bool(self.src_args)


@dataclass
class KernelUnit:
    name: str
    inputs: tuple[tuple[str, tuple[IndexExpr, ...]], ...]
    output: tuple[str, tuple[IndexExpr, ...]]
    sizes: tuple[str, ...]
    compute: list[LoopNest]
    reconstruct: list[LoopNest]


# ---------------------------------------------------------------------------
# variable order and bounds

def order_variables(r: Rule) -> list[str]:
    """Head variables in head order, then body-only variables in first
    occurrence order (per the first product)."""
    out = list(r.head.args)
    prods = r.body or ((),)
    for f in prods[0]:
        vs = f.args if isinstance(f, Access) else _expr_order(f.lhs) + _expr_order(f.rhs)
        for v in vs:
            if v not in out:
                out.append(v)
    return out


def _expr_order(e: IndexExpr) -> tuple[str, ...]:
    if isinstance(e, Var):
        return (e.name,)
    if isinstance(e, Const):
        return ()
    return _expr_order(e.lhs) + _expr_order(e.rhs)


def _product_order(head_args: tuple[str, ...], prod: Product, sizes) -> list[str]:
    out = [v for v in head_args]
    for f in prod:
        vs = f.args if isinstance(f, Access) else _expr_order(f.lhs) + _expr_order(f.rhs)
        for v in vs:
            if v not in out and v not in sizes:
                out.append(v)
    return out


def compute_bounds(prod: Product, order: list[str], program: Program,
                   dims_of_access=None, where: str = "kernel") -> tuple[Loop | Let | Guard, ...]:
    """Absorb each comparison as a loop bound or let binding of its
    innermost-feasible variable under `order`; anything unabsorbable stays a
    guard placed as early as possible.  A comparison contributes a bound
    only when linear with unit coefficient in the bound variable."""
    sizes = set(program.sizes)
    comparisons = []
    for f in prod:
        if isinstance(f, Comparison):
            n = normalize_comparison(f)
            if n is TRUE:
                continue
            if n is EMPTY:
                return (Guard(Comparison(Const(0), "=", Const(1))),)
            comparisons.append(n)
    accesses = [f for f in prod if isinstance(f, Access)]

    # access-extent bound candidates per variable
    ext_lo: dict[str, list[Poly]] = {}
    ext_hi: dict[str, list[Poly]] = {}
    for a in accesses:
        ds = _dims_for(a, program, dims_of_access)
        if ds is None:
            continue
        for v, d in zip(a.args, ds):
            ext_lo.setdefault(v, []).append({})
            ext_hi.setdefault(v, []).append(poly_of(d))

    assigned: set[str] = set(sizes)
    steps: list[Loop | Let | Guard] = []
    lets: dict[str, Poly] = {}
    facts: list[Poly] = [_le_poly(a) for a in program.assumes if a.op in ("<", "<=")]
    consumed: set[int] = set()

    def subst(p: Poly) -> Poly:
        return _poly_subst(p, lets) if lets and (poly_vars(p) & lets.keys()) else p

    def emit_guard(c: Comparison) -> None:
        if c.op in ("<", "<="):
            d = subst(_le_poly(c))
            k = poly_const(d)
            if k is not None and k <= 0:
                return
            df = _difference_form(d)
            if df is not None:
                x, y, cc = df
                if _reachable_weight([f2 for f2 in map(_difference_form, facts) if f2], y, x) <= -cc:
                    return
            facts.append(d)
        elif c.op == "=":
            d = subst(poly_add(poly_of(c.lhs), poly_scale(poly_of(c.rhs), -1)))
            if poly_const(d) == 0:
                return
        steps.append(Guard(c))

    for v in order:
        # 1. equality determination
        det: Poly | None = None
        for idx, c in enumerate(comparisons):
            if idx in consumed or c.op != "=":
                continue
            d = poly_add(poly_of(c.lhs), poly_scale(poly_of(c.rhs), -1))
            coeff = d.get((Var(v),))
            if coeff not in (1, -1):
                continue
            rest = poly_add(d, poly_scale({(Var(v),): coeff}, -1))
            if v in poly_vars(rest):
                continue
            if poly_vars(rest) <= assigned:
                det = poly_scale(rest, -coeff)
                consumed.add(idx)
                break
        if det is None:
            det = _divmod_let(v, comparisons, consumed, assigned, sizes, order)
        if det is not None:
            steps.append(Let(v, emit_poly(subst(det))))
            lets[v] = subst(det)
            assigned.add(v)
            continue
        # 2. loop bounds
        lowers: list[Poly] = list(ext_lo.get(v, []))
        uppers: list[Poly] = list(ext_hi.get(v, []))
        for idx, c in enumerate(comparisons):
            if idx in consumed or c.op not in ("<", "<="):
                continue
            d = _le_poly(c)
            coeff = d.get((Var(v),))
            if coeff not in (1, -1):
                continue
            rest = poly_add(d, poly_scale({(Var(v),): coeff}, -1))
            if v in poly_vars(rest) or not (poly_vars(rest) <= assigned):
                continue
            if coeff == 1:
                uppers.append(poly_add({(): 1}, poly_scale(rest, -1)))  # v < 1 - rest
            else:
                lowers.append(rest)  # rest <= v
            consumed.add(idx)
        lowers = _dedupe([subst(x) for x in lowers])
        uppers = _dedupe([subst(x) for x in uppers])
        if not lowers or not uppers:
            dlo, dhi = _derive_bounds(v, comparisons, ext_lo, ext_hi, lets, assigned)
            lowers = _dedupe(lowers + dlo)
            uppers = _dedupe(uppers + dhi)
        if not lowers or not uppers:
            raise UnboundedVariableError(v, where)
        lowers = _prune_lowers(lowers, steps, sizes)
        for lo in lowers:
            facts.append(poly_add(lo, poly_scale({(Var(v),): 1}, -1)))  # lo - v <= 0
        for hi in uppers:
            facts.append(poly_add(poly_add({(Var(v),): 1}, {(): 1}), poly_scale(hi, -1)))
        steps.append(Loop(v, tuple(emit_poly(x) for x in lowers),
                          tuple(emit_poly(x) for x in uppers)))
        assigned.add(v)

    for idx, c in enumerate(comparisons):
        if idx not in consumed:
            emit_guard(c)
    return tuple(steps)


def _derive_bounds(v: str, comparisons, ext_lo, ext_hi, lets, assigned):
    """Bounds for v implied transitively by the product's two-term ordering
    facts, e.g. (0 <= j) * (j < i) yields the lower bound 1 for i.  The
    source facts stay enforced as other variables' bounds, so widening is
    impossible and only already-empty iterations are cut."""
    edges = []
    nodes: set[tuple] = {_ZERO_NODE}

    def add_fact(d: Poly) -> None:
        if lets and (poly_vars(d) & lets.keys()):
            d = _poly_subst(d, lets)
        f = _difference_form(d)
        if f is not None:
            edges.append(f)
            nodes.add(f[0])
            nodes.add(f[1])

    for c in comparisons:
        if c.op in ("<", "<="):
            add_fact(_le_poly(c))
    for u, his in ext_hi.items():
        add_fact({(Var(u),): -1})
        for hi in his:
            add_fact(poly_add(poly_add({(Var(u),): 1}, {(): 1}), poly_scale(hi, -1)))

    me = (Var(v),)
    lowers: list[Poly] = []
    uppers: list[Poly] = []
    for t in sorted(nodes, key=lambda n: str(n)):
        if t == me:
            continue
        tvars = set()
        for atom in (t if t != _ZERO_NODE else ()):
            tvars |= expr_vars(atom)
        if not (tvars <= assigned):
            continue
        t_poly: Poly = {} if t == _ZERO_NODE else {t: 1}
        w = _reachable_weight(edges, me, t)
        if w < (1 << 39):  # t - v <= w  =>  v >= t - w
            lowers.append(poly_add(t_poly, {(): -w} if w else {}))
        w = _reachable_weight(edges, t, me)
        if w < (1 << 39):  # v - t <= w  =>  v < t + w + 1
            uppers.append(poly_add(t_poly, {(): w + 1}))
    return lowers, uppers


_ZERO_NODE = ("0",)


def _dims_for(a: Access, program: Program, dims_of_access):
    if dims_of_access is not None:
        got = dims_of_access(a)
        if got is not None:
            return got
    ds = program.dims.get(a.tensor)
    if ds is None:
        return None
    return ds + ds if a.kind is Kind.REDUNDANCY else ds


def _dedupe(ps: list[Poly]) -> list[Poly]:
    out: list[Poly] = []
    for p in ps:
        if p not in out:
            out.append(p)
    return out


def _prune_lowers(lowers: list[Poly], steps, sizes) -> list[Poly]:
    """Drop constant-zero lower bounds dominated by a loop variable that is
    itself nonnegative (every kernel loop here starts at zero or above)."""
    if len(lowers) <= 1:
        return lowers
    nonneg_vars = {s.var for s in steps if isinstance(s, Loop)}
    others = [p for p in lowers if poly_const(p) != 0]
    if others and all(len(p) == 1 and next(iter(p)) != () and
                      all(isinstance(a, Var) and (a.name in nonneg_vars or a.name in sizes)
                          for a in next(iter(p))) and next(iter(p.values())) > 0
                      for p in others):
        return others
    return lowers


def _divmod_let(v: str, comparisons, consumed: set[int], assigned: set[str],
                sizes, order) -> Poly | None:
    """x = a*K + b with x assigned, 0 <= b < K present: a is determined as
    x / K (floor); b falls out later as a plain linear solve."""
    for idx, c in enumerate(comparisons):
        if idx in consumed or c.op != "=":
            continue
        d = poly_add(poly_of(c.lhs), poly_scale(poly_of(c.rhs), -1))
        for key, coeff in d.items():
            if len(key) < 2 or coeff not in (1, -1):
                continue
            vs = [a for a in key if isinstance(a, Var) and a.name == v]
            if len(vs) != 1:
                continue
            stride_atoms = [a for a in key if not (isinstance(a, Var) and a.name == v)]
            if not all(isinstance(a, Var) and a.name in sizes for a in stride_atoms):
                continue
            stride: Poly = {(): 1}
            for a in stride_atoms:
                stride = poly_mul_single(stride, a)
            rest = poly_add(d, poly_scale({key: coeff}, -1))
            # rest = -coeff * (x - b): need exactly one assigned unit var x and
            # one unassigned unit var b with range [0, K)
            unit = [(k, c2) for k, c2 in rest.items() if len(k) == 1 and isinstance(k[0], Var)]
            if len(rest) != 2 or len(unit) != 2:
                continue
            xs = [(k[0].name, c2) for k, c2 in unit if k[0].name in assigned]
            bs = [(k[0].name, c2) for k, c2 in unit if k[0].name not in assigned and k[0].name != v]
            if len(xs) != 1 or len(bs) != 1:
                continue
            x_name, x_c = xs[0]
            b_name, b_c = bs[0]
            if x_c != -coeff or b_c != coeff:
                continue
            if not _has_range(b_name, stride, comparisons):
                continue
            x_poly: Poly = {(Var(x_name),): 1}
            return {(Arith("/", emit_poly(x_poly), emit_poly(stride)),): 1}
    return None


def poly_mul_single(p: Poly, atom) -> Poly:
    from .optimizer import poly_mul, _atom
    return poly_mul(p, _atom(atom))


def _has_range(b: str, stride: Poly, comparisons) -> bool:
    has_lo = has_hi = False
    for c in comparisons:
        if c.op not in ("<", "<="):
            continue
        d = _le_poly(c)
        coeff = d.get((Var(b),))
        if coeff not in (1, -1):
            continue
        rest = poly_add(d, poly_scale({(Var(b),): coeff}, -1))
        if coeff == -1 and poly_const(rest) == 0:
            has_lo = True
        if coeff == 1 and poly_add({(): 1}, poly_scale(rest, -1)) == stride:
            has_hi = True
    return has_lo and has_hi


# ---------------------------------------------------------------------------
# kernels

def build_kernel(target: Rule, structures, program: Program | None = None,
                 name: str | None = None) -> KernelUnit:
    """Compile one output rule: plain accesses are replaced by compressed
    accesses restricted to their unique sets (the lossless rewrite), the
    output domain is restricted to its unique set, and one nest is emitted
    per product; reconstruction nests come from the output redundancy map."""
    ctx = structures
    p = program if program is not None else ctx.program
    out_name = name or target.head.tensor
    out_info: StructureInfo = ctx.structures[target.head.tensor]
    head_args = target.head.args

    compute: list[LoopNest] = []
    seen_inputs: list[str] = []
    for prod in target.body:
        rewritten: list = []
        for f in prod:
            if isinstance(f, Access):
                info = ctx.structures.get(f.tensor)
                rewritten.append(Access(f.tensor, Kind.COMPRESSED, f.args))
                if f.tensor not in seen_inputs:
                    seen_inputs.append(f.tensor)
                if info is not None:
                    rewritten.extend(_instantiated_body(info.unique, f.args, p))
            else:
                rewritten.append(f)
        rewritten.extend(_instantiated_body(out_info.unique, head_args, p))
        simplified = simplify_body((tuple(rewritten),), head_args, p.sizes, p.assumes)
        for sprod in simplified:
            order = _product_order(head_args, sprod, set(p.sizes))
            steps = compute_bounds(sprod, order, p, where=f"compute nest of {out_name}")
            reads = tuple(f for f in sprod if isinstance(f, Access))
            compute.append(LoopNest(steps, out_name, head_args, reads))

    reconstruct: list[LoopNest] = []
    r_rule = out_info.redundancy
    k = len(head_args)
    r_args = r_rule.head.args
    for prod in r_rule.body:
        order = _product_order(r_args, prod, set(p.sizes))
        steps = compute_bounds(prod, order, p,
                               dims_of_access=None,
                               where=f"reconstruction nest of {out_name}")
        reconstruct.append(LoopNest(steps, out_name, r_args[:k], (), r_args[k:]))

    input_decls = tuple((t, p.dims[t]) for t in seen_inputs)
    return KernelUnit(out_name, input_decls, (out_name, p.dims[out_name]),
                      tuple(p.sizes), compute, reconstruct)


def _instantiated_body(defn: Rule, args: tuple[str, ...], p: Program) -> list:
    host = Rule(Access("%host", Kind.PLAIN, args),
                ((Access(defn.head.tensor, defn.head.kind, args),),))
    inlined = substitute(host, defn, protected=p.sizes)
    if len(inlined.body) != 1:
        raise UnboundedVariableError("?", f"unique set of {defn.head.tensor} "
                                     f"is not a single product")
    return [f for f in inlined.body[0] if isinstance(f, Comparison)]


# ---------------------------------------------------------------------------
# hoisting

def read_bindings(nest: LoopNest) -> list[tuple[int, str, Access]]:
    """(insert-after-step-index, name, access): each read is bound at the
    outermost point where all of its indices are known."""
    out = []
    bind_depth: dict[str, int] = {}
    for i, s in enumerate(nest.steps):
        if isinstance(s, (Loop, Let)):
            bind_depth[s.var] = i
    for n, a in enumerate(nest.reads):
        depth = -1
        for v in a.args:
            depth = max(depth, bind_depth.get(v, -1))
        out.append((depth, f"v{n}", a))
    return out


# ---------------------------------------------------------------------------
# loop-IR evaluation

def run_kernel(k: KernelUnit, sizes: dict[str, int],
               inputs: dict[str, DenseTensor], mode: str = "int",
               counter: OpCounter | None = None, hoist: bool = True) -> DenseTensor:
    """Execute the loop IR: zero output, run compute nests (accumulating),
    then reconstruction nests (copying)."""
    import numpy as np
    out_dims = tuple(eval_expr(d, sizes) for d in k.output[1])
    out = DenseTensor.zeros(out_dims, mode)
    out_strides = _strides(out_dims)
    arrays = {}
    strides = {}
    for name, dexprs in k.inputs:
        t = inputs[name]
        want = tuple(eval_expr(d, sizes) for d in dexprs)
        if t.dims != want:
            raise ValueError(f"input {name}: dims {t.dims}, expected {want}")
        arrays[name] = t.data
        strides[name] = _strides(t.dims)
    touched: set[int] = set()

    for nest in k.compute:
        bindings = read_bindings(nest) if hoist else None
        _run_nest(nest, sizes, arrays, strides, out, out_strides, counter,
                  touched, bindings)
    for nest in k.reconstruct:
        _run_nest(nest, sizes, arrays, strides, out, out_strides, None,
                  touched, None)
    return out


def _run_nest(nest: LoopNest, sizes, arrays, strides, out: DenseTensor,
              out_strides, counter: OpCounter | None, touched: set[int],
              bindings) -> None:
    env: dict[str, int] = dict(sizes)
    hoisted: dict[str, object] = {}
    by_depth: dict[int, list] = {}
    if bindings is not None:
        for depth, nm, acc in bindings:
            by_depth.setdefault(depth, []).append((nm, acc))

    def read(acc: Access):
        data = arrays[acc.tensor]
        st = strides[acc.tensor]
        flat = 0
        for v, s in zip(acc.args, st):
            flat += env[v] * s
        return data[flat]

    def body() -> None:
        if nest.is_copy:
            src = sum(env[v] * s for v, s in zip(nest.src_args, out_strides))
            dst = sum(env[v] * s for v, s in zip(nest.out_args, out_strides))
            out.data[dst] = out.data[src]
            return
        if bindings is not None:
            vals = [hoisted[nm] for _, nm, _ in bindings]
        else:
            vals = [read(a) for a in nest.reads]
        acc = vals[0]
        for v in vals[1:]:
            acc = acc * v
        dst = sum(env[v] * s for v, s in zip(nest.out_args, out_strides))
        if counter is not None:
            counter.iterations += 1
            counter.multiplications += max(0, len(vals) - 1)
            if dst in touched:
                counter.additions += 1
        touched.add(dst)
        out.data[dst] += acc

    def run(i: int) -> None:
        if i == len(nest.steps):
            body()
            return
        step = nest.steps[i]
        if isinstance(step, Guard):
            if eval_cmp(step.cmp, env):
                run(i + 1)
            return
        if isinstance(step, Let):
            env[step.var] = eval_expr(step.expr, env)
            _bind(i)
            run(i + 1)
            return
        lo = max(eval_expr(e, env) for e in step.lowers)
        hi = min(eval_expr(e, env) for e in step.uppers)
        for val in range(lo, hi):
            env[step.var] = val
            _bind(i)
            run(i + 1)

    def _bind(i: int) -> None:
        if bindings is None:
            return
        for depth, nm, acc in bindings:
            if depth == i:
                hoisted[nm] = read(acc)

    if bindings is not None:
        for depth, nm, acc in bindings:
            if depth == -1:
                hoisted[nm] = read(acc)
    run(0)


# ---------------------------------------------------------------------------
# rendering

_C_IDENT = {}


def _cname(v: str) -> str:
    out = v.replace("'", "p").replace("%", "_b")
    if out and out[0].isdigit():
        out = "_" + out
    return out


def _c_expr(e: IndexExpr, level: int = 0, right: bool = False) -> str:
    if isinstance(e, Var):
        return _cname(e.name)
    if isinstance(e, Const):
        return str(e.value)
    lvl = {"+": 1, "-": 1, "*": 2, "/": 2, "%": 2}[e.op]
    s = f"{_c_expr(e.lhs, lvl)} {e.op} {_c_expr(e.rhs, lvl, True)}"
    return f"({s})" if lvl < level or (lvl == level and right) else s


def _c_bound(exprs: tuple[IndexExpr, ...], combiner: str) -> str:
    parts = [_c_expr(e) for e in exprs]
    out = parts[0]
    for nxt in parts[1:]:
        out = f"{combiner}({out}, {nxt})"
    return out


_CMP_C = {"=": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}


def _c_flat(name: str, args: tuple[str, ...], dims: tuple[IndexExpr, ...]) -> str:
    if not args:
        return f"{_cname(name)}[0]"
    idx = _cname(args[0])
    for v, d in zip(args[1:], dims[1:]):
        idx = f"({idx}) * {_c_expr(d, 2)} + {_cname(v)}"
    return f"{_cname(name)}[{idx}]"


def render(k: KernelUnit, mode: str = "int", hoist: bool = True) -> str:
    """Deterministic, self-contained C source for one kernel."""
    elem = "int64_t" if mode == "int" else "double"
    lines: list[str] = []
    w = lines.append
    w(f"// kernel: {k.name}")
    w(f"// inputs: {' '.join(n for n, _ in k.inputs)}")
    w(f"// sizes: {' '.join(k.sizes)}")
    out_dims = " ".join(_c_expr(d) for d in k.output[1])
    w(f"// output: {k.name} order {len(k.output[1])} dims {out_dims}")
    w(f"// mode: {mode}")
    w("#include <stdint.h>")
    w("")
    w(f"typedef {elem} elem_t;")
    w("")

    sig_in = ", ".join(f"const elem_t* {_cname(n)}" for n, _ in k.inputs)
    sig_sizes = ", ".join(f"int64_t {_cname(s)}" for s in k.sizes)
    parts = [p for p in (sig_in, f"elem_t* {_cname(k.name)}_out", sig_sizes) if p]
    w(f"void {_cname(k.name)}_compute({', '.join(parts)}) {{")
    total = "1"
    for d in k.output[1]:
        total = f"{total} * {_c_expr(d, 2)}" if total != "1" else _c_expr(d, 2)
    w(f"  for (int64_t _z = 0; _z < {total or '1'}; ++_z) {_cname(k.name)}_out[_z] = 0;")
    dims_by_name = {n: ds for n, ds in k.inputs}
    for nest in k.compute:
        _render_nest(w, nest, k, dims_by_name, hoist, iters=False)
    w("}")
    w("")
    parts_r = [p for p in (f"elem_t* {_cname(k.name)}_out", sig_sizes) if p]
    w(f"void {_cname(k.name)}_reconstruct({', '.join(parts_r)}) {{")
    for nest in k.reconstruct:
        _render_nest(w, nest, k, dims_by_name, hoist=False, iters=False)
    w("}")
    w("")
    w(f"int64_t {_cname(k.name)}_compute_iters({sig_sizes or 'void'}) {{")
    w("  int64_t iters = 0;")
    for nest in k.compute:
        _render_nest(w, nest, k, dims_by_name, hoist=False, iters=True)
    w("  return iters;")
    w("}")
    return "\n".join(lines) + "\n"


def _render_nest(w, nest: LoopNest, k: KernelUnit, dims_by_name, hoist: bool,
                 iters: bool) -> None:
    depth = 1
    ind = lambda: "  " * depth
    bindings = read_bindings(nest) if (hoist and not nest.is_copy and not iters) else []
    by_depth: dict[int, list] = {}
    for d, nm, acc in bindings:
        by_depth.setdefault(d, []).append((nm, acc))

    def emit_binds(i: int) -> None:
        for nm, acc in by_depth.get(i, []):
            w(f"{ind()}const elem_t {nm} = {_c_flat(acc.tensor, acc.args, dims_by_name[acc.tensor])};")

    opened = 0
    emit_binds(-1)
    for i, step in enumerate(nest.steps):
        if isinstance(step, Loop):
            lo = _c_bound(step.lowers, "max_i64")
            hi = _c_bound(step.uppers, "min_i64")
            w(f"{ind()}for (int64_t {_cname(step.var)} = {lo}; {_cname(step.var)} < {hi}; ++{_cname(step.var)}) {{")
            depth += 1
            opened += 1
        elif isinstance(step, Let):
            w(f"{ind()}const int64_t {_cname(step.var)} = {_c_expr(step.expr)};")
        else:
            w(f"{ind()}if ({_c_expr(step.cmp.lhs)} {_CMP_C[step.cmp.op]} {_c_expr(step.cmp.rhs)}) {{")
            depth += 1
            opened += 1
        emit_binds(i)
    out_dims = k.output[1]
    if iters:
        w(f"{ind()}iters += 1;")
    elif nest.is_copy:
        dst = _c_flat(k.name + "_out", nest.out_args, out_dims)
        src = _c_flat(k.name + "_out", nest.src_args, out_dims)
        w(f"{ind()}{dst} = {src};")
    else:
        if bindings:
            prod = " * ".join(nm for _, nm, _ in bindings)
        else:
            prod = " * ".join(_c_flat(a.tensor, a.args, dims_by_name[a.tensor])
                              for a in nest.reads)
        dst = _c_flat(k.name + "_out", nest.out_args, out_dims)
        w(f"{ind()}{dst} += {prod};")
    for _ in range(opened):
        depth -= 1
        w(f"{ind()}}}")


C_HELPERS = """static inline int64_t max_i64(int64_t a, int64_t b) { return a > b ? a : b; }
static inline int64_t min_i64(int64_t a, int64_t b) { return a < b ? a : b; }
"""


def render_with_helpers(k: KernelUnit, mode: str = "int", hoist: bool = True) -> str:
    text = render(k, mode, hoist)
    lines = text.split("\n")
    idx = lines.index("#include <stdint.h>")
    lines.insert(idx + 1, C_HELPERS)
    return "\n".join(lines)
