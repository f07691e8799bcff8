"""Dense reference interpreter: the brute-force oracle.

Evaluates rule programs over concrete sizes by enumerating, per product, all
assignments of its variables that satisfy the comparisons, multiplying the
accessed values, and summing contributions into the head position.  Body
variables absent from the head are thereby marginalized.  Unique-set and
redundancy-map rules evaluate in boolean mode.

Enumeration is constraint-driven: a variable bound by an equality whose
other operands are already assigned is computed, not looped, so operation
counts reflect one product evaluation per satisfying assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .ir import (
    Access, Arith, Body, Comparison, Const, IndexExpr, Kind, Product,
    Program, Rule, Var, expr_vars,
)
from .rng import SplitMix64
from .structure import StructureInfo

__all__ = [
    "DenseTensor", "OpCounter", "EvalError", "MissingInputError",
    "EnumerationError", "eval_program", "eval_set", "eval_redundancy_map",
    "count_ops", "count_points", "check_properties", "PropertyReport",
    "random_conforming", "random_dense", "read_tensor_file",
    "write_tensor_file", "format_tensor",
]


class EvalError(Exception):
    pass


class MissingInputError(EvalError):
    pass


class EnumerationError(EvalError):
    pass


@dataclass
class DenseTensor:
    """Flat row-major storage plus extents."""

    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        size = 1
        for d in self.dims:
            if d <= 0:
                raise EvalError(f"nonpositive dimension {d}")
            size *= d
        if self.data.size != size:
            raise EvalError(f"data length {self.data.size} != prod(dims) {size}")

    @staticmethod
    def zeros(dims: tuple[int, ...], mode: str = "int") -> "DenseTensor":
        size = int(np.prod(dims)) if dims else 1
        dtype = np.int64 if mode == "int" else np.float64
        return DenseTensor(dims, np.zeros(size, dtype=dtype))

    def reshaped(self) -> np.ndarray:
        return self.data.reshape(self.dims)


@dataclass
class OpCounter:
    multiplications: int = 0
    additions: int = 0
    iterations: int = 0


# ---------------------------------------------------------------------------
# expression evaluation

def eval_expr(e: IndexExpr, env: dict[str, int]) -> int:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EnumerationError(f"unbound variable {e.name!r}") from None
    a = eval_expr(e.lhs, env)
    b = eval_expr(e.rhs, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if b == 0:
            raise EvalError("division by zero in index expression")
        return a // b
    if b == 0:
        raise EvalError("modulo by zero in index expression")
    return a % b


_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def eval_cmp(c: Comparison, env: dict[str, int]) -> bool:
    return _CMP[c.op](eval_expr(c.lhs, env), eval_expr(c.rhs, env))


# ---------------------------------------------------------------------------
# product enumeration plans

@dataclass
class _LoopStep:
    var: str
    lowers: list[IndexExpr]      # inclusive
    uppers: list[IndexExpr]      # exclusive


@dataclass
class _DetStep:
    var: str
    source: IndexExpr            # side containing var, solved at run time
    target: IndexExpr            # fully-assigned side
    lowers: list[IndexExpr] = field(default_factory=list)
    uppers: list[IndexExpr] = field(default_factory=list)


@dataclass
class _CheckStep:
    cmp: Comparison


_Step = _LoopStep | _DetStep | _CheckStep


def _count_var(e: IndexExpr, v: str) -> int:
    if isinstance(e, Var):
        return 1 if e.name == v else 0
    if isinstance(e, Const):
        return 0
    return _count_var(e.lhs, v) + _count_var(e.rhs, v)


def _solvable_path(e: IndexExpr, v: str) -> bool:
    """True if `e` mentions v exactly once, reachable through +, -, * only."""
    if isinstance(e, Var):
        return e.name == v
    if isinstance(e, Const):
        return False
    if v not in expr_vars(e):
        return False
    if e.op in ("/", "%"):
        return False
    in_l = v in expr_vars(e.lhs)
    in_r = v in expr_vars(e.rhs)
    if in_l and in_r:
        return False
    return _solvable_path(e.lhs if in_l else e.rhs, v)


def _solve(e: IndexExpr, v: str, target: int, env: dict[str, int]) -> int | None:
    """Integer x with eval(e[v := x]) == target, or None if none exists."""
    if isinstance(e, Var):
        return target
    assert isinstance(e, Arith)
    in_l = v in expr_vars(e.lhs)
    sub, other = (e.lhs, e.rhs) if in_l else (e.rhs, e.lhs)
    o = eval_expr(other, env)
    if e.op == "+":
        return _solve(sub, v, target - o, env)
    if e.op == "-":
        return _solve(sub, v, target + o if in_l else o - target, env)
    if e.op == "*":
        if o == 0:
            return None
        if target % o != 0:
            return None
        return _solve(sub, v, target // o, env)
    return None


@dataclass
class _Plan:
    steps: list[_Step]
    accesses: list[Access]
    head_args: tuple[str, ...]


def _build_plan(head: Access, prod: Product, program: Program,
                sizes: dict[str, int]) -> _Plan:
    """Static enumeration order for one product.  Raises EnumerationError if
    some variable has no finite domain."""
    accesses = [f for f in prod if isinstance(f, Access)]
    comparisons = [f for f in prod if isinstance(f, Comparison)]

    variables: list[str] = []

    def note(v: str) -> None:
        if v not in sizes and v not in variables:
            variables.append(v)

    for a in self_and_accesses(head, accesses):
        for v in a.args:
            note(v)
    for c in comparisons:
        for v in sorted(expr_vars(c.lhs) | expr_vars(c.rhs)):
            note(v)

    # bound sources: (lower inclusive, upper exclusive) per var
    bounds: dict[str, list[tuple[IndexExpr, IndexExpr]]] = {v: [] for v in variables}
    for a in self_and_accesses(head, accesses):
        ds = _access_dims(a, program)
        if ds is None:
            continue
        for v, d in zip(a.args, ds):
            if v in bounds:
                bounds[v].append((Const(0), d))

    lowers: dict[str, list[IndexExpr]] = {v: [lo for lo, _ in bounds[v]] for v in variables}
    uppers: dict[str, list[IndexExpr]] = {v: [hi for _, hi in bounds[v]] for v in variables}
    for c in comparisons:
        _harvest_bound(c, lowers, uppers)

    first_occurrence = {v: i for i, v in enumerate(variables)}
    assigned: set[str] = set(sizes)
    steps: list[_Step] = []
    pending = list(comparisons)

    def flush_checks() -> None:
        nonlocal pending
        rest = []
        for c in pending:
            vs = expr_vars(c.lhs) | expr_vars(c.rhs)
            if vs <= assigned:
                steps.append(_CheckStep(c))
            else:
                rest.append(c)
        pending = rest

    remaining = [v for v in variables]
    while remaining:
        flush_checks()
        # equality-determined variable?
        det = None
        for c in comparisons:
            if c.op != "=":
                continue
            vs = (expr_vars(c.lhs) | expr_vars(c.rhs)) - assigned
            if len(vs) != 1:
                continue
            (v,) = vs
            in_l = v in expr_vars(c.lhs)
            source, target = (c.lhs, c.rhs) if in_l else (c.rhs, c.lhs)
            if _count_var(source, v) == 1 and not (v in expr_vars(target)) and _solvable_path(source, v):
                det = (v, source, target)
                break
        if det is not None:
            v, source, target = det
            step = _DetStep(v, source, target)
            step.lowers = [lo for lo in lowers.get(v, []) if expr_vars(lo) <= assigned]
            step.uppers = [hi for hi in uppers.get(v, []) if expr_vars(hi) <= assigned]
            steps.append(step)
            assigned.add(v)
            remaining.remove(v)
            continue
        # loop variable: needs at least one evaluable lower and upper
        candidates = []
        for v in remaining:
            los = [lo for lo in lowers.get(v, []) if expr_vars(lo) <= assigned]
            his = [hi for hi in uppers.get(v, []) if expr_vars(hi) <= assigned]
            if los and his:
                candidates.append((v, los, his))
        if not candidates:
            raise EnumerationError(
                f"variables {sorted(remaining)} have no finite domain in product "
                f"of rule {head.tensor}{head.kind.suffix}")

        def estimate(item) -> tuple[int, int]:
            v, los, his = item
            static_lo = max((eval_expr(lo, sizes) for lo in los if expr_vars(lo) <= set(sizes)), default=0)
            static_hi = min((eval_expr(hi, sizes) for hi in his if expr_vars(hi) <= set(sizes)), default=1 << 40)
            return (max(static_hi - static_lo, 0), first_occurrence[v])

        v, los, his = min(candidates, key=estimate)
        steps.append(_LoopStep(v, los, his))
        assigned.add(v)
        remaining.remove(v)
    flush_checks()
    assert not pending
    return _Plan(steps, accesses, head.args)


def self_and_accesses(head: Access, accesses: list[Access]) -> list[Access]:
    return [head, *accesses]


def _access_dims(a: Access, program: Program) -> tuple[IndexExpr, ...] | None:
    ds = program.dims.get(a.tensor)
    if ds is None:
        return None
    if a.kind is Kind.REDUNDANCY:
        return ds + ds
    return ds


def _harvest_bound(c: Comparison, lowers: dict[str, list[IndexExpr]],
                   uppers: dict[str, list[IndexExpr]]) -> None:
    """Direct bounds: comparisons with a bare variable on one side."""
    pairs = []
    if c.op in ("<", "<="):
        pairs.append((c.lhs, c.op, c.rhs))
    elif c.op in (">", ">="):
        pairs.append((c.rhs, "<" if c.op == ">" else "<=", c.lhs))
    elif c.op == "=":
        pairs.append((c.lhs, "=", c.rhs))
        pairs.append((c.rhs, "=", c.lhs))
    for lo_side, op, hi_side in pairs:
        if isinstance(lo_side, Var) and lo_side.name in uppers:
            v = lo_side.name
            if op == "<":
                uppers[v].append(hi_side)
            elif op == "<=":
                uppers[v].append(Arith("+", hi_side, Const(1)))
            else:  # =
                uppers[v].append(Arith("+", hi_side, Const(1)))
                lowers[v].append(hi_side)
        if isinstance(hi_side, Var) and hi_side.name in lowers and op != "=":
            v = hi_side.name
            if op == "<":
                lowers[v].append(Arith("+", lo_side, Const(1)))
            else:
                lowers[v].append(lo_side)


def _enumerate(plan: _Plan, env: dict[str, int], counter: OpCounter | None) -> Iterator[dict[str, int]]:
    """Yield the environment at every satisfying assignment."""
    steps = plan.steps
    n = len(steps)

    def rec(i: int) -> Iterator[dict[str, int]]:
        if i == n:
            if counter is not None:
                counter.iterations += 1
                counter.multiplications += max(0, len(plan.accesses) - 1)
            yield env
            return
        step = steps[i]
        if isinstance(step, _CheckStep):
            if eval_cmp(step.cmp, env):
                yield from rec(i + 1)
        elif isinstance(step, _DetStep):
            target = eval_expr(step.target, env)
            val = _solve(step.source, step.var, target, env)
            if val is None:
                return
            for lo in step.lowers:
                if val < eval_expr(lo, env):
                    return
            for hi in step.uppers:
                if val >= eval_expr(hi, env):
                    return
            env[step.var] = val
            yield from rec(i + 1)
            del env[step.var]
        else:
            lo = max(eval_expr(e, env) for e in step.lowers)
            hi = min(eval_expr(e, env) for e in step.uppers)
            for val in range(lo, hi):
                env[step.var] = val
                yield from rec(i + 1)
            env.pop(step.var, None)

    return rec(0)


# ---------------------------------------------------------------------------
# program evaluation

def _strides(dims: tuple[int, ...]) -> tuple[int, ...]:
    out = []
    acc = 1
    for d in reversed(dims):
        out.append(acc)
        acc *= d
    return tuple(reversed(out))


def eval_program(p: Program, sizes: dict[str, int],
                 inputs: dict[str, DenseTensor], mode: str = "int",
                 counter: OpCounter | None = None) -> dict[str, DenseTensor]:
    """Evaluate every rule in order; returns all defined and input tensors
    by name (plain values only; set-valued rules are evaluated in boolean
    mode internally and are accessible to later rules)."""
    missing = [s for s in sorted(p.sizes) if s not in sizes]
    if missing:
        raise EvalError(f"unbound size constants: {missing}")
    sizes = {k: v for k, v in sizes.items() if k in p.sizes}
    store: dict[tuple[str, Kind], DenseTensor] = {}
    for name, t in inputs.items():
        declared = p.dims.get(name)
        if declared is not None:
            want = tuple(eval_expr(d, sizes) for d in declared)
            if want != t.dims:
                raise EvalError(f"input {name} has dims {t.dims}, declared {want}")
        store[(name, Kind.PLAIN)] = t
    for rule in p.rules:
        _eval_rule(rule, p, sizes, store, mode, counter)
    out = {name: t for (name, kind), t in store.items() if kind is Kind.PLAIN}
    return out


def _eval_rule(rule: Rule, p: Program, sizes: dict[str, int],
               store: dict[tuple[str, Kind], DenseTensor], mode: str,
               counter: OpCounter | None) -> None:
    head = rule.head
    declared = _access_dims(head, p)
    if declared is None:
        raise EvalError(f"no declared dimensions for {head.tensor}")
    dims = tuple(eval_expr(d, sizes) for d in declared)
    boolean = head.kind in (Kind.UNIQUE, Kind.REDUNDANCY)
    out = DenseTensor.zeros(dims, "int" if boolean else mode)
    strides = _strides(dims)
    touched: set[int] = set()

    for prod in rule.body:
        plan = _build_plan(head, prod, p, sizes)
        reads = [(f, None) for f in plan.accesses]
        env: dict[str, int] = dict(sizes)
        for env in _enumerate(plan, env, counter):
            val = 1
            for acc, _ in reads:
                v = _read(acc, env, store, p, sizes)
                if v is None:
                    raise MissingInputError(
                        f"no value for {acc.tensor}{acc.kind.suffix} "
                        f"(rule for {head.tensor}{head.kind.suffix})")
                val = val * v
            flat = 0
            oob = False
            for arg, d, s in zip(head.args, dims, strides):
                idx = env[arg]
                if idx < 0 or idx >= d:
                    oob = True
                    break
                flat += idx * s
            if oob:
                continue
            if boolean:
                out.data[flat] = 1
            else:
                if counter is not None and flat in touched:
                    counter.additions += 1
                touched.add(flat)
                out.data[flat] += val
    store[(head.tensor, head.kind)] = out


def _read(acc: Access, env: dict[str, int],
          store: dict[tuple[str, Kind], DenseTensor], p: Program,
          sizes: dict[str, int]):
    t = store.get((acc.tensor, acc.kind))
    if t is None:
        return None
    flat = 0
    for arg, d, s in zip(acc.args, t.dims, _strides(t.dims)):
        idx = env[arg]
        if idx < 0 or idx >= d:
            return t.data.dtype.type(0)
        flat += idx * s
    return t.data[flat]


# ---------------------------------------------------------------------------
# set denotations

def eval_set(rule: Rule, p: Program, sizes: dict[str, int]) -> frozenset[tuple[int, ...]]:
    """Exact denotation of a set-valued rule as integer index tuples within
    the declared bounds."""
    head = rule.head
    sizes = {k: v for k, v in sizes.items() if k in p.sizes}
    declared = _access_dims(head, p)
    if declared is None:
        raise EvalError(f"no declared dimensions for {head.tensor}")
    dims = tuple(eval_expr(d, sizes) for d in declared)
    result: set[tuple[int, ...]] = set()
    for prod in rule.body:
        plan = _build_plan(head, prod, p, sizes)
        if any(isinstance(f, Access) for f in prod):
            raise EvalError("eval_set expects an inlined (comparison-only) body")
        env: dict[str, int] = dict(sizes)
        for env in _enumerate(plan, env, None):
            tup = tuple(env[a] for a in head.args)
            if all(0 <= x < d for x, d in zip(tup, dims)):
                result.add(tup)
    return frozenset(result)


def eval_redundancy_map(rule: Rule, p: Program, sizes: dict[str, int]) -> dict[tuple[int, ...], set[tuple[int, ...]]]:
    """Redundancy denotation grouped as source -> set of targets."""
    k = len(rule.head.args) // 2
    rel: dict[tuple[int, ...], set[tuple[int, ...]]] = {}
    for tup in eval_set(rule, p, sizes):
        rel.setdefault(tup[:k], set()).add(tup[k:])
    return rel


def count_points(rule: Rule, p: Program, sizes: dict[str, int]) -> int:
    """Number of satisfying head tuples, summed per product (exact when
    products are disjoint, e.g. after simplification of chain regions).
    Uses memoization keyed on the loop values later steps depend on, so
    staircase regions count in polynomial time."""
    head = rule.head
    sizes = {k: v for k, v in sizes.items() if k in p.sizes}
    total = 0
    for prod in rule.body:
        plan = _build_plan(head, prod, p, sizes)
        total += _count_plan(plan, sizes)
    return total


def _count_plan(plan: _Plan, sizes: dict[str, int]) -> int:
    steps = plan.steps
    n = len(steps)
    # for each step, the set of earlier-assigned variables any later step reads
    deps_after: list[tuple[str, ...]] = []
    assigned_before: list[set[str]] = []
    seen: set[str] = set()
    for i, s in enumerate(steps):
        assigned_before.append(set(seen))
        if isinstance(s, (_LoopStep, _DetStep)):
            seen.add(s.var)
    for i in range(n):
        needed: set[str] = set()
        for s in steps[i:]:
            if isinstance(s, _LoopStep):
                for e in s.lowers + s.uppers:
                    needed |= expr_vars(e)
            elif isinstance(s, _DetStep):
                needed |= expr_vars(s.source) | expr_vars(s.target)
                for e in s.lowers + s.uppers:
                    needed |= expr_vars(e)
            else:
                needed |= expr_vars(s.cmp.lhs) | expr_vars(s.cmp.rhs)
        deps_after.append(tuple(sorted(needed & assigned_before[i])))

    memo: dict[tuple[int, tuple[int, ...]], int] = {}
    env: dict[str, int] = dict(sizes)

    def rec(i: int) -> int:
        if i == n:
            return 1
        key = (i, tuple(env[v] for v in deps_after[i]))
        hit = memo.get(key)
        if hit is not None:
            return hit
        step = steps[i]
        if isinstance(step, _CheckStep):
            out = rec(i + 1) if eval_cmp(step.cmp, env) else 0
        elif isinstance(step, _DetStep):
            target = eval_expr(step.target, env)
            val = _solve(step.source, step.var, target, env)
            out = 0
            if val is not None and all(val >= eval_expr(lo, env) for lo in step.lowers) \
                    and all(val < eval_expr(hi, env) for hi in step.uppers):
                env[step.var] = val
                out = rec(i + 1)
                del env[step.var]
        else:
            lo = max(eval_expr(e, env) for e in step.lowers)
            hi = min(eval_expr(e, env) for e in step.uppers)
            out = 0
            for val in range(lo, hi):
                env[step.var] = val
                out += rec(i + 1)
            env.pop(step.var, None)
        memo[key] = out
        return out

    return rec(0)


# ---------------------------------------------------------------------------
# op counting

def count_ops(p: Program, sizes: dict[str, int],
              inputs: dict[str, DenseTensor], mode: str = "int") -> OpCounter:
    counter = OpCounter()
    eval_program(p, sizes, inputs, mode=mode, counter=counter)
    return counter


# ---------------------------------------------------------------------------
# structure-conforming random tensors

def random_dense(dims: tuple[int, ...], rng: SplitMix64, mode: str = "int") -> DenseTensor:
    t = DenseTensor.zeros(dims, mode)
    for i in range(t.data.size):
        if mode == "int":
            t.data[i] = rng.randint(-9, 9)
        else:
            t.data[i] = rng.uniform() * 2.0 - 1.0
    return t


def random_conforming(info: StructureInfo, p: Program, sizes: dict[str, int],
                      rng: SplitMix64, mode: str = "int") -> DenseTensor:
    """Random tensor whose support lies in the unique set and whose
    redundant positions copy their mapped unique values."""
    dims = tuple(eval_expr(d, sizes) for d in info.dims)
    t = DenseTensor.zeros(dims, mode)
    strides = _strides(dims)
    uset = eval_set(info.unique, p, sizes)
    for tup in sorted(uset):
        flat = sum(i * s for i, s in zip(tup, strides))
        if mode == "int":
            v = rng.randint(1, 9) * (1 if rng.next_u64() % 2 else -1)
        else:
            v = rng.uniform() * 2.0 - 1.0
        t.data[flat] = v
    rel = eval_redundancy_map(info.redundancy, p, sizes)
    for src in sorted(rel):
        targets = sorted(rel[src])
        dst = targets[0]
        sflat = sum(i * s for i, s in zip(src, strides))
        dflat = sum(i * s for i, s in zip(dst, strides))
        t.data[sflat] = t.data[dflat]
    return t


# ---------------------------------------------------------------------------
# soundness properties

@dataclass
class PropertyCheck:
    name: str
    passed: bool
    witness: tuple | None = None


@dataclass
class PropertyReport:
    tensor: str
    checks: list[PropertyCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def check_properties(name: str, info: StructureInfo, p: Program,
                     sizes: dict[str, int], values: DenseTensor) -> PropertyReport:
    """Check the five structure equations by enumeration:

    1. the unique set and the redundancy domain are disjoint;
    2. the compressed tensor is the unique-masked tensor (by construction;
       checked as: compressed support lies in the unique set);
    3. every mapped target is unique and every mapped source is not;
    4. the unique set is idempotent under self-intersection;
    5. the tensor is exactly its compressed part plus redundancy-mapped
       copies of compressed values (lossless reconstruction).
    """
    dims = tuple(eval_expr(d, sizes) for d in info.dims)
    strides = _strides(dims)
    uset = eval_set(info.unique, p, sizes)
    rel = eval_redundancy_map(info.redundancy, p, sizes)
    checks: list[PropertyCheck] = []

    bad = next((s for s in sorted(rel) if s in uset), None)
    checks.append(PropertyCheck("P1 unique/redundant disjoint", bad is None, bad))

    comp = np.array(values.data, copy=True)
    for flat in range(comp.size):
        tup = _unflatten(flat, dims)
        if tup not in uset:
            comp[flat] = 0
    bad = next((_unflatten(f, dims) for f in range(comp.size)
                if comp[f] != 0 and _unflatten(f, dims) not in uset), None)
    checks.append(PropertyCheck("P2 compressed = unique-masked tensor", bad is None, bad))

    bad = None
    for src in sorted(rel):
        for dst in sorted(rel[src]):
            if dst not in uset or src in uset:
                bad = (src, dst)
                break
        if bad:
            break
    checks.append(PropertyCheck("P3 maps into unique set only", bad is None, bad))

    bad = next((s for s, ts in sorted(rel.items()) if len(ts) > 1), None)
    checks.append(PropertyCheck("P3b at most one target per source", bad is None, bad))

    usq = uset & uset
    checks.append(PropertyCheck("P4 unique set idempotent", usq == uset, None))

    bad = None
    exact = values.data.dtype == np.int64
    for flat in range(values.data.size):
        tup = _unflatten(flat, dims)
        recon = comp[flat]
        for dst in rel.get(tup, ()):
            recon = recon + comp[sum(i * s for i, s in zip(dst, strides))]
        if exact:
            ok = recon == values.data[flat]
        else:
            ok = abs(recon - values.data[flat]) <= 1e-12 * max(1.0, abs(values.data[flat]))
        if not ok:
            bad = (tup, values.data[flat], recon)
            break
    checks.append(PropertyCheck("P5 lossless reconstruction", bad is None, bad))
    return PropertyReport(name, checks)


def _unflatten(flat: int, dims: tuple[int, ...]) -> tuple[int, ...]:
    out = []
    for s in _strides(dims):
        out.append(flat // s)
        flat %= s
    return tuple(out)


# ---------------------------------------------------------------------------
# tensor exchange files

def format_tensor(name: str, t: DenseTensor, mode: str = "int") -> str:
    head = " ".join([name, str(len(t.dims)), *map(str, t.dims)])
    lines = [head]
    for v in t.data:
        if mode == "int":
            lines.append(str(int(v)))
        else:
            lines.append(f"{float(v):.17g}")
    return "\n".join(lines) + "\n"


def write_tensor_file(path: str, name: str, t: DenseTensor, mode: str = "int") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_tensor(name, t, mode))


def read_tensor_file(path: str) -> tuple[str, DenseTensor]:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    name = tokens[0]
    order = int(tokens[1])
    dims = tuple(int(x) for x in tokens[2:2 + order])
    raw = tokens[2 + order:]
    expected = 1
    for d in dims:
        expected *= d
    if len(raw) != expected:
        raise EvalError(f"{path}: expected {expected} values, found {len(raw)}")
    if any(("." in x or "e" in x or "E" in x or x in ("nan", "inf", "-inf")) for x in raw):
        data = np.array([float(x) for x in raw], dtype=np.float64)
    else:
        data = np.array([int(x) for x in raw], dtype=np.int64)
    return name, DenseTensor(dims, data)
