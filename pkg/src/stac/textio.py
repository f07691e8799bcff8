"""Text syntax for rule programs (`.stur` files).

Line-oriented, UTF-8.  `#` starts a comment.  Declarations:

    @size n                      a symbolic size constant
    @dim A(n, m)                 tensor extents over size constants
    @assume (0 <= r) * (r < n)   side conditions taken as facts

Rules are one per line, `Head := Body`.  Kind markers select the facet:
`A(i,j)` plain, `A:C(...)` compressed, `A:U(...)` unique set, `A:R(...)`
redundancy map.  `*` binds tighter than `+`; parentheses group; comparisons
are parenthesized and may chain (`(0 <= i <= j < n)` means the product of
the pairwise comparisons).  The literal `0` denotes the empty sum.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ir import (
    Access, Arith, Body, Comparison, Const, IndexExpr, Kind, Product,
    Program, Rule, Var, body_add, body_mul, check_well_formed,
)

__all__ = ["parse", "parse_rule", "parse_body", "print_program",
           "print_rule", "print_body", "ParseError"]


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}" if line else message)
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+)
  | (?P<name>%?[A-Za-z_][A-Za-z0-9_]*'*)
  | (?P<op>:=|<=|>=|!=|[-+*/%<>=(),:@])
""", re.VERBOSE)


def _tokenize(text: str, line: int) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos + 1)
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return toks


class _Cursor:
    def __init__(self, toks: list[tuple[str, str, int]], line: int):
        self.toks = toks
        self.i = 0
        self.line = line

    def peek(self) -> tuple[str, str, int] | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> tuple[str, str, int]:
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of line", self.line,
                             self.toks[-1][2] if self.toks else 1)
        self.i += 1
        return t

    def expect(self, value: str) -> None:
        t = self.next()
        if t[1] != value:
            raise ParseError(f"expected {value!r}, got {t[1]!r}", self.line, t[2])

    def at(self, value: str) -> bool:
        t = self.peek()
        return t is not None and t[1] == value

    def error(self, msg: str) -> ParseError:
        t = self.peek()
        col = t[2] if t else (self.toks[-1][2] if self.toks else 1)
        return ParseError(msg, self.line, col)


# ---------------------------------------------------------------------------
# parsing

def parse(text: str, check: bool = True) -> Program:
    """Parse a program.  With `check`, well-formedness diagnostics are
    raised as errors."""
    rules: list[Rule] = []
    dims: dict[str, tuple[IndexExpr, ...]] = {}
    sizes: list[str] = []
    assumes: list[Comparison] = []

    def note_size(s: str) -> None:
        if s not in sizes:
            sizes.append(s)
    rule_lines: list[int] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        src = raw.split("#", 1)[0].strip()
        if not src:
            continue
        cur = _Cursor(_tokenize(src, lineno), lineno)
        kind, tok, _ = cur.peek()
        if tok == "@":
            cur.next()
            word = cur.next()[1]
            if word == "size":
                note_size(cur.next()[1])
            elif word == "dim":
                name = cur.next()[1]
                cur.expect("(")
                ds = [_parse_index_expr(cur)]
                while cur.at(","):
                    cur.next()
                    ds.append(_parse_index_expr(cur))
                cur.expect(")")
                dims[name] = tuple(ds)
                for d in ds:
                    for s in sorted(_expr_names(d)):
                        note_size(s)
            elif word == "assume":
                body = _parse_sum(cur)
                for prod in body:
                    for f in prod:
                        if not isinstance(f, Comparison):
                            raise cur.error("@assume takes comparisons only")
                        assumes.append(f)
            else:
                raise cur.error(f"unknown declaration @{word}")
        else:
            rules.append(_parse_rule_line(cur))
            rule_lines.append(lineno)
        if cur.peek() is not None:
            raise cur.error("trailing tokens")

    prog = Program(tuple(rules), dims, tuple(sizes), tuple(assumes))
    if check:
        diags = check_well_formed(prog)
        if diags:
            d = diags[0]
            line = rule_lines[d.rule_index] if d.rule_index is not None else 0
            raise ParseError(f"{d.kind}: {d.message}", line, 1)
    return prog


def parse_rule(text: str) -> Rule:
    cur = _Cursor(_tokenize(text.strip(), 1), 1)
    r = _parse_rule_line(cur)
    if cur.peek() is not None:
        raise cur.error("trailing tokens")
    return r


def parse_body(text: str) -> Body:
    cur = _Cursor(_tokenize(text.strip(), 1), 1)
    b = _parse_sum(cur)
    if cur.peek() is not None:
        raise cur.error("trailing tokens")
    return b


def _expr_names(e: IndexExpr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    return _expr_names(e.lhs) | _expr_names(e.rhs)


def _parse_rule_line(cur: _Cursor) -> Rule:
    head = _parse_access(cur)
    cur.expect(":=")
    if cur.peek() is None:
        raise cur.error("empty rule body (write 0 for the empty sum)")
    body = _parse_sum(cur)
    return Rule(head, body)


def _parse_access(cur: _Cursor) -> Access:
    kind_tok, name, col = cur.next()
    if kind_tok != "name":
        raise ParseError(f"expected tensor name, got {name!r}", cur.line, col)
    kind = Kind.PLAIN
    if cur.at(":"):
        cur.next()
        marker = cur.next()[1]
        try:
            kind = Kind(marker)
        except ValueError:
            raise ParseError(f"unknown kind marker :{marker}", cur.line, col)
    cur.expect("(")
    args: list[str] = []
    if not cur.at(")"):
        while True:
            t, v, c = cur.next()
            if t != "name":
                raise ParseError("access arguments must be plain variables", cur.line, c)
            args.append(v)
            if cur.at(","):
                cur.next()
            else:
                break
    cur.expect(")")
    return Access(name, kind, tuple(args))


def _parse_sum(cur: _Cursor) -> Body:
    body = _parse_term(cur)
    while cur.at("+"):
        cur.next()
        body = body_add(body, _parse_term(cur))
    return body


def _parse_term(cur: _Cursor) -> Body:
    body = _parse_atom(cur)
    while cur.at("*"):
        cur.next()
        body = body_mul(body, _parse_atom(cur))
    return body


def _parse_atom(cur: _Cursor) -> Body:
    t = cur.peek()
    if t is None:
        raise cur.error("expected a factor")
    tok_kind, tok, col = t
    if tok_kind == "num":
        if tok != "0":
            raise ParseError("only 0 (the empty sum) may stand alone", cur.line, col)
        cur.next()
        return ()
    if tok_kind == "name":
        acc = _parse_access(cur)
        return ((acc,),)
    if tok == "(":
        save = cur.i
        try:
            return _parse_comparison_chain(cur)
        except ParseError:
            cur.i = save
        cur.expect("(")
        inner = _parse_sum(cur)
        cur.expect(")")
        return inner
    raise ParseError(f"expected access, comparison, or group, got {tok!r}", cur.line, col)


def _parse_comparison_chain(cur: _Cursor) -> Body:
    cur.expect("(")
    exprs = [_parse_index_expr(cur)]
    ops: list[str] = []
    while True:
        t = cur.peek()
        if t is not None and t[1] in ("=", "!=", "<", "<=", ">", ">="):
            ops.append(cur.next()[1])
            exprs.append(_parse_index_expr(cur))
        else:
            break
    if not ops:
        raise cur.error("not a comparison")
    cur.expect(")")
    prod = tuple(Comparison(exprs[i], ops[i], exprs[i + 1]) for i in range(len(ops)))
    return (prod,)


def _parse_index_expr(cur: _Cursor) -> IndexExpr:
    e = _parse_index_mul(cur)
    while cur.at("+") or cur.at("-"):
        op = cur.next()[1]
        e = Arith(op, e, _parse_index_mul(cur))
    return e


def _parse_index_mul(cur: _Cursor) -> IndexExpr:
    e = _parse_index_atom(cur)
    while cur.at("*") or cur.at("/") or cur.at("%"):
        op = cur.next()[1]
        e = Arith(op, e, _parse_index_atom(cur))
    return e


def _parse_index_atom(cur: _Cursor) -> IndexExpr:
    tok_kind, tok, col = cur.next()
    if tok_kind == "num":
        return Const(int(tok))
    if tok_kind == "name":
        if cur.at("("):
            raise ParseError("accesses are not allowed inside index expressions",
                             cur.line, col)
        return Var(tok)
    if tok == "(":
        e = _parse_index_expr(cur)
        cur.expect(")")
        return e
    raise ParseError(f"expected index expression, got {tok!r}", cur.line, col)


# ---------------------------------------------------------------------------
# printing

_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2, "%": 2}


def _print_expr(e: IndexExpr, level: int = 0, right: bool = False) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Const):
        return str(e.value)
    mine = _LEVEL[e.op]
    s = f"{_print_expr(e.lhs, mine)} {e.op} {_print_expr(e.rhs, mine, right=True)}"
    if mine < level or (mine == level and right):
        return f"({s})"
    return s


def _print_factor(f) -> str:
    if isinstance(f, Comparison):
        return f"({_print_expr(f.lhs)} {f.op} {_print_expr(f.rhs)})"
    return f"{f.tensor}{f.kind.suffix}({', '.join(f.args)})"


def print_body(b: Body) -> str:
    if not b:
        return "0"
    return " + ".join(" * ".join(_print_factor(f) for f in prod) for prod in b)


def print_rule(r: Rule) -> str:
    return f"{_print_factor(r.head)} := {print_body(r.body)}"


def print_program(p: Program) -> str:
    """Canonical text; `parse(print_program(p))` is structurally `p`."""
    lines: list[str] = []
    for s in p.sizes:
        lines.append(f"@size {s}")
    for name in p.dims:
        ds = ", ".join(_print_expr(d) for d in p.dims[name])
        lines.append(f"@dim {name}({ds})")
    for a in p.assumes:
        lines.append(f"@assume {_print_factor(a)}")
    for r in p.rules:
        lines.append(print_rule(r))
    return "\n".join(lines) + "\n"
