"""Structured tensor algebra compiler.

Tensor programs are written as sum-of-products rules; the compiler infers
each defined tensor's sparsity (unique set) and redundancy (redundancy map)
symbolically, rewrites the computation onto lossless compressed tensors, and
emits imperative loop-nest kernels plus reconstruction code.  A dense
reference interpreter doubles as the correctness oracle.
"""

from .ir import (
    Access, Arith, Body, Comparison, Const, Diagnostic, IndexExpr, Kind,
    Product, Program, Rule, Var, alpha_rename, check_well_formed, free_vars,
    substitute,
)
from .textio import ParseError, parse, parse_body, parse_rule, print_body, print_program, print_rule

__version__ = "0.1.0"
