"""The symbolic structure attached to a tensor: a unique-set rule describing
its distinct nonzero positions and a redundancy-map rule relating every other
nonzero position to the unique position holding its value."""

from __future__ import annotations

from dataclasses import dataclass

from .ir import Access, IndexExpr, IrError, Kind, Rule

__all__ = ["StructureInfo", "dense_box_structure", "INDEX_NAMES", "index_names", "primed"]

INDEX_NAMES = ("i", "j", "k", "l", "p", "q", "s", "t")


def index_names(k: int, avoid: frozenset[str] = frozenset()) -> tuple[str, ...]:
    """k distinct index variable names, skipping anything in `avoid`."""
    pool = [n for n in INDEX_NAMES if n not in avoid]
    n = 1
    while len(pool) < k:
        extra = [f"x{n}{c}" for c in INDEX_NAMES]
        pool.extend(x for x in extra if x not in avoid)
        n += 1
    return tuple(pool[:k])


def primed(names: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(f"{n}'" for n in names)


@dataclass(frozen=True)
class StructureInfo:
    """Unique set plus redundancy map for one tensor.

    The unique head has the tensor's order k; the redundancy head has 2k
    arguments, the first k indexing the redundant element and the second k
    the unique element it copies."""

    unique: Rule
    redundancy: Rule
    dims: tuple[IndexExpr, ...]

    def __post_init__(self) -> None:
        k = len(self.dims)
        if len(self.unique.head.args) != k:
            raise IrError(f"unique set of order-{k} tensor must have {k} indices")
        if len(self.redundancy.head.args) != 2 * k:
            raise IrError(f"redundancy map of order-{k} tensor must have {2 * k} indices")
        if self.unique.head.kind is not Kind.UNIQUE:
            raise IrError("unique rule must have kind :U")
        if self.redundancy.head.kind is not Kind.REDUNDANCY:
            raise IrError("redundancy rule must have kind :R")

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def tensor(self) -> str:
        return self.unique.head.tensor


def dense_box_structure(name: str, dims: tuple[IndexExpr, ...],
                        avoid: frozenset[str] = frozenset()) -> StructureInfo:
    """Default structure: every in-range position is unique, nothing is
    redundant."""
    from .ir import Comparison, Const, Var

    k = len(dims)
    xs = index_names(k, avoid)
    comps = []
    for x, d in zip(xs, dims):
        comps.append(Comparison(Const(0), "<=", Var(x)))
        comps.append(Comparison(Var(x), "<", d))
    unique = Rule(Access(name, Kind.UNIQUE, xs), (tuple(comps),))
    red = Rule(Access(name, Kind.REDUNDANCY, xs + primed(xs)), ())
    return StructureInfo(unique, red, dims)
