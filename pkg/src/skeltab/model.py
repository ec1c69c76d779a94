"""Tier formulas, generalized factors and Hasse diagrams.

A tier formula describes how the factors indexing one set of objects nest
and cross each other.  Expanding the formula yields the generalized
factors (level combinations) of the induced nesting poset; arranging them
by marginality gives a Hasse diagram from which degrees of freedom and
source names are computed by the usual subtraction recurrence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import FormulaError, StructuralError

IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")

UNIVERSE_NAME = "Mean"
WEDGE = " ∧ "           # separator inside source brackets
RESIDUAL_SPLIT = " ⊢ "  # host renamed after a single pseudofactor split
PERP_SUFFIX = "_⊥"      # host renamed after several pseudofactor splits


@dataclass(frozen=True)
class Factor:
    name: str
    levels: int

    def __post_init__(self):
        if self.levels < 1:
            raise StructuralError(f"factor {self.name} needs at least one level")
        if not IDENT_RE.fullmatch(self.name):
            raise StructuralError(f"invalid factor name {self.name!r}")


# -- formula AST ---------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    name: str


@dataclass(frozen=True)
class Nest:
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Cross:
    lhs: "Node"
    rhs: "Node"


Node = Leaf | Nest | Cross


@dataclass(frozen=True)
class TierFormula:
    text: str
    root: Node
    factors: tuple[Factor, ...]           # in order of first appearance
    nesters: Mapping[str, frozenset[str]]  # factor -> factors nesting it

    def levels(self) -> dict[str, int]:
        return {f.name: f.levels for f in self.factors}

    def factor_order(self) -> dict[str, int]:
        return {f.name: i for i, f in enumerate(self.factors)}


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        i = self.pos
        while i < len(self.text) and self.text[i].isspace():
            i += 1
        if i >= len(self.text):
            return ("end", "", i)
        ch = self.text[i]
        if ch in "*/()":
            return (ch, ch, i)
        m = IDENT_RE.match(self.text, i)
        if m:
            return ("ident", m.group(0), i)
        raise FormulaError(f"unexpected character {ch!r}", i)

    def take(self) -> tuple[str, str, int]:
        kind, value, i = self.peek()
        self.pos = i + (len(value) if value else 0)
        return kind, value, i


def parse_formula(text: str, decls: Iterable[Factor]) -> TierFormula:
    """Parse a nesting/crossing formula against the declared factors.

    Grammar: formula := term | formula "*" term
             term    := atom | term "/" atom
             atom    := IDENT | "(" formula ")"
    Both operators associate to the left and "/" binds tighter than "*".
    """
    decls = tuple(decls)
    if not decls:
        raise FormulaError("no factors declared for this tier")
    if not text or not text.strip():
        raise FormulaError("empty formula")
    by_name = {f.name: f for f in decls}
    if len(by_name) != len(decls):
        raise FormulaError("duplicate factor declaration")
    toks = _Tokens(text)
    seen: list[str] = []

    def atom() -> Node:
        kind, value, i = toks.take()
        if kind == "(":
            node = formula()
            kind2, _, i2 = toks.take()
            if kind2 != ")":
                raise FormulaError("expected ')'", i2)
            return node
        if kind == "ident":
            if value not in by_name:
                raise FormulaError(f"unknown factor {value!r}", i)
            if value in seen:
                raise FormulaError(f"factor {value!r} appears twice", i)
            seen.append(value)
            return Leaf(value)
        raise FormulaError("expected a factor name or '('", i)

    def term() -> Node:
        node = atom()
        while toks.peek()[0] == "/":
            toks.take()
            node = Nest(node, atom())
        return node

    def formula() -> Node:
        node = term()
        while toks.peek()[0] == "*":
            toks.take()
            node = Cross(node, term())
        return node

    root = formula()
    kind, value, i = toks.peek()
    if kind != "end":
        raise FormulaError(f"unexpected {value!r} after formula", i)

    nesters: dict[str, set[str]] = {name: set() for name in seen}

    def collect(node: Node) -> set[str]:
        if isinstance(node, Leaf):
            return {node.name}
        left = collect(node.lhs)
        right = collect(node.rhs)
        if isinstance(node, Nest):
            for f in right:
                nesters[f] |= left
        return left | right

    collect(root)
    factors = tuple(by_name[name] for name in seen)
    return TierFormula(text=text, root=root,
                       factors=factors,
                       nesters={k: frozenset(v) for k, v in nesters.items()})


# -- generalized factors -------------------------------------------------------

@dataclass(frozen=True)
class GeneralizedFactor:
    """A level-combination factor; the empty set is the universe."""

    components: frozenset[str]

    def is_universe(self) -> bool:
        return not self.components


def _node_factors(node: Node) -> frozenset[str]:
    if isinstance(node, Leaf):
        return frozenset({node.name})
    return _node_factors(node.lhs) | _node_factors(node.rhs)


def expand(formula: TierFormula) -> tuple[GeneralizedFactor, ...]:
    """All intrinsic generalized factors of the formula, in canonical order.

    Crossing X*Y lists X, then for each part of Y that part followed by its
    combinations with every part of X; nesting X/Y lists X, then each part
    of Y joined with every factor of X.  The universe comes first.
    """

    def walk(node: Node) -> list[frozenset[str]]:
        if isinstance(node, Leaf):
            return [frozenset({node.name})]
        left = walk(node.lhs)
        right = walk(node.rhs)
        if isinstance(node, Nest):
            all_left = _node_factors(node.lhs)
            return left + [g | all_left for g in right]
        out = list(left)
        for b in right:
            out.append(b)
            out.extend(a | b for a in left)
        return out

    parts = [frozenset()] + walk(formula.root)
    return tuple(GeneralizedFactor(p) for p in parts)


def intrinsic_closure(gfs: Iterable[GeneralizedFactor],
                      nesters: Mapping[str, frozenset[str]]) -> set[frozenset[str]]:
    """Close each member under 'contains every factor nesting a member'."""
    out = set()
    for gf in gfs:
        comps = set(gf.components)
        changed = True
        while changed:
            changed = False
            for f in list(comps):
                extra = nesters.get(f, frozenset()) - comps
                if extra:
                    comps |= extra
                    changed = True
        out.add(frozenset(comps))
    out.add(frozenset())
    return out


# -- source naming --------------------------------------------------------------

def _bracket_order(components: Iterable[str], within: frozenset[str],
                   nesters: Mapping[str, frozenset[str]],
                   order: Mapping[str, int]) -> list[str]:
    def nested_below(f: str) -> int:
        return sum(1 for g in within if f in nesters.get(g, frozenset()))

    return sorted(components, key=lambda f: (-nested_below(f), order[f]))


def factorial_source_name(components: frozenset[str],
                          nesters: Mapping[str, frozenset[str]],
                          order: Mapping[str, int]) -> str:
    """Canonical name: non-nesting factors joined by '#', nesters bracketed."""
    if not components:
        return UNIVERSE_NAME
    nesting = {f for f in components
               if any(f in nesters.get(g, frozenset()) for g in components)}
    plain = sorted(components - nesting, key=lambda f: order[f])
    name = "#".join(plain)
    if nesting:
        bracket = _bracket_order(nesting, components, nesters, order)
        name += "[" + WEDGE.join(bracket) + "]"
    return name


# -- Hasse diagram ---------------------------------------------------------------

@dataclass(frozen=True)
class HasseNode:
    name: str
    components: frozenset[str]       # declared factors involved
    n: int                           # number of level classes
    df: int
    pseudo: str | None = None        # pseudofactor name when not factorial
    class_columns: tuple[str, ...] = ()  # allocation columns defining the classes


@dataclass(frozen=True)
class HasseDiagram:
    tier: str
    factors: tuple[Factor, ...]
    nodes: tuple[HasseNode, ...]                 # presentation order, universe first
    margins: Mapping[str, frozenset[str]]        # node name -> names strictly above
    nesters: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def node(self, name: str) -> HasseNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def cover_edges(self) -> tuple[tuple[str, str], ...]:
        """Pairs (above, below) with nothing in between."""
        out = []
        for node in self.nodes:
            above = self.margins[node.name]
            for h in above:
                if not any(h in self.margins[k] for k in above if k != h):
                    out.append((h, node.name))
        return tuple(out)

    def total_df(self) -> int:
        return sum(n.df for n in self.nodes)


def _assign_df(names: list[str], n_of: dict[str, int],
               margins: dict[str, frozenset[str]]) -> dict[str, int]:
    df: dict[str, int] = {}
    for name in sorted(names, key=lambda k: len(margins[k])):
        value = n_of[name] - sum(df[h] for h in margins[name])
        if value < 0:
            raise StructuralError(
                f"negative degrees of freedom ({value}) at node {name!r}; "
                "level declarations are inconsistent")
        df[name] = value
    return df


def build_hasse(gfs: Iterable[GeneralizedFactor], formula: TierFormula,
                tier: str) -> HasseDiagram:
    """Arrange intrinsic generalized factors by marginality and assign
    degrees of freedom by subtracting every marginal node's count."""
    gfs = tuple(gfs)
    comp_sets = [gf.components for gf in gfs]
    if frozenset() not in comp_sets:
        raise StructuralError("generalized factor set must contain the universe")
    closure = intrinsic_closure(gfs, formula.nesters)
    for c in comp_sets:
        if c not in closure:
            raise StructuralError(f"generalized factor {set(c)} is not intrinsic")
    levels = formula.levels()
    order = formula.factor_order()
    names, n_of, comp_of = [], {}, {}
    for comps in comp_sets:
        name = factorial_source_name(comps, formula.nesters, order)
        if name in n_of:
            raise StructuralError(f"source name collision at {name!r}")
        n = 1
        for f in comps:
            n *= levels[f]
        names.append(name)
        n_of[name] = n
        comp_of[name] = comps
    margins = {
        name: frozenset(h for h in names
                        if comp_of[h] < comp_of[name])
        for name in names
    }
    df = _assign_df(names, n_of, margins)
    nodes = tuple(
        HasseNode(name=name, components=comp_of[name], n=n_of[name], df=df[name],
                  class_columns=tuple(sorted(comp_of[name], key=lambda f: order[f])))
        for name in names)
    diagram = HasseDiagram(tier=tier, factors=formula.factors, nodes=nodes,
                           margins=margins, nesters=dict(formula.nesters))
    expected = 1
    for f in formula.factors:
        expected *= f.levels
    if diagram.total_df() != expected:
        raise StructuralError(
            f"degrees of freedom sum to {diagram.total_df()}, expected {expected}; "
            "the declared factors do not uniquely index the objects")
    return diagram


def source_name(node: HasseNode, diagram: HasseDiagram) -> str:
    if node.name not in diagram.margins:
        raise KeyError(f"node {node.name!r} not in diagram")
    return node.name
