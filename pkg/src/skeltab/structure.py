"""Concrete structures on object sets.

Everything here starts from an allocation table: one row per object with
the observed level of every factor (and pseudofactor).  Averaging
operators are read straight off the table, projectors follow from the
Hasse diagram by subtraction, and design functions are recovered from the
recorded levels of a randomized tier's factors.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .algebra import LabeledMatrix, _int_array
from .errors import DimensionError, StructuralError, UnsupportedDesignError
from .model import (HasseDiagram, HasseNode, UNIVERSE_NAME, WEDGE,
                    PERP_SUFFIX, RESIDUAL_SPLIT, _assign_df, _bracket_order)


@dataclass(frozen=True)
class ObjectSet:
    id: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise StructuralError(f"object set {self.id!r} is empty")
        if len(set(self.labels)) != len(self.labels):
            raise StructuralError(f"object set {self.id!r} has duplicate labels")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class AllocationTable:
    """Level value of every factor column, one entry per object."""

    objects: ObjectSet
    columns: dict[str, tuple[int, ...]]

    def __post_init__(self):
        for name, values in self.columns.items():
            if len(values) != len(self.objects):
                raise StructuralError(
                    f"column {name!r} has {len(values)} values for "
                    f"{len(self.objects)} objects")

    def column(self, name: str) -> tuple[int, ...]:
        try:
            return self.columns[name]
        except KeyError:
            raise StructuralError(
                f"allocation for {self.objects.id!r} is missing column {name!r}"
            ) from None

    def class_ids(self, columns: Sequence[str]) -> list[tuple[int, ...]]:
        """Joint level tuple of the given columns, one per object."""
        cols = [self.column(c) for c in columns]
        return [tuple(col[i] for col in cols) for i in range(len(self.objects))]


def object_label(values: Iterable[int]) -> str:
    return ".".join(str(v) for v in values)


# -- averaging operators and structures ----------------------------------------

def averaging_matrix(node: HasseNode | Sequence[str],
                     alloc: AllocationTable) -> LabeledMatrix:
    """Operator replacing each coordinate by the mean over the objects
    sharing its level of the (generalized) factor."""
    columns = node.class_columns if isinstance(node, HasseNode) else tuple(node)
    labels = alloc.objects.labels
    n = len(labels)
    ids = alloc.class_ids(columns) if columns else [()] * n
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(ids):
        groups.setdefault(key, []).append(i)
    den = 1
    for members in groups.values():
        den = den * len(members) // math.gcd(den, len(members))
    num = np.zeros((n, n), dtype=np.int64)
    for members in groups.values():
        idx = np.array(members)
        num[np.ix_(idx, idx)] = den // len(members)
    return LabeledMatrix(labels, labels, _int_array(num), den)


@dataclass(frozen=True)
class Source:
    name: str
    projector: LabeledMatrix
    df: int


@dataclass(frozen=True)
class Structure:
    """Ordered orthogonal decomposition of (a subspace of) an object space."""

    tier: str
    objects: ObjectSet
    sources: tuple[Source, ...]
    support: LabeledMatrix
    dropped: tuple[str, ...] = ()

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.sources)

    def source(self, name: str) -> Source:
        for s in self.sources:
            if s.name == name:
                return s
        raise KeyError(name)

    def validate(self, pairwise: bool = True) -> None:
        total = None
        for s in self.sources:
            if not s.projector.is_symmetric():
                raise StructuralError(f"projector {s.name!r} is not symmetric")
            if (s.projector @ s.projector) != s.projector:
                raise StructuralError(f"projector {s.name!r} is not idempotent")
            if s.projector.trace() != s.df:
                raise StructuralError(
                    f"projector {s.name!r} has trace {s.projector.trace()}, "
                    f"declared df {s.df}")
            total = s.projector if total is None else total + s.projector
        if total != self.support:
            raise StructuralError(
                f"sources of {self.tier!r} do not sum to the support")
        if pairwise:
            for i, a in enumerate(self.sources):
                for b in self.sources[i + 1:]:
                    if not (a.projector @ b.projector).is_zero():
                        raise StructuralError(
                            f"projectors {a.name!r} and {b.name!r} are not orthogonal")


def build_structure(diagram: HasseDiagram, alloc: AllocationTable) -> Structure:
    """One projector per diagram node, by subtracting every marginal node."""
    projectors: dict[str, LabeledMatrix] = {}
    order = sorted(diagram.nodes, key=lambda nd: len(diagram.margins[nd.name]))
    for node in order:
        p = averaging_matrix(node, alloc)
        for above in diagram.margins[node.name]:
            p = p - projectors[above]
        if p.trace() != node.df:
            raise StructuralError(
                f"source {node.name!r} has rank {p.trace()} but the diagram "
                f"gives {node.df} degrees of freedom; the allocation does not "
                "match the declared levels")
        projectors[node.name] = p
    identity = LabeledMatrix.identity(alloc.objects.labels)
    total = None
    for name, p in projectors.items():
        total = p if total is None else total + p
    if total != identity:
        raise StructuralError(
            f"sources of tier {diagram.tier!r} do not sum to the identity")
    sources = tuple(Source(nd.name, projectors[nd.name], nd.df)
                    for nd in diagram.nodes if nd.df > 0)
    dropped = tuple(nd.name for nd in diagram.nodes if nd.df == 0)
    return Structure(tier=diagram.tier, objects=alloc.objects,
                     sources=sources, support=identity, dropped=dropped)


# -- pseudofactor refinement -----------------------------------------------------

@dataclass(frozen=True)
class PseudofactorDecl:
    name: str
    levels: int
    refines: str                 # source name it splits
    ancestors: tuple[str, ...]   # node names declared marginal to the new node
    column: str                  # allocation column carrying its level values


def _partition_signature(ids: list[tuple]) -> tuple[int, ...]:
    """Class assignment normalized by first appearance; equal partitions
    yield equal signatures regardless of how levels are numbered."""
    seen: dict[tuple, int] = {}
    out = []
    for key in ids:
        out.append(seen.setdefault(key, len(seen)))
    return tuple(out)


def refine_with_pseudofactors(diagram: HasseDiagram,
                              decls: Sequence[PseudofactorDecl],
                              alloc: AllocationTable) -> HasseDiagram:
    """Insert pseudofactor nodes between their declared ancestors and the
    source they refine, then recompute degrees of freedom.

    The refined source is renamed: "Host ⊢ P" when a single
    pseudofactor P splits it, "Host_⊥" when several do.
    """
    if not decls:
        return diagram
    names = list(diagram.names())
    nodes = {nd.name: nd for nd in diagram.nodes}
    margins = {k: set(v) for k, v in diagram.margins.items()}
    order_map = {f.name: i for i, f in enumerate(diagram.factors)}
    partitions = {nd.name: _partition_signature(
        alloc.class_ids(nd.class_columns) if nd.class_columns else [()] * len(alloc.objects))
        for nd in diagram.nodes}
    split_by: dict[str, list[str]] = {}

    for decl in decls:
        if decl.refines not in nodes:
            raise StructuralError(
                f"pseudofactor {decl.name!r} refines unknown source {decl.refines!r}")
        host = decl.refines
        for anc in decl.ancestors:
            if anc not in nodes:
                raise StructuralError(
                    f"pseudofactor {decl.name!r} declares unknown ancestor {anc!r}")
            if anc != UNIVERSE_NAME and anc not in margins[host]:
                raise StructuralError(
                    f"ancestor {anc!r} of pseudofactor {decl.name!r} is not "
                    f"marginal to {host!r}")
        values = alloc.column(decl.column)
        bad = [v for v in values if not 1 <= v <= decl.levels]
        if bad:
            raise StructuralError(
                f"pseudofactor {decl.name!r} has level {bad[0]} outside 1..{decl.levels}")
        # each level of the host generalized factor must map to one pseudo level
        host_ids = alloc.class_ids(nodes[host].class_columns)
        level_of: dict[tuple, int] = {}
        for key, v in zip(host_ids, values):
            if level_of.setdefault(key, v) != v:
                raise StructuralError(
                    f"pseudofactor {decl.name!r} is not constant on the levels "
                    f"of {host!r}")
        anc_components: set[str] = set()
        class_columns: list[str] = []
        for anc in decl.ancestors:
            anc_components |= nodes[anc].components
        class_columns = sorted(anc_components, key=lambda f: order_map[f])
        class_columns.append(decl.column)
        ids = alloc.class_ids(class_columns)
        signature = _partition_signature(ids)
        for other, sig in partitions.items():
            if sig == signature:
                raise StructuralError(
                    f"pseudofactor {decl.name!r} duplicates the level classes "
                    f"of {other!r}")
        if anc_components:
            bracket = _bracket_order(anc_components, frozenset(anc_components),
                                     diagram.nesters, order_map)
            node_name = decl.name + "[" + WEDGE.join(bracket) + "]"
        else:
            node_name = decl.name
        if node_name in nodes:
            raise StructuralError(f"source name collision at {node_name!r}")
        new_node = HasseNode(name=node_name, components=frozenset(anc_components),
                             n=len(set(ids)), df=0, pseudo=decl.name,
                             class_columns=tuple(class_columns))
        nodes[node_name] = new_node
        partitions[node_name] = signature
        margins[node_name] = set()
        for anc in decl.ancestors:
            margins[node_name].add(anc)
            margins[node_name] |= margins[anc]
        for other in list(names):
            if other == host or host in margins[other]:
                margins[other].add(node_name)
        names.insert(names.index(host), node_name)
        split_by.setdefault(host, []).append(node_name)

    n_of = {name: nodes[name].n for name in names}
    frozen_margins = {k: frozenset(v) for k, v in margins.items()}
    df = _assign_df(names, n_of, frozen_margins)

    renames = {}
    for host, pseudos in split_by.items():
        if len(pseudos) == 1:
            renames[host] = f"{host}{RESIDUAL_SPLIT}{pseudos[0]}"
        else:
            renames[host] = f"{host}{PERP_SUFFIX}"
    for old, new in renames.items():
        if new in names:
            raise StructuralError(f"source name collision at {new!r}")

    def rn(name: str) -> str:
        return renames.get(name, name)

    new_nodes = tuple(
        replace(nodes[name], name=rn(name), df=df[name]) for name in names)
    new_margins = {rn(k): frozenset(rn(v) for v in frozen_margins[k]) for k in names}
    refined = HasseDiagram(tier=diagram.tier, factors=diagram.factors,
                           nodes=new_nodes, margins=new_margins,
                           nesters=diagram.nesters)
    if refined.total_df() != diagram.total_df():
        raise StructuralError(
            "pseudofactor refinement changed the total degrees of freedom")
    return refined


# -- merging sources --------------------------------------------------------------

def merge_sources(s: Structure, names: Sequence[str], new_name: str) -> Structure:
    """Sum the named sources into one, placed at the first one's position."""
    names = list(names)
    existing = s.names()
    for name in names:
        if name not in existing:
            raise StructuralError(f"cannot merge unknown source {name!r}")
    remaining = [src.name for src in s.sources if src.name not in names]
    if new_name in remaining:
        raise StructuralError(f"merged name {new_name!r} already exists")
    first = min(existing.index(n) for n in names)
    merged_proj = None
    merged_df = 0
    for name in names:
        src = s.source(name)
        merged_proj = src.projector if merged_proj is None else merged_proj + src.projector
        merged_df += src.df
    out: list[Source] = []
    for i, src in enumerate(s.sources):
        if i == first:
            out.append(Source(new_name, merged_proj, merged_df))
        if src.name in names:
            continue
        out.append(src)
    return replace(s, sources=tuple(out))


# -- design functions --------------------------------------------------------------

@dataclass(frozen=True)
class DesignFunction:
    """The recorded outcome of one randomization: a map between object sets."""

    domain: ObjectSet
    codomain: ObjectSet
    mapping: tuple[str, ...]     # codomain label per domain object
    replication: int

    def __post_init__(self):
        if len(self.mapping) != len(self.domain):
            raise StructuralError("design function must be total on its domain")

    def incidence(self) -> LabeledMatrix:
        """0/1 matrix with a single one per domain row."""
        col_index = {lab: j for j, lab in enumerate(self.codomain.labels)}
        num = np.zeros((len(self.domain), len(self.codomain)), dtype=np.int64)
        for i, target in enumerate(self.mapping):
            num[i, col_index[target]] = 1
        return LabeledMatrix(self.domain.labels, self.codomain.labels,
                             _int_array(num), 1)

    def compose(self, inner: "DesignFunction") -> "DesignFunction":
        """self: A -> B composed with inner: B -> C gives A -> C."""
        if set(self.codomain.labels) != set(inner.domain.labels):
            raise DimensionError(
                f"cannot compose designs: {self.codomain.id!r} != {inner.domain.id!r}")
        pos = {lab: i for i, lab in enumerate(inner.domain.labels)}
        mapping = tuple(inner.mapping[pos[t]] for t in self.mapping)
        return DesignFunction(domain=self.domain, codomain=inner.codomain,
                              mapping=mapping,
                              replication=self.replication * inner.replication)


def derive_design_function(alloc: AllocationTable, tier: str,
                           key_columns: Sequence[str],
                           carry_columns: Sequence[str] = ()) -> tuple[ObjectSet, AllocationTable, DesignFunction]:
    """Recover the map onto a randomized tier from the recorded levels.

    The tier's objects are the distinct level combinations of its factors
    observed in the allocation; `carry_columns` are checked to be constant
    on each new object and copied into its allocation table.
    """
    ids = alloc.class_ids(key_columns)
    counts = Counter(ids)
    distinct = sorted(counts)
    sizes = set(counts.values())
    if len(sizes) != 1:
        histogram = {object_label(k): counts[k] for k in distinct}
        raise UnsupportedDesignError(
            f"design onto tier {tier!r} is not equireplicate: replication "
            f"counts {sorted(sizes)}", histogram=histogram)
    replication = sizes.pop()
    labels = tuple(object_label(k) for k in distinct)
    objects = ObjectSet(id=tier, labels=labels)
    index = {k: i for i, k in enumerate(distinct)}
    columns: dict[str, list] = {c: [None] * len(labels) for c in (*key_columns, *carry_columns)}
    for row, key in enumerate(ids):
        i = index[key]
        for c in columns:
            value = alloc.column(c)[row]
            if columns[c][i] is None:
                columns[c][i] = value
            elif columns[c][i] != value:
                raise StructuralError(
                    f"column {c!r} is not constant on object {labels[i]!r} of "
                    f"tier {tier!r}; the chain of randomizations is broken")
    table = AllocationTable(objects=objects,
                            columns={c: tuple(v) for c, v in columns.items()})
    mapping = tuple(labels[index[key]] for key in ids)
    design = DesignFunction(domain=alloc.objects, codomain=objects,
                            mapping=mapping, replication=replication)
    return objects, table, design


def embed(s: Structure, f: DesignFunction) -> Structure:
    """Carry a structure along a design function into the domain space.

    Valid for equireplicate designs, where the incidence matrix X satisfies
    X'X = rI and each projector maps to (1/r) X Q X'.
    """
    if set(s.objects.labels) != set(f.codomain.labels):
        raise DimensionError(
            f"structure on {s.objects.id!r} cannot be embedded along a design "
            f"onto {f.codomain.id!r}")
    x = f.incidence()
    xt = x.T
    r = Fraction(1, f.replication)
    sources = []
    for src in s.sources:
        q = (x @ src.projector @ xt).scale(r)
        if q.trace() != src.df:
            raise StructuralError(
                f"embedding changed the rank of source {src.name!r}")
        sources.append(Source(src.name, q, src.df))
    support = (x @ xt).scale(r)
    return Structure(tier=s.tier, objects=f.domain, sources=tuple(sources),
                     support=support, dropped=s.dropped)
