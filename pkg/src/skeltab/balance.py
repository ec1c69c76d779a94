"""Structure balance, efficiency matrices and decomposition refinement.

The efficiency factor of a pair of projectors is the scalar lambda with
Q P Q = lambda Q.  A structure is balanced in relation to a decomposition
when that identity holds exactly for every pair and distinct sources stay
orthogonal after projection; only then can the decomposition be refined.
All tests here are exact rational matrix identities, never epsilons.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .algebra import LabeledMatrix
from .errors import DimensionError, StructuralError, UnbalancedError
from .structure import ObjectSet, Source, Structure

KIND_UNTOUCHED = "untouched"
KIND_PERTAIN = "pertain"
KIND_RESIDUAL = "residual"
RESIDUAL_LABEL = "Residual"

VERDICT_ORTHOGONAL = "orthogonal"
VERDICT_BALANCED = "structure_balanced"
VERDICT_FIRST_ORDER = "first_order_only"
VERDICT_UNBALANCED = "unbalanced"


@dataclass(frozen=True)
class Cell:
    tier: str
    source: str
    df: int
    eff: Fraction | None
    kind: str


@dataclass(frozen=True)
class DecompRow:
    cells: tuple[Cell, ...]
    projector: LabeledMatrix | None = None

    @property
    def df(self) -> int:
        return self.cells[-1].df

    @property
    def label(self) -> str:
        parts = []
        for c in self.cells:
            parts.append(f"{c.tier} ⊢" if c.kind == KIND_RESIDUAL else c.source)
        return " ▷ ".join(parts)

    def is_residual(self) -> bool:
        return self.cells[-1].kind == KIND_RESIDUAL


@dataclass(frozen=True)
class Decomposition:
    rows: tuple[DecompRow, ...]
    objects: ObjectSet
    support: LabeledMatrix | None = None
    tier_order: tuple[str, ...] = ()
    nonorthogonal_tiers: frozenset[str] = frozenset()
    dropped: tuple[str, ...] = ()   # labels of rank-0 residual rows, for auditing

    def total_df(self) -> int:
        return sum(r.df for r in self.rows)

    def labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.rows)

    def validate(self, pairwise: bool = True) -> None:
        """Exact decomposition axioms; requires materialized projectors."""
        total = None
        for row in self.rows:
            p = row.projector
            if p is None:
                raise StructuralError(
                    f"row {row.label!r} carries no projector; rerun with "
                    "materialization enabled")
            if not p.is_symmetric():
                raise StructuralError(f"row {row.label!r} is not symmetric")
            if (p @ p) != p:
                raise StructuralError(f"row {row.label!r} is not idempotent")
            if p.trace() != row.df:
                raise StructuralError(
                    f"row {row.label!r} has rank {p.trace()}, cells say {row.df}")
            total = p if total is None else total + p
        if self.support is not None and total != self.support:
            raise StructuralError("decomposition rows do not sum to the support")
        if pairwise:
            for i, a in enumerate(self.rows):
                for b in self.rows[i + 1:]:
                    if not (a.projector @ b.projector).is_zero():
                        raise StructuralError(
                            f"rows {a.label!r} and {b.label!r} are not orthogonal")


def structure_to_decomposition(s: Structure) -> Decomposition:
    rows = tuple(
        DecompRow(cells=(Cell(s.tier, src.name, src.df, None, KIND_UNTOUCHED),),
                  projector=src.projector)
        for src in s.sources)
    return Decomposition(rows=rows, objects=s.objects, support=s.support,
                         tier_order=(s.tier,))


# -- efficiency matrices -----------------------------------------------------------

@dataclass(frozen=True)
class EfficiencyMatrix:
    row_keys: tuple[str, ...]
    col_keys: tuple[str, ...]
    entries: dict[tuple[str, str], Fraction] = field(default_factory=dict)

    def get(self, row: str, col: str) -> Fraction:
        return self.entries.get((row, col), Fraction(0))

    def column_sums(self) -> dict[str, Fraction]:
        return {c: sum((self.get(r, c) for r in self.row_keys), Fraction(0))
                for c in self.col_keys}

    def product(self, other: "EfficiencyMatrix") -> "EfficiencyMatrix":
        if set(self.col_keys) != set(other.row_keys):
            raise DimensionError(
                "efficiency matrices are not conformable: "
                f"{self.col_keys} vs {other.row_keys}")
        entries = {}
        for r in self.row_keys:
            for c in other.col_keys:
                v = sum((self.get(r, k) * other.get(k, c) for k in self.col_keys),
                        Fraction(0))
                if v:
                    entries[(r, c)] = v
        return EfficiencyMatrix(self.row_keys, other.col_keys, entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EfficiencyMatrix):
            return NotImplemented
        if set(self.row_keys) != set(other.row_keys) or \
           set(self.col_keys) != set(other.col_keys):
            return False
        return all(self.get(r, c) == other.get(r, c)
                   for r in self.row_keys for c in self.col_keys)

    __hash__ = None

    def nonzero(self) -> dict[tuple[str, str], Fraction]:
        return {k: v for k, v in self.entries.items() if v}


def efficiency_product_check(l_pq: EfficiencyMatrix, l_qr: EfficiencyMatrix,
                             l_pr: EfficiencyMatrix) -> bool:
    """Exact test of the chain law for efficiency matrices."""
    return l_pq.product(l_qr) == l_pr


# -- balance checking ---------------------------------------------------------------

@dataclass(frozen=True)
class BalanceViolation:
    kind: str                    # "first_order" or "adjusted_orthogonality"
    p_name: str
    q_names: tuple[str, ...]
    magnitude: Fraction


@dataclass(frozen=True)
class BalanceReport:
    verdict: str
    efficiency: EfficiencyMatrix | None
    violations: tuple[BalanceViolation, ...] = ()

    def ok(self) -> bool:
        return self.verdict in (VERDICT_ORTHOGONAL, VERDICT_BALANCED)


def efficiency_factor(p: LabeledMatrix, q: LabeledMatrix) -> Fraction:
    """Candidate efficiency factor from traces.

    Valid as the true scalar only under first-order balance, which the
    caller must verify separately before trusting the value.
    """
    tq = q.trace()
    if tq == 0:
        raise StructuralError("efficiency factor against a zero projector")
    return (p @ q).trace() / tq


def _verdict(lams: Iterable[Fraction], violations: Sequence[BalanceViolation]) -> str:
    first_order_ok = not any(v.kind == "first_order" for v in violations)
    adjusted_ok = not any(v.kind == "adjusted_orthogonality" for v in violations)
    if not first_order_ok:
        return VERDICT_UNBALANCED
    if not adjusted_ok:
        return VERDICT_FIRST_ORDER
    if all(l in (0, 1) for l in lams):
        return VERDICT_ORTHOGONAL
    return VERDICT_BALANCED


def check_balance(d: Decomposition | Sequence[tuple[str, LabeledMatrix]],
                  q_struct: Structure) -> BalanceReport:
    """Exact structure-balance test of q_struct against a decomposition.

    For every pair the trace candidate lambda is computed and the identity
    Q P Q = lambda Q is tested exactly; for every pair of distinct sources,
    Q1 P Q2 = 0.  Dense reference implementation.
    """
    if isinstance(d, Decomposition):
        pairs = [(row.label, row.projector) for row in d.rows]
    else:
        pairs = list(d)
    for name, p in pairs:
        if p is None:
            raise StructuralError(f"row {name!r} has no materialized projector")
        if set(p.row_labels) != set(q_struct.objects.labels):
            raise DimensionError(
                f"row {name!r} and structure {q_struct.tier!r} live on "
                "different object sets")
    violations: list[BalanceViolation] = []
    lams: dict[tuple[str, str], Fraction] = {}
    for name, p in pairs:
        qps = {}
        for src in q_struct.sources:
            qp = src.projector @ p
            lam = qp.trace() / src.df
            qpq = qp @ src.projector
            diff = qpq - src.projector.scale(lam)
            if not diff.is_zero():
                violations.append(BalanceViolation(
                    "first_order", name, (src.name,), diff.max_abs()))
            if lam:
                lams[(name, src.name)] = lam
            qps[src.name] = qp
        for i, a in enumerate(q_struct.sources):
            for b in q_struct.sources[i + 1:]:
                cross = qps[a.name] @ b.projector
                if not cross.is_zero():
                    violations.append(BalanceViolation(
                        "adjusted_orthogonality", name, (a.name, b.name),
                        cross.max_abs()))
    verdict = _verdict(lams.values(), violations)
    eff = None
    if verdict != VERDICT_UNBALANCED:
        eff = EfficiencyMatrix(tuple(name for name, _ in pairs),
                               q_struct.names(), lams)
    return BalanceReport(verdict=verdict, efficiency=eff,
                         violations=tuple(violations))


# -- the two refinement operators ------------------------------------------------------

def pertain(p: LabeledMatrix, q: LabeledMatrix, lam: Fraction) -> LabeledMatrix:
    """Projector onto the part of Im p carrying information about Im q."""
    if lam == 0:
        raise StructuralError("pertain requires a nonzero efficiency factor")
    out = (p @ q @ p).scale(1 / Fraction(lam))
    if out.trace() != q.trace():
        raise StructuralError(
            "pertain changed rank; the pair is not first-order balanced")
    return out


def residual(p: LabeledMatrix, pertained: Sequence[LabeledMatrix]) -> LabeledMatrix:
    """Projector onto the part of Im p orthogonal to the randomized space."""
    out = p
    for q in pertained:
        out = out - q
    return out


def refine(d: Decomposition, q_struct: Structure,
           report: BalanceReport) -> Decomposition:
    """Split every row of d by the sources of q_struct.

    Each row gains one pertain row per source with a nonzero efficiency
    factor (in q_struct's order) followed by its residual row; rows with no
    information about the new tier pass through untouched.  Rank-0
    residuals are dropped but logged.
    """
    if not report.ok():
        raise UnbalancedError(
            f"refinement refused: verdict {report.verdict!r}", report=report)
    rows: list[DecompRow] = []
    dropped = list(d.dropped)
    nonorth = report.verdict == VERDICT_BALANCED
    for row in d.rows:
        touched = []
        for src in q_struct.sources:
            lam = report.efficiency.get(row.label, src.name)
            if lam == 0:
                continue
            proj = pertain(row.projector, src.projector, lam) \
                if row.projector is not None else None
            cells = row.cells + (Cell(q_struct.tier, src.name, src.df, lam,
                                      KIND_PERTAIN),)
            touched.append(DecompRow(cells=cells, projector=proj))
        if not touched:
            rows.append(row)
            continue
        rows.extend(touched)
        rest_df = row.df - sum(t.df for t in touched)
        if rest_df > 0:
            proj = residual(row.projector, [t.projector for t in touched]) \
                if row.projector is not None else None
            cells = row.cells + (Cell(q_struct.tier, RESIDUAL_LABEL, rest_df,
                                      None, KIND_RESIDUAL),)
            rows.append(DecompRow(cells=cells, projector=proj))
        elif rest_df == 0:
            dropped.append(f"{row.label} ⊢ {q_struct.tier}")
        else:
            raise StructuralError(
                f"row {row.label!r} lost rank while refining by {q_struct.tier!r}")
    tier_order = d.tier_order + (q_struct.tier,)
    nonorth_tiers = set(d.nonorthogonal_tiers)
    if nonorth:
        nonorth_tiers.add(q_struct.tier)
    return Decomposition(rows=tuple(rows), objects=d.objects, support=d.support,
                         tier_order=tier_order,
                         nonorthogonal_tiers=frozenset(nonorth_tiers),
                         dropped=tuple(dropped))
