"""Threshold combinatorics on simple-normal-crossing resolution data.

Everything in this module is exact: multiplicities and discrepancies are
integers, thresholds are ``fractions.Fraction``, and no floating point is
involved.  The standard singular-fiber configurations of minimal elliptic
surfaces are available through :func:`kodaira_resolution` and serve as an
exhaustive oracle for the threshold/log-power pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import InvalidInputError


@dataclass(frozen=True)
class DivisorRecord:
    """One irreducible component: multiplicity a and discrepancy k."""

    id: str
    multiplicity: int
    discrepancy: int

    def __post_init__(self):
        if not self.id:
            raise InvalidInputError("divisor id must be a nonempty string")
        if not isinstance(self.multiplicity, int) or self.multiplicity < 1:
            raise InvalidInputError(
                f"divisor {self.id!r}: multiplicity must be a positive integer"
            )
        if not isinstance(self.discrepancy, int) or self.discrepancy < 0:
            raise InvalidInputError(
                f"divisor {self.id!r}: discrepancy must be a nonnegative integer"
            )

    @property
    def threshold(self) -> Fraction:
        """(discrepancy + 1) / multiplicity, exact."""
        return Fraction(self.discrepancy + 1, self.multiplicity)


@dataclass(frozen=True)
class NerveFace:
    """A set of divisor ids with nonempty common intersection."""

    members: frozenset[str]

    def __post_init__(self):
        if not self.members:
            raise InvalidInputError("nerve face must be nonempty")

    @classmethod
    def of(cls, *ids: str) -> "NerveFace":
        return cls(frozenset(ids))


@dataclass(frozen=True)
class ResolutionData:
    """SNC resolution record: divisor list plus intersection nerve.

    Only maximal faces need be listed; the downward closure (in particular
    every singleton) is implied.  ``ambient_dimension`` bounds the size of
    any face.
    """

    ambient_dimension: int
    divisors: tuple[DivisorRecord, ...]
    nerve: tuple[NerveFace, ...]

    def __post_init__(self):
        if self.ambient_dimension < 2:
            raise InvalidInputError("ambient dimension must be >= 2")
        if not self.divisors:
            raise InvalidInputError("divisor list must be nonempty")
        ids = [d.id for d in self.divisors]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("divisor ids must be unique")
        known = set(ids)
        for face in self.nerve:
            unknown = face.members - known
            if unknown:
                raise InvalidInputError(f"nerve face references unknown ids {sorted(unknown)}")
            if len(face.members) > self.ambient_dimension:
                raise InvalidInputError(
                    f"nerve face {sorted(face.members)} exceeds ambient dimension "
                    f"{self.ambient_dimension}"
                )

    def divisor(self, divisor_id: str) -> DivisorRecord:
        for d in self.divisors:
            if d.id == divisor_id:
                return d
        raise InvalidInputError(f"unknown divisor id {divisor_id!r}")

    def faces(self) -> Iterable[frozenset[str]]:
        """Listed faces plus the implied singletons."""
        seen = set()
        for face in self.nerve:
            if face.members not in seen:
                seen.add(face.members)
                yield face.members
        for d in self.divisors:
            single = frozenset((d.id,))
            if single not in seen:
                seen.add(single)
                yield single


def lct(data: ResolutionData) -> Fraction:
    """Minimum of (k_j + 1) / a_j over all divisors, exact."""
    return min(d.threshold for d in data.divisors)


def log_multiplicity(data: ResolutionData) -> int:
    """Largest number of threshold-achieving divisors sharing a nerve face."""
    beta = lct(data)
    best = 0
    for face in data.faces():
        count = sum(1 for did in face if data.divisor(did).threshold == beta)
        best = max(best, count)
    return best


def asymptotic_profile(data: ResolutionData) -> tuple[Fraction, int]:
    """The pair (threshold, log power) governing the fiber-volume blow-up."""
    return lct(data), log_multiplicity(data)


def representative_face(data: ResolutionData) -> tuple[Fraction, ...]:
    """Exponent tuple of a face realizing the log power.

    Among faces achieving the maximal minimizer count, prefer the one whose
    non-minimizing exponents sit farthest above the threshold (a pure
    minimizer face counts as infinitely separated), then the smallest face.
    Ties break lexicographically on sorted member ids, so the choice is
    deterministic.  The returned exponents are sorted ascending.
    """
    beta = lct(data)
    n_target = log_multiplicity(data)

    def gap(face: frozenset[str]) -> Fraction | None:
        others = [data.divisor(d).threshold - beta for d in face
                  if data.divisor(d).threshold != beta]
        return min(others) if others else None

    best = None
    best_key = None
    for face in data.faces():
        count = sum(1 for did in face if data.divisor(did).threshold == beta)
        if count != n_target:
            continue
        g = gap(face)
        # None (pure minimizer face) sorts above every finite gap.
        key = (g is not None, Fraction(0) - (g or Fraction(0)), len(face), tuple(sorted(face)))
        if best is None or key < best_key:
            best, best_key = face, key
    assert best is not None
    return tuple(sorted(data.divisor(d).threshold for d in best))


# ---------------------------------------------------------------------------
# Kodaira fiber types of minimal elliptic surfaces
# ---------------------------------------------------------------------------

KODAIRA_KINDS = (
    "mI0", "mI1", "mI2", "mIb",
    "I0star", "Ibstar",
    "II", "III", "IV", "IIstar", "IIIstar", "IVstar",
)

#: Exact (threshold, log power) per type; thresholds of the multiple-fiber
#: rows divide by the fiber multiplicity m.
KODAIRA_TABLE = {
    "mI0": (Fraction(1), 1),
    "mI1": (Fraction(1), 2),
    "mI2": (Fraction(1), 2),
    "mIb": (Fraction(1), 2),
    "I0star": (Fraction(1, 2), 1),
    "Ibstar": (Fraction(1, 2), 2),
    "II": (Fraction(5, 6), 1),
    "III": (Fraction(3, 4), 1),
    "IV": (Fraction(2, 3), 1),
    "IIstar": (Fraction(1, 6), 1),
    "IIIstar": (Fraction(1, 4), 1),
    "IVstar": (Fraction(1, 3), 1),
}

_MULTIPLE_FIBER_KINDS = {"mI0", "mI1", "mI2", "mIb"}


def kodaira_table_entry(kind: str, m: int = 1) -> tuple[Fraction, int]:
    """Tabulated (threshold, log power), with the 1/m scaling applied."""
    if kind not in KODAIRA_TABLE:
        raise InvalidInputError(f"unknown Kodaira type {kind!r}")
    beta, n = KODAIRA_TABLE[kind]
    if kind in _MULTIPLE_FIBER_KINDS:
        beta = beta / m
    return beta, n


def _records(pairs: Sequence[tuple[int, int]]) -> tuple[DivisorRecord, ...]:
    return tuple(
        DivisorRecord(f"E{i + 1}", a, k) for i, (a, k) in enumerate(pairs)
    )


def _faces(pairs: Iterable[tuple[int, int]]) -> tuple[NerveFace, ...]:
    return tuple(NerveFace.of(f"E{i}", f"E{j}") for i, j in pairs)


def kodaira_resolution(kind: str, m: int = 1, b: int | None = None) -> ResolutionData:
    """Resolution data for a Kodaira fiber type.

    The SNC types (mI0, mIb b>=3, Ibstar b>=0, IIstar, IIIstar, IVstar) use
    the identity resolution with zero discrepancies; II, III, IV, mI1 and
    mI2 use the minimal log resolutions with the listed discrepancies.
    ``m`` applies to the multiple-fiber types only, ``b`` selects the cycle
    or chain length where the type has one.
    """
    if kind not in KODAIRA_KINDS:
        raise InvalidInputError(f"unknown Kodaira type {kind!r}")
    if not isinstance(m, int) or m < 1:
        raise InvalidInputError("fiber multiplicity m must be a positive integer")
    if kind not in _MULTIPLE_FIBER_KINDS and m != 1:
        raise InvalidInputError(f"type {kind} does not take a fiber multiplicity")

    if kind == "mI0":
        return ResolutionData(2, _records([(m, 0)]), ())
    if kind == "mI1":
        # Blow up the node: the exceptional curve meets the strict transform.
        return ResolutionData(2, _records([(m, 0), (2 * m, 1)]), _faces([(1, 2)]))
    if kind == "mI2":
        # Blow up both intersection points; the two exceptional curves each
        # meet both strict transforms, which become disjoint.
        return ResolutionData(
            2,
            _records([(m, 0), (m, 0), (2 * m, 1), (2 * m, 1)]),
            _faces([(1, 3), (2, 3), (1, 4), (2, 4)]),
        )
    if kind == "mIb":
        if b is None or b < 3:
            raise InvalidInputError("type mIb requires b >= 3")
        cycle = [(i, i + 1) for i in range(1, b)] + [(b, 1)]
        return ResolutionData(2, _records([(m, 0)] * b), _faces(cycle))
    if kind == "I0star":
        return ResolutionData(
            2,
            _records([(1, 0)] * 4 + [(2, 0)]),
            _faces([(1, 5), (2, 5), (3, 5), (4, 5)]),
        )
    if kind == "Ibstar":
        if b is None or b < 1:
            raise InvalidInputError("type Ibstar requires b >= 1")
        # Four reduced tails, two on each end of a chain of b+1 double curves.
        tails = [(1, 0)] * 4
        chain = [(2, 0)] * (b + 1)
        faces = [(1, 5), (2, 5), (3, 5 + b), (4, 5 + b)]
        faces += [(5 + i, 6 + i) for i in range(b)]
        return ResolutionData(2, _records(tails + chain), _faces(faces))
    if kind == "II":
        return ResolutionData(
            2,
            _records([(1, 0), (2, 1), (3, 2), (6, 4)]),
            _faces([(1, 4), (2, 4), (3, 4)]),
        )
    if kind == "III":
        return ResolutionData(
            2,
            _records([(1, 0), (1, 0), (2, 1), (4, 2)]),
            _faces([(1, 4), (2, 4), (3, 4)]),
        )
    if kind == "IV":
        return ResolutionData(
            2,
            _records([(1, 0), (1, 0), (1, 0), (3, 1)]),
            _faces([(1, 4), (2, 4), (3, 4)]),
        )
    if kind == "IIstar":
        # Affine E8 multiplicities 1-2-3-4-5-6-4-2 with a 3 hanging off the 6.
        return ResolutionData(
            2,
            _records([(1, 0), (2, 0), (3, 0), (4, 0), (5, 0), (6, 0), (4, 0), (2, 0), (3, 0)]),
            _faces([(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (6, 9)]),
        )
    if kind == "IIIstar":
        # Affine E7 multiplicities 1-2-3-4-3-2-1 with a 2 hanging off the 4.
        return ResolutionData(
            2,
            _records([(1, 0), (2, 0), (3, 0), (4, 0), (3, 0), (2, 0), (1, 0), (2, 0)]),
            _faces([(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (4, 8)]),
        )
    # IVstar: affine E6, central 3 with three 2-1 arms.
    return ResolutionData(
        2,
        _records([(3, 0), (2, 0), (1, 0), (2, 0), (1, 0), (2, 0), (1, 0)]),
        _faces([(1, 2), (2, 3), (1, 4), (4, 5), (1, 6), (6, 7)]),
    )


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def to_dict(data: ResolutionData) -> dict:
    return {
        "dimension": data.ambient_dimension,
        "divisors": [
            {"id": d.id, "a": d.multiplicity, "k": d.discrepancy} for d in data.divisors
        ],
        "nerve": [sorted(face.members) for face in data.nerve],
    }


def from_dict(doc: dict) -> ResolutionData:
    try:
        dim = int(doc["dimension"])
        divisors = tuple(
            DivisorRecord(str(rec["id"]), int(rec["a"]), int(rec["k"]))
            for rec in doc["divisors"]
        )
        nerve = tuple(NerveFace(frozenset(str(i) for i in face)) for face in doc["nerve"])
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed resolution document: {exc}") from exc
    return ResolutionData(dim, divisors, nerve)
