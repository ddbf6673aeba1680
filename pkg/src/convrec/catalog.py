"""World model: users, items, attributes, attribute types and their relations.

The catalog is immutable after construction and shared read-only across
concurrent sessions. Dataset directories use a line-oriented TSV layout:

    items.tsv         item_id <tab> comma-joined attribute_ids
    attributes.tsv    attribute_id <tab> type_id
    interactions.tsv  user_id <tab> item_id
    triplets.tsv      head <tab> relation <tab> tail

All ids are dense non-negative integers within their entity class. Triplet
heads/tails live in a single global id space: users keep their ids, items are
offset by n_users, attributes by n_users + n_items. Files are UTF-8 with LF
line endings.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

ITEMS_FILE = "items.tsv"
ATTRS_FILE = "attributes.tsv"
INTERACTIONS_FILE = "interactions.tsv"
TRIPLETS_FILE = "triplets.tsv"

REL_INTERACT = 0
REL_HAS_ATTR = 1


class CatalogError(ValueError):
    """Malformed dataset input or infeasible synthetic spec."""


@dataclass(frozen=True)
class Catalog:
    """Immutable world model."""

    users: frozenset[int]
    items: frozenset[int]
    attributes: frozenset[int]
    attribute_types: frozenset[int]
    attr_type_of: dict[int, int]
    item_attrs: dict[int, frozenset[int]]
    interactions: tuple[tuple[int, int], ...]
    triplets: tuple[tuple[int, int, int], ...] = ()

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def n_types(self) -> int:
        return len(self.attribute_types)

    @cached_property
    def attrs_by_type(self) -> dict[int, frozenset[int]]:
        by_type: dict[int, set[int]] = {t: set() for t in self.attribute_types}
        for attr, type_id in self.attr_type_of.items():
            by_type.setdefault(type_id, set()).add(attr)
        return {t: frozenset(s) for t, s in by_type.items()}

    @cached_property
    def items_by_attr(self) -> dict[int, frozenset[int]]:
        by_attr: dict[int, set[int]] = {p: set() for p in self.attributes}
        for item, attrs in self.item_attrs.items():
            for p in attrs:
                by_attr.setdefault(p, set()).add(item)
        return {p: frozenset(s) for p, s in by_attr.items()}

    @cached_property
    def items_by_user(self) -> dict[int, tuple[int, ...]]:
        """Interacted items per user, in interaction-file order."""
        by_user: dict[int, list[int]] = {u: [] for u in self.users}
        for u, v in self.interactions:
            by_user[u].append(v)
        return {u: tuple(vs) for u, vs in by_user.items()}

    def attrs_of_items(self, items) -> frozenset[int]:
        out: set[int] = set()
        for v in items:
            out |= self.item_attrs[v]
        return frozenset(out)

    def types_of_attrs(self, attrs) -> frozenset[int]:
        return frozenset(self.attr_type_of[p] for p in attrs)

    def common_attrs(self, items) -> frozenset[int]:
        sets = [self.item_attrs[v] for v in items]
        if not sets:
            return frozenset()
        common = set(sets[0])
        for s in sets[1:]:
            common &= s
        return frozenset(common)

    # Global id space used by the pretraining triplets.
    def global_item_id(self, item: int) -> int:
        return self.n_users + item

    def global_attr_id(self, attr: int) -> int:
        return self.n_users + self.n_items + attr

    @property
    def n_entities(self) -> int:
        return self.n_users + self.n_items + self.n_attributes


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the synthetic world generator.

    Leaving a range as None picks a default clamped to the world size; an
    explicit range that cannot be satisfied is an error.
    """

    n_users: int
    n_items: int
    n_attributes: int
    n_types: int
    attrs_per_item: Optional[tuple[int, int]] = None
    interactions_per_user: Optional[tuple[int, int]] = None
    seed: int = 0

    def effective_attrs_per_item(self) -> tuple[int, int]:
        if self.attrs_per_item is None:
            return (min(3, self.n_attributes), min(6, self.n_attributes))
        return self.attrs_per_item

    def effective_interactions_per_user(self) -> tuple[int, int]:
        return (4, 8) if self.interactions_per_user is None else self.interactions_per_user

    def check(self) -> None:
        for name in ("n_users", "n_items", "n_attributes", "n_types"):
            if getattr(self, name) < 1:
                raise CatalogError(f"{name} must be >= 1")
        if self.n_attributes < self.n_types:
            raise CatalogError("need n_attributes >= n_types")
        for name, (lo, hi) in (("attrs_per_item", self.effective_attrs_per_item()),
                               ("interactions_per_user", self.effective_interactions_per_user())):
            if lo < 1 or hi < lo:
                raise CatalogError(f"{name} range ({lo}, {hi}) is empty or invalid")
        if self.effective_attrs_per_item()[1] > self.n_attributes:
            raise CatalogError(
                f"infeasible: attrs_per_item upper bound {self.effective_attrs_per_item()[1]} "
                f"exceeds n_attributes={self.n_attributes}"
            )


def _parse_int(token: str, path: Path, lineno: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise CatalogError(f"{path}:{lineno}: not an integer: {token!r}") from None
    if value < 0:
        raise CatalogError(f"{path}:{lineno}: negative id: {value}")
    return value


def _read_lines(path: Path):
    if not path.is_file():
        raise CatalogError(f"missing dataset file: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if line:
                yield lineno, line


def load_catalog(path) -> Catalog:
    """Load a dataset directory, raising CatalogError on any malformed input."""
    root = Path(path)

    attrs_path = root / ATTRS_FILE
    attr_type_of: dict[int, int] = {}
    for lineno, line in _read_lines(attrs_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise CatalogError(f"{attrs_path}:{lineno}: expected 2 fields, got {len(parts)}")
        attr = _parse_int(parts[0], attrs_path, lineno)
        type_id = _parse_int(parts[1], attrs_path, lineno)
        if attr in attr_type_of and attr_type_of[attr] != type_id:
            raise CatalogError(
                f"{attrs_path}:{lineno}: attribute {attr} mapped to two types "
                f"({attr_type_of[attr]} and {type_id})"
            )
        attr_type_of[attr] = type_id
    attributes = frozenset(attr_type_of)
    attribute_types = frozenset(attr_type_of.values())

    items_path = root / ITEMS_FILE
    item_attrs: dict[int, frozenset[int]] = {}
    for lineno, line in _read_lines(items_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise CatalogError(f"{items_path}:{lineno}: expected 2 fields, got {len(parts)}")
        item = _parse_int(parts[0], items_path, lineno)
        attrs = frozenset(_parse_int(tok, items_path, lineno) for tok in parts[1].split(","))
        for p in attrs:
            if p not in attributes:
                raise CatalogError(f"{items_path}:{lineno}: item {item} references unknown attribute {p}")
        item_attrs[item] = attrs
    items = frozenset(item_attrs)

    inter_path = root / INTERACTIONS_FILE
    interactions: list[tuple[int, int]] = []
    users: set[int] = set()
    for lineno, line in _read_lines(inter_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise CatalogError(f"{inter_path}:{lineno}: expected 2 fields, got {len(parts)}")
        u = _parse_int(parts[0], inter_path, lineno)
        v = _parse_int(parts[1], inter_path, lineno)
        if v not in items:
            raise CatalogError(f"{inter_path}:{lineno}: interaction references unknown item {v}")
        users.add(u)
        interactions.append((u, v))

    triplets: list[tuple[int, int, int]] = []
    trip_path = root / TRIPLETS_FILE
    if trip_path.is_file():
        for lineno, line in _read_lines(trip_path):
            parts = line.split("\t")
            if len(parts) != 3:
                raise CatalogError(f"{trip_path}:{lineno}: expected 3 fields, got {len(parts)}")
            triplets.append(tuple(_parse_int(tok, trip_path, lineno) for tok in parts))

    catalog = Catalog(
        users=frozenset(users),
        items=items,
        attributes=attributes,
        attribute_types=attribute_types,
        attr_type_of=attr_type_of,
        item_attrs=item_attrs,
        interactions=tuple(interactions),
        triplets=tuple(triplets),
    )
    report = validate(catalog)
    if report:
        raise CatalogError("invalid catalog: " + "; ".join(report))
    return catalog


def dump_catalog(catalog: Catalog, path) -> None:
    """Write the dataset directory format read back by load_catalog."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / ATTRS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for attr in sorted(catalog.attributes):
            fh.write(f"{attr}\t{catalog.attr_type_of[attr]}\n")
    with open(root / ITEMS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for item in sorted(catalog.items):
            attrs = ",".join(str(p) for p in sorted(catalog.item_attrs[item]))
            fh.write(f"{item}\t{attrs}\n")
    with open(root / INTERACTIONS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for u, v in catalog.interactions:
            fh.write(f"{u}\t{v}\n")
    with open(root / TRIPLETS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in catalog.triplets:
            fh.write(f"{h}\t{r}\t{t}\n")


def validate(catalog: Catalog) -> list[str]:
    """Return a list of invariant violations; empty iff the catalog is valid."""
    report: list[str] = []
    if not catalog.users:
        report.append("no users")
    if not catalog.items:
        report.append("no items")
    if not catalog.attributes:
        report.append("no attributes")

    for name, ids in (
        ("user", catalog.users),
        ("item", catalog.items),
        ("attribute", catalog.attributes),
        ("attribute type", catalog.attribute_types),
    ):
        if ids and ids != frozenset(range(len(ids))):
            report.append(f"{name} ids are not dense in [0, {len(ids)})")

    for attr in catalog.attributes:
        if attr not in catalog.attr_type_of:
            report.append(f"attribute {attr} has no type")
    for attr, type_id in catalog.attr_type_of.items():
        if type_id not in catalog.attribute_types:
            report.append(f"attribute {attr} references unknown type {type_id}")

    for item in catalog.items:
        attrs = catalog.item_attrs.get(item, frozenset())
        if not attrs:
            report.append(f"item {item} has no attributes")
        unknown = attrs - catalog.attributes
        if unknown:
            report.append(f"item {item} references unknown attributes {sorted(unknown)}")

    for u, v in catalog.interactions:
        if u not in catalog.users:
            report.append(f"interaction references unknown user {u}")
        if v not in catalog.items:
            report.append(f"interaction references unknown item {v}")

    n_entities = catalog.n_entities
    for h, _r, t in catalog.triplets:
        if h >= n_entities or t >= n_entities:
            report.append(f"triplet ({h}, _, {t}) outside global entity range [0, {n_entities})")
    return report


def generate_synthetic(spec: SyntheticSpec) -> Catalog:
    """Build a seeded synthetic world.

    Each user gets a taste set anchored on one attribute; the user's items all
    carry that anchor, so any group of one user's interacted items shares at
    least one common attribute (the session initializer depends on this).
    """
    spec.check()
    rng = np.random.default_rng(spec.seed)

    # Every type gets at least one attribute; the rest are assigned uniformly.
    attr_type_of = {p: p for p in range(spec.n_types)}
    for p in range(spec.n_types, spec.n_attributes):
        attr_type_of[p] = int(rng.integers(spec.n_types))

    # Anchors come from a small pool of popular attributes so candidate sets
    # initialized from a shared attribute stay large; with few anchors the
    # opening query leaves far more candidates than a turn budget can exhaust,
    # which keeps ranking quality (not brute force) the deciding factor.
    n_anchor = max(1, spec.n_attributes // 40)
    taste_size = min(spec.n_attributes, 6)
    all_attrs = np.arange(spec.n_attributes)
    anchors = rng.integers(n_anchor, size=spec.n_users)
    tastes: list[np.ndarray] = []
    for u in range(spec.n_users):
        rest = np.setdiff1d(all_attrs, [anchors[u]])
        extra = rng.choice(rest, size=taste_size - 1, replace=False)
        tastes.append(np.concatenate(([anchors[u]], extra)))

    lo, hi = spec.effective_attrs_per_item()
    item_attrs: dict[int, frozenset[int]] = {}
    for v in range(spec.n_items):
        owner = v % spec.n_users
        k = int(rng.integers(lo, hi + 1))
        attrs = [int(anchors[owner])]
        taste_rest = [int(p) for p in tastes[owner] if p != anchors[owner]]
        n_taste = min(len(taste_rest), k - 1)
        if n_taste > 0:
            attrs.extend(int(p) for p in rng.choice(taste_rest, size=n_taste, replace=False))
        if len(attrs) < k:
            noise_pool = np.setdiff1d(all_attrs, attrs)
            noise = rng.choice(noise_pool, size=k - len(attrs), replace=False)
            attrs.extend(int(p) for p in noise)
        item_attrs[v] = frozenset(attrs)

    items_with = {p: [v for v in range(spec.n_items) if p in item_attrs[v]] for p in range(spec.n_attributes)}
    ilo, ihi = spec.effective_interactions_per_user()
    interactions: list[tuple[int, int]] = []
    for u in range(spec.n_users):
        anchor = int(anchors[u])
        pool = items_with[anchor]
        if not pool:
            # Can happen when n_users > n_items; adopt an attribute that exists.
            v0 = int(rng.integers(spec.n_items))
            anchor = int(sorted(item_attrs[v0])[0])
            pool = items_with[anchor]
        k = int(rng.integers(ilo, ihi + 1))
        chosen = rng.choice(pool, size=min(k, len(pool)), replace=False)
        interactions.extend((u, int(v)) for v in sorted(chosen))

    n_users, n_items = spec.n_users, spec.n_items
    triplets: list[tuple[int, int, int]] = [
        (u, REL_INTERACT, n_users + v) for u, v in interactions
    ]
    for v in range(n_items):
        for p in sorted(item_attrs[v]):
            triplets.append((n_users + v, REL_HAS_ATTR, n_users + n_items + p))

    catalog = Catalog(
        users=frozenset(range(spec.n_users)),
        items=frozenset(range(spec.n_items)),
        attributes=frozenset(range(spec.n_attributes)),
        attribute_types=frozenset(range(spec.n_types)),
        attr_type_of=attr_type_of,
        item_attrs=item_attrs,
        interactions=tuple(interactions),
        triplets=tuple(triplets),
    )
    report = validate(catalog)
    if report:  # pragma: no cover - generator bug guard
        raise CatalogError("generator produced invalid catalog: " + "; ".join(report))
    return catalog
