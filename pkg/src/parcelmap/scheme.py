"""Three-level land-use taxonomy.

Level 0 splits the city into non-built-up (NBUR) and built-up (BUR) regions,
level 1 has eight functional classes and level 2 sixteen. Ids are assigned in
table order (top to bottom), so class maps serialize deterministically and the
"smallest id wins" tie rules used elsewhere are stable.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class Level(enum.IntEnum):
    L0 = 0
    L1 = 1
    L2 = 2

    @classmethod
    def parse(cls, value: "Level | str | int") -> "Level":
        if isinstance(value, Level):
            return value
        if isinstance(value, int):
            return cls(value)
        text = str(value).strip().upper()
        if text.startswith("L"):
            text = text[1:]
        return cls(int(text))


@dataclass(frozen=True)
class LandUseClass:
    id: int
    code: str
    name: str
    level: Level
    parent_id: int | None = None


class SchemeError(ValueError):
    pass


class CategoryScheme:
    """Immutable class hierarchy with parent links and lookup helpers."""

    def __init__(self, classes: Iterable[LandUseClass]):
        self._classes = tuple(sorted(classes, key=lambda c: c.id))
        self._by_id = {c.id: c for c in self._classes}
        if len(self._by_id) != len(self._classes):
            raise SchemeError("duplicate class ids")
        self._by_code: dict[tuple[Level, str], LandUseClass] = {}
        for c in self._classes:
            key = (c.level, c.code)
            if key in self._by_code:
                raise SchemeError(f"duplicate code {c.code!r} at level {c.level.name}")
            self._by_code[key] = c
        self._validate()

    def _validate(self) -> None:
        roots = [c for c in self._classes if c.level == Level.L0]
        if sorted(c.code for c in roots) != ["BUR", "NBUR"]:
            raise SchemeError("level 0 must be exactly {NBUR, BUR}")
        for c in self._classes:
            if c.level == Level.L0:
                if c.parent_id is not None:
                    raise SchemeError(f"level-0 class {c.code} cannot have a parent")
                continue
            parent = self._by_id.get(c.parent_id)  # type: ignore[arg-type]
            if parent is None:
                raise SchemeError(f"class {c.code} has unknown parent {c.parent_id}")
            if parent.level != c.level - 1:
                raise SchemeError(f"class {c.code} parent is not one level up")

    # lookups

    @property
    def classes(self) -> tuple[LandUseClass, ...]:
        return self._classes

    def __getitem__(self, class_id: int) -> LandUseClass:
        try:
            return self._by_id[class_id]
        except KeyError:
            raise SchemeError(f"unknown class id {class_id}") from None

    def __contains__(self, class_id: object) -> bool:
        return class_id in self._by_id

    def by_code(self, code: str, level: Level | str | int) -> LandUseClass:
        try:
            return self._by_code[(Level.parse(level), code)]
        except KeyError:
            raise SchemeError(f"unknown code {code!r} at level {Level.parse(level).name}") from None

    def find_code(self, code: str) -> LandUseClass:
        """Resolve a code, preferring the finest level where it exists."""
        for level in (Level.L2, Level.L1, Level.L0):
            c = self._by_code.get((level, code))
            if c is not None:
                return c
        raise SchemeError(f"unknown code {code!r}")

    def at_level(self, level: Level | str | int) -> list[LandUseClass]:
        lv = Level.parse(level)
        return [c for c in self._classes if c.level == lv]

    def ids_at_level(self, level: Level | str | int) -> list[int]:
        return [c.id for c in self.at_level(level)]

    def children(self, class_id: int) -> list[LandUseClass]:
        return [c for c in self._classes if c.parent_id == class_id]

    def descendants(self, class_id: int, level: Level | str | int) -> list[LandUseClass]:
        lv = Level.parse(level)
        base = self[class_id]
        if lv < base.level:
            raise SchemeError(f"level {lv.name} is above {base.code} ({base.level.name})")
        return [c for c in self.at_level(lv) if self.ancestor_at(c.id, base.level).id == class_id]

    def ancestor_at(self, class_id: int, level: Level | str | int) -> LandUseClass:
        """Return the unique ancestor of ``class_id`` at ``level`` (identity if equal)."""
        lv = Level.parse(level)
        c = self[class_id]
        if lv > c.level:
            raise SchemeError(f"level {lv.name} is below {c.code} ({c.level.name})")
        while c.level > lv:
            c = self._by_id[c.parent_id]  # type: ignore[index]
        return c

    def root_code(self, class_id: int) -> str:
        return self.ancestor_at(class_id, Level.L0).code

    def is_builtup(self, class_id: int) -> bool:
        return self.root_code(class_id) == "BUR"

    @property
    def bur(self) -> LandUseClass:
        return self.by_code("BUR", Level.L0)

    @property
    def nbur(self) -> LandUseClass:
        return self.by_code("NBUR", Level.L0)

    # serialization

    def to_dict(self) -> dict:
        return {
            "classes": [
                {"id": c.id, "code": c.code, "name": c.name,
                 "level": c.level.name, "parent_id": c.parent_id}
                for c in self._classes
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CategoryScheme":
        return cls(
            LandUseClass(int(d["id"]), d["code"], d["name"], Level.parse(d["level"]),
                         None if d.get("parent_id") is None else int(d["parent_id"]))
            for d in doc["classes"]
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "CategoryScheme":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CategoryScheme) and self._classes == other._classes

    def __hash__(self) -> int:
        return hash(self._classes)

    def __repr__(self) -> str:
        counts = [len(self.at_level(lv)) for lv in Level]
        return f"CategoryScheme(L0={counts[0]}, L1={counts[1]}, L2={counts[2]})"


# (code, name, children) in table order; single-child L1 classes share their code.
_TABLE = [
    ("NBUR", "Non-built-up region", [
        ("A", "Agriculture", [("Cro", "Cropland"), ("Ore", "Orchard"), ("Aqu", "Aquaculture")]),
        ("G", "Green Space", [("For", "Forest"), ("Shr", "Shrubland")]),
        ("W", "Waterbody", [("W", "Waterbody")]),
        ("U", "Undeveloped", [("U", "Undeveloped")]),
    ]),
    ("BUR", "Built-up region", [
        ("R", "Residential", [("Vil", "Village"), ("Com", "Community")]),
        ("C", "Commercial", [("Mar", "Marketing"), ("Ser", "Service building")]),
        ("I", "Industrial", [("I", "Industrial")]),
        # Medical sits under Public Service so the built-up subtree has 4 L1 / 9 L2.
        ("P", "Public Service", [("Med", "Medical"), ("Edu", "Educational"),
                                 ("Gov", "Government"), ("Tra", "Transportation")]),
    ]),
]


def build_default_scheme() -> CategoryScheme:
    classes: list[LandUseClass] = []
    next_id = 1
    for code0, name0, l1s in _TABLE:
        id0 = next_id
        classes.append(LandUseClass(id0, code0, name0, Level.L0))
        next_id += 1
        for code1, name1, l2s in l1s:
            id1 = next_id
            classes.append(LandUseClass(id1, code1, name1, Level.L1, id0))
            next_id += 1
            for code2, name2 in l2s:
                classes.append(LandUseClass(next_id, code2, name2, Level.L2, id1))
                next_id += 1
    return CategoryScheme(classes)


DEFAULT_SCHEME = build_default_scheme()
