"""Modalities and the seven non-empty modality combinations."""
from __future__ import annotations

import enum
from functools import total_ordering


class Modality(enum.Enum):
    TEXT = "T"
    VIDEO = "V"
    AUDIO = "A"

    @property
    def order(self) -> int:
        return _MODALITY_ORDER[self]

    def __lt__(self, other: "Modality") -> bool:
        return self.order < other.order


_MODALITY_ORDER = {Modality.TEXT: 0, Modality.VIDEO: 1, Modality.AUDIO: 2}


@total_ordering
class ModalityCombo:
    """Non-empty subset of {T, V, A}; ordering follows the canonical display
    sequence T, V, A, T+V, T+A, V+A, T+V+A (singletons, pairs, triple)."""

    __slots__ = ("members",)

    def __init__(self, members) -> None:
        members = frozenset(members)
        if not members:
            raise ValueError("modality combo must be non-empty")
        if not all(isinstance(m, Modality) for m in members):
            raise TypeError("combo members must be Modality values")
        object.__setattr__(self, "members", members)

    def __setattr__(self, name, value):
        raise AttributeError("ModalityCombo is immutable")

    def __contains__(self, modality: Modality) -> bool:
        return modality in self.members

    def __iter__(self):
        return iter(sorted(self.members, key=lambda m: m.order))

    def __len__(self) -> int:
        return len(self.members)

    def __eq__(self, other) -> bool:
        return isinstance(other, ModalityCombo) and self.members == other.members

    def __hash__(self) -> int:
        return hash(self.members)

    def __lt__(self, other: "ModalityCombo") -> bool:
        return self.canonical_index < other.canonical_index

    def __repr__(self) -> str:
        return f"ModalityCombo({self.name!r})"

    @property
    def name(self) -> str:
        return "+".join(m.value for m in self)

    @property
    def canonical_index(self) -> int:
        return _CANONICAL_INDEX[self.members]

    def issubset(self, other: "ModalityCombo") -> bool:
        return self.members <= other.members

    def issuperset(self, other: "ModalityCombo") -> bool:
        return self.members >= other.members

    @classmethod
    def parse(cls, text: str) -> "ModalityCombo":
        tags = [t.strip() for t in text.split("+") if t.strip()]
        members = []
        for tag in tags:
            try:
                members.append(Modality(tag.upper()))
            except ValueError:
                raise ValueError(f"unknown modality tag {tag!r} in combo {text!r}") from None
        return cls(members)


T = Modality.TEXT
V = Modality.VIDEO
A = Modality.AUDIO

COMBO_T = ModalityCombo([T])
COMBO_V = ModalityCombo([V])
COMBO_A = ModalityCombo([A])
COMBO_TV = ModalityCombo([T, V])
COMBO_TA = ModalityCombo([T, A])
COMBO_VA = ModalityCombo([V, A])
COMBO_TVA = ModalityCombo([T, V, A])

# Row order of the combination-share table: singletons, pairs, full set.
CANONICAL_COMBOS = (COMBO_T, COMBO_V, COMBO_A, COMBO_TV, COMBO_TA, COMBO_VA, COMBO_TVA)

_CANONICAL_INDEX = {c.members: i for i, c in enumerate(CANONICAL_COMBOS)}
