"""Ordinal quality grades: c0 is the best quality, c4 the worst."""

from enum import IntEnum

NUM_GRADES = 5


class QualityGrade(IntEnum):
    C0 = 0
    C1 = 1
    C2 = 2
    C3 = 3
    C4 = 4

    @property
    def label(self) -> str:
        return f"c{int(self)}"

    @classmethod
    def from_label(cls, label: str) -> "QualityGrade":
        if len(label) == 2 and label[0] in "cC" and label[1].isdigit():
            return cls(int(label[1]))
        raise ValueError(f"not a quality grade label: {label!r}")


GRADE_LABELS = [g.label for g in QualityGrade]
