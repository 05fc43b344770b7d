from __future__ import annotations

from dataclasses import dataclass, field

FEATURES = ("f1", "f2", "f3", "f4", "f5", "f6", "f7")
NO_TRANSFER = "no-transfer"


@dataclass(frozen=True)
class FeatureVector:
    f1_addr_steps: int = 0
    f2_string_ops: int = 0
    f3_external_call: int = 0
    f4_branch_height: int = 0
    f5_tir: float = 0.0
    f6_similarity: float = 0.0
    f7_irrelevant_logs: int = 0
    site_count: int = 0
    flags: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        if not 0.0 <= self.f5_tir <= 1.0:
            raise ValueError(f"f5_tir out of range: {self.f5_tir}")
        if not 0.0 <= self.f6_similarity <= 100.0:
            raise ValueError(f"f6_similarity out of range: {self.f6_similarity}")
        if self.f3_external_call not in (0, 1) or self.f7_irrelevant_logs not in (0, 1):
            raise ValueError("f3/f7 must be 0 or 1")

    @property
    def has_transfer(self) -> bool:
        return NO_TRANSFER not in self.flags

    def values(self) -> tuple[float, ...]:
        return (self.f1_addr_steps, self.f2_string_ops, self.f3_external_call,
                self.f4_branch_height, self.f5_tir, self.f6_similarity,
                self.f7_irrelevant_logs)

    def to_dict(self) -> dict:
        d = dict(zip(FEATURES, self.values()))
        d["site_count"] = self.site_count
        d["flags"] = sorted(self.flags)
        return d

    @classmethod
    def from_values(cls, values, site_count: int = 1, flags=()) -> "FeatureVector":
        f1, f2, f3, f4, f5, f6, f7 = values
        return cls(int(f1), int(f2), int(f3), int(f4), float(f5), float(f6), int(f7),
                   site_count, frozenset(flags))

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureVector":
        return cls.from_values([d[k] for k in FEATURES], d.get("site_count", 1), d.get("flags", ()))

    @classmethod
    def no_transfer(cls, flags=()) -> "FeatureVector":
        return cls(flags=frozenset(flags) | {NO_TRANSFER})
