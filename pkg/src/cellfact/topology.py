"""Priority-rule topology classification with configurable guard thresholds.

Three mutually exclusive classes:

* Type-III: hierarchical / composite-key tables (several leading text
  columns over numeric data, few or no year-header columns).
* Type-II: wide matrices carrying a year signal (year headers, transposed
  year rows, or years in the body).
* Type-I: everything else.

The ``deep_hierarchy`` guard (``n_key_cols >= 3 or n_time_cols == 0``) is
evaluated and reported in ``guard_trace`` but deliberately not enforced as
a classification conjunct: the production behaviour this module reproduces
fires the composite-key rule on shallow two-column keys with a small
number of year columns (the known ranking-table misfire), and downstream
regression fixtures depend on that exact behaviour. Disabling
``guards_enabled`` removes the ``few_time_cols`` cap as well, restoring
the legacy classifier that also misfires on composite keys with many year
columns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .table import ColumnFeatures

TYPE_I = "TypeI"
TYPE_II = "TypeII"
TYPE_III = "TypeIII"


@dataclass(frozen=True)
class ClassifierConfig:
    few_time_cols_max: int = 6
    deep_hierarchy_min: int = 3
    key_cols_min: int = 2
    guards_enabled: bool = True

    def __post_init__(self):
        for name in ("few_time_cols_max", "deep_hierarchy_min", "key_cols_min"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class Override:
    original: str
    reason: str


@dataclass(frozen=True)
class Topology:
    tag: str
    rule_fired: str
    guard_trace: dict[str, bool]
    override: Override | None = None

    def as_dict(self) -> dict:
        out = {
            "tag": self.tag,
            "rule_fired": self.rule_fired,
            "guard_trace": dict(self.guard_trace),
        }
        if self.override is not None:
            out["override"] = {
                "original": self.override.original,
                "reason": self.override.reason,
            }
        return out


def classify(features: ColumnFeatures, config: ClassifierConfig | None = None) -> Topology:
    """Classify a feature vector; total over all inputs, exactly one tag."""
    config = config or ClassifierConfig()
    n_key = len(features.key_cols)
    n_time = len(features.time_cols)

    few_time_cols = n_time <= config.few_time_cols_max
    deep_hierarchy = n_key >= config.deep_hierarchy_min
    no_flags = not (features.transposed or features.year_in_body or features.fiscal)

    guard_trace = {
        "guards_enabled": config.guards_enabled,
        "few_time_cols": few_time_cols,
        "deep_hierarchy": deep_hierarchy,
        "deep_hierarchy_or_no_year_cols": deep_hierarchy or n_time == 0,
        "no_transposed_year_in_body_fiscal": no_flags,
    }

    composite = (
        n_key >= config.key_cols_min
        and features.n_numeric > 0
        and no_flags
        and (few_time_cols or not config.guards_enabled)
    )
    if composite:
        return Topology(TYPE_III, "composite-key", guard_trace)
    if n_time > 0 or features.transposed or features.year_in_body:
        return Topology(TYPE_II, "year-signal", guard_trace)
    return Topology(TYPE_I, "default", guard_trace)


def apply_override(topology: Topology, manual_tag: str, reason: str) -> Topology:
    """Replace the tag, preserving the original in the override field."""
    if not reason.strip():
        raise ValueError("override reason must be non-empty")
    if manual_tag not in (TYPE_I, TYPE_II, TYPE_III):
        raise ValueError(f"unknown tag {manual_tag!r}")
    return replace(
        topology,
        tag=manual_tag,
        override=Override(original=topology.tag, reason=reason),
    )


def identifier_cardinality_diagnostic(
    column_values: list[str], n_rows: int, threshold: float = 0.5
) -> dict:
    """Experimental, default-off diagnostic: flag identifier-like key columns.

    A key column whose distinct-value count exceeds ``threshold * n_rows``
    behaves like a per-row identifier rather than a category level. This is
    reported only; it never feeds back into :func:`classify`.
    """
    distinct = len({v for v in column_values if v.strip()})
    return {
        "distinct_values": distinct,
        "n_rows": n_rows,
        "identifier_like": n_rows > 0 and distinct > threshold * n_rows,
    }
