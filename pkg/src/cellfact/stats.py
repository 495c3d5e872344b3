"""Interaction-term computation, moderating metrics (CDS, TTF), and the
inference battery: bootstrap CIs, sign-flip permutation tests, Wilcoxon
signed-rank, McNemar, and Fisher's combined test.

All resampling is driven by an explicit seed through a single generator, so
results are reproducible and independent of any parallelism in callers.
The chi-square upper tail is computed in closed form (series recurrence),
keeping the implementation independent of the SciPy oracle used in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import StatsError
from .serialize import ChunkSet, tokenize
from .table import CsvTable

CONDITIONS = ("baseline", "serial_only", "schema_only", "full")

EVR_NORMALIZER = 20.0
TTF_PRESENCE_THRESHOLD = 0.8
DEFAULT_N_BOOT = 1_000
DEFAULT_N_PERM = 10_000
DEFAULT_SEED = 42


@dataclass(frozen=True)
class FactorialCell:
    condition: str
    per_fact: tuple[int, ...]
    per_entity: tuple[float, ...] = ()

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise StatsError(f"unknown factorial condition {self.condition!r}")

    @property
    def fc(self) -> float:
        return sum(self.per_fact) / len(self.per_fact) if self.per_fact else 0.0


@dataclass(frozen=True)
class InteractionResult:
    delta_int: float
    ci_low: float | None = None
    ci_high: float | None = None
    n_resamples: int | None = None
    seed: int | None = None

    def as_dict(self) -> dict:
        return {
            "delta_int": self.delta_int,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_resamples": self.n_resamples,
            "seed": self.seed,
        }


def interaction_point(base: float, serial: float, schema: float, full: float) -> float:
    """FC(f,s) - FC(f,s0) - FC(f0,s) + FC(f0,s0); values above 1 are legal."""
    return full - serial - schema + base


def interaction_term(cells: dict[str, FactorialCell]) -> InteractionResult:
    missing = [c for c in CONDITIONS if c not in cells]
    if missing:
        raise StatsError(f"missing factorial conditions: {missing}")
    return InteractionResult(
        interaction_point(
            cells["baseline"].fc,
            cells["serial_only"].fc,
            cells["schema_only"].fc,
            cells["full"].fc,
        )
    )


def bootstrap_ci(
    per_fact: dict[str, tuple[int, ...]],
    n_resamples: int = DEFAULT_N_BOOT,
    seed: int = DEFAULT_SEED,
    level: float = 0.95,
    *,
    entity_of_fact: tuple[int, ...] | None = None,
) -> InteractionResult:
    """Percentile bootstrap CI for the interaction term.

    Facts are the resampling unit, drawn jointly across the four paired
    condition vectors. When ``entity_of_fact`` is given, entire entity
    clusters are resampled instead (the robustness variant for facts that
    share an entity).
    """
    missing = [c for c in CONDITIONS if c not in per_fact]
    if missing:
        raise StatsError(f"missing factorial conditions: {missing}")
    arrays = {c: np.asarray(per_fact[c], dtype=float) for c in CONDITIONS}
    n = len(arrays["baseline"])
    if n == 0:
        raise StatsError("bootstrap needs non-empty per-fact vectors")
    if any(len(a) != n for a in arrays.values()):
        raise StatsError("per-fact vectors must have equal length across conditions")

    rng = np.random.default_rng(seed)
    point = interaction_point(*(arrays[c].mean() for c in CONDITIONS))
    stats = np.empty(n_resamples)
    if entity_of_fact is not None:
        entity_ids = np.asarray(entity_of_fact)
        clusters = np.unique(entity_ids)
        members = [np.flatnonzero(entity_ids == c) for c in clusters]
        for b in range(n_resamples):
            picked = rng.integers(0, len(clusters), size=len(clusters))
            idx = np.concatenate([members[i] for i in picked])
            stats[b] = interaction_point(*(arrays[c][idx].mean() for c in CONDITIONS))
    else:
        for b in range(n_resamples):
            idx = rng.integers(0, n, size=n)
            stats[b] = interaction_point(*(arrays[c][idx].mean() for c in CONDITIONS))
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return InteractionResult(point, float(low), float(high), n_resamples, seed)


def bootstrap_mean_ci(
    values: tuple[float, ...] | list[float],
    n_resamples: int = DEFAULT_N_BOOT,
    seed: int = DEFAULT_SEED,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap CI of a single vector's mean (EC/FC style)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise StatsError("bootstrap needs a non-empty vector")
    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        stats[b] = arr[rng.integers(0, arr.size, size=arr.size)].mean()
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return float(low), float(high)


@dataclass(frozen=True)
class PermutationResult:
    p: float
    effect_r: float
    observed: float
    n_perm: int
    mode: str  # "exact" | "sampled"
    seed: int

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "effect_r": self.effect_r,
            "observed": self.observed,
            "n_perm": self.n_perm,
            "mode": self.mode,
            "seed": self.seed,
        }


def permutation_test(
    differences: list[float] | tuple[float, ...],
    n_perm: int = DEFAULT_N_PERM,
    seed: int = DEFAULT_SEED,
) -> PermutationResult:
    """Two-sided sign-flip permutation test on paired per-entity differences.

    Switches to exact enumeration of all 2^n sign patterns whenever that is
    no more work than the requested number of sampled permutations. Sampled
    mode applies the add-one correction p = (1 + #{|T| >= |T_obs|}) / (n_perm + 1).
    Effect size r = observed statistic / sd of the permutation distribution.
    """
    diffs = np.asarray(differences, dtype=float)
    if diffs.size == 0:
        raise StatsError("permutation test needs at least one difference")
    observed = float(diffs.mean())
    if not np.any(diffs != 0):
        return PermutationResult(1.0, 0.0, observed, n_perm, "degenerate", seed)

    n = diffs.size
    if 2**n <= n_perm:
        signs = np.array(list(product((1.0, -1.0), repeat=n)))
        stats = (signs * diffs).mean(axis=1)
        extreme = int(np.sum(np.abs(stats) >= abs(observed) - 1e-12))
        p = extreme / len(stats)
        sd = float(stats.std())
        return PermutationResult(p, observed / sd if sd else 0.0, observed, n_perm, "exact", seed)

    rng = np.random.default_rng(seed)
    signs = rng.choice((1.0, -1.0), size=(n_perm, n))
    stats = (signs * diffs).mean(axis=1)
    extreme = int(np.sum(np.abs(stats) >= abs(observed) - 1e-12))
    p = (1 + extreme) / (n_perm + 1)
    sd = float(stats.std())
    return PermutationResult(p, observed / sd if sd else 0.0, observed, n_perm, "sampled", seed)


@dataclass(frozen=True)
class WilcoxonResult:
    p_two_sided: float
    p_adjusted: float
    effect_r: float
    statistic: float
    z: float
    n_nonzero: int

    def as_dict(self) -> dict:
        return {
            "p_two_sided": self.p_two_sided,
            "p_adjusted": self.p_adjusted,
            "effect_r": self.effect_r,
            "statistic": self.statistic,
            "z": self.z,
            "n_nonzero": self.n_nonzero,
        }


def wilcoxon_signed_rank(
    x: list[float], y: list[float] | None = None, bonferroni_k: int = 1
) -> WilcoxonResult:
    """Signed-rank test with normal approximation and tie correction.

    Zero differences are dropped. p_adjusted = min(1, k * p). The effect
    size is r = |Z| / sqrt(n); published values computed with other r
    definitions may differ.
    """
    xs = np.asarray(x, dtype=float)
    if y is not None:
        ys = np.asarray(y, dtype=float)
        if xs.shape != ys.shape:
            raise StatsError("paired vectors must have equal length")
        diffs = xs - ys
    else:
        diffs = xs
    diffs = diffs[diffs != 0]
    n = diffs.size
    if n == 0:
        raise StatsError("all pairs are zero after zero-dropping")

    ranks = _average_ranks(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    var -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    if var <= 0:
        raise StatsError("zero variance: all differences are tied")
    z = (w_plus - mean) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(
        p_two_sided=p,
        p_adjusted=min(1.0, bonferroni_k * p),
        effect_r=abs(z) / math.sqrt(n),
        statistic=w_plus,
        z=z,
        n_nonzero=n,
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def mcnemar(b: int, c: int, continuity: bool = False) -> float:
    """Chi-square for paired disagreement counts: (|b-c| - corr)^2 / (b+c)."""
    if b + c == 0:
        raise StatsError("McNemar needs b + c > 0")
    correction = 1.0 if continuity else 0.0
    return (abs(b - c) - correction) ** 2 / (b + c)


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability via the standard series recurrence."""
    if x < 0 or df < 1:
        raise StatsError("chi2_sf needs x >= 0 and df >= 1")
    if df % 2 == 0:
        term = math.exp(-x / 2.0)
        total = term
        for k in range(1, df // 2):
            term *= (x / 2.0) / k
            total += term
        return min(1.0, total)
    total = math.erfc(math.sqrt(x / 2.0))
    # Odd df: Q(x; df+2) = Q(x; df) + (x/2)^(df/2) e^(-x/2) / Gamma(df/2 + 1)
    half = 0.5
    while 2 * half < df:
        total += (x / 2.0) ** half * math.exp(-x / 2.0) / math.gamma(half + 1.0)
        half += 1.0
    return min(1.0, total)


def fisher_combined(p_values: list[float], *, clamp_zero: bool = False) -> dict:
    """Fisher's method: chi^2 = -2 sum(ln p), df = 2k, upper-tail p."""
    if not p_values:
        raise StatsError("fisher_combined needs at least one p-value")
    clamped = []
    for p in p_values:
        if p <= 0:
            if not clamp_zero:
                raise StatsError("p = 0 rejected; pass clamp_zero=True to clamp")
            p = math.ulp(0.0)
        if p > 1:
            raise StatsError(f"p-value {p} above 1")
        clamped.append(p)
    chi_sq = -2.0 * sum(math.log(p) for p in clamped)
    df = 2 * len(clamped)
    return {"chi_square": chi_sq, "df": df, "p": chi2_sf(chi_sq, df)}


# ---------------------------------------------------------------------------
# Moderating metrics


@dataclass(frozen=True)
class CdsResult:
    cds: float
    scf: float
    evr: float
    mean_entity_len: float

    def as_dict(self) -> dict:
        return {
            "cds": self.cds,
            "scf": self.scf,
            "evr": self.evr,
            "mean_entity_len": self.mean_entity_len,
        }


def cds_from_components(scf: float, mean_entity_len: float) -> CdsResult:
    evr = min(1.0, mean_entity_len / EVR_NORMALIZER)
    return CdsResult(scf * evr, scf, evr, mean_entity_len)


def compute_cds(table: CsvTable, subject_cols: list[str]) -> CdsResult:
    """Column Descriptiveness Score: subject-column fraction x clamped mean
    identifier length / 20."""
    if table.n_cols == 0:
        raise StatsError("CDS needs at least one column")
    indices = [table.column_by_label(label) for label in subject_cols]
    scf = len(indices) / table.n_cols
    lengths = [
        len(row[i].strip()) for row in table.rows for i in indices if row[i].strip()
    ]
    mean_len = sum(lengths) / len(lengths) if lengths else 0.0
    return cds_from_components(scf, mean_len)


def compute_ttf(
    chunks: ChunkSet | list[str], presence_threshold: float = TTF_PRESENCE_THRESHOLD
) -> float:
    """Template Token Fraction: mean per-chunk fraction of token occurrences
    whose token appears in at least ``presence_threshold`` of all chunks.

    A single chunk scores 1.0 (every token is present in 100% of chunks);
    a chunk with no tokens contributes 1.0 vacuously.
    """
    texts = chunks.texts() if isinstance(chunks, ChunkSet) else list(chunks)
    if not texts:
        raise StatsError("TTF needs at least one chunk")
    token_lists = [tokenize(t) for t in texts]
    n = len(texts)
    presence: dict[str, int] = {}
    for tokens in token_lists:
        for token in set(tokens):
            presence[token] = presence.get(token, 0) + 1
    template = {t for t, count in presence.items() if count / n >= presence_threshold}
    fractions = []
    for tokens in token_lists:
        if not tokens:
            fractions.append(1.0)
            continue
        fractions.append(sum(1 for t in tokens if t in template) / len(tokens))
    return sum(fractions) / len(fractions)
