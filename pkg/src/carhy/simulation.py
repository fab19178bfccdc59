"""Synthetic circadian expression and calibration experiments.

Expression for replicate ``j`` of condition ``k`` at time ``t`` is

    mesor_k + A_k cos(2 pi (t - phi_k) / 24) + eps

with Gaussian or scaled Student-t noise.  Every replicate dataset draws from
its own random stream keyed by (experiment seed, case label, replicate
index), so results do not depend on chunking or thread count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .harmonic import PERIOD, ConditionDesign, build_design, fit_many
from .moments import sigma_hat_moments
from .multiplicity import bh_adjust
from .rhythm_tests import (
    DEFAULT_MC_DRAWS,
    coefficient_test_batch,
    delta_gradient,
    make_rng,
    rhythmicity_batch,
    seed_token,
    transform_test_batch,
)
from .satterthwaite import (
    FApprox,
    build_contrast,
    build_sensitivity_matrices,
    compute_mu1_mu2,
    make_context,
    solve_df_c,
)

DEFAULT_TIMES = (0.0, 4.0, 8.0, 12.0, 16.0, 20.0)
TEST_KINDS = ("TR", "TDR", "TDM", "TDA", "TDP")
CHUNK = 512  # replicates per work unit; fixed so output ignores thread count
METRIC_COLUMNS = ("case", "test", "metric", "value", "se", "R", "seed")


@dataclass(frozen=True)
class NoiseSpec:
    """``scale * N(0, 1)`` or ``scale * t_df``."""

    family: str = "normal"
    scale: float = 1.0
    df: float | None = None

    def __post_init__(self):
        if self.family not in ("normal", "t"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.scale < 0:
            raise ValueError("noise scale must be non-negative")
        if self.family == "t" and (self.df is None or self.df <= 0):
            raise ValueError("t noise needs a positive df")

    @property
    def variance(self) -> float:
        if self.family == "normal":
            return self.scale**2
        return self.scale**2 * self.df / (self.df - 2.0) if self.df > 2 else math.inf

    def draw(self, rng: np.random.Generator, size) -> NDArray[np.float64]:
        if self.family == "normal":
            z = rng.standard_normal(size)
        else:
            z = rng.standard_t(self.df, size)
        return self.scale * z


def normal(sigma: float) -> NoiseSpec:
    return NoiseSpec("normal", sigma)


def student_t(scale: float, df: float) -> NoiseSpec:
    return NoiseSpec("t", scale, df)


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation scenario.

    ``replicates[k]`` lists the replicate count at each of ``times`` for
    condition ``k``.  Phases are peak times in hours.
    """

    label: str
    amplitudes: tuple[float, ...]
    phases: tuple[float, ...]
    noise: tuple[NoiseSpec, ...]
    mesors: tuple[float, ...] | None = None
    times: tuple[float, ...] = DEFAULT_TIMES
    replicates: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        K = len(self.amplitudes)
        if K < 1 or len(self.phases) != K or len(self.noise) != K:
            raise ValueError(f"{self.label}: amplitudes, phases and noise need one entry per condition")
        if self.mesors is None:
            object.__setattr__(self, "mesors", (1.0,) * K)
        if self.replicates is None:
            object.__setattr__(self, "replicates", ((3,) * len(self.times),) * K)
        reps = tuple(_per_time(r, len(self.times)) for r in self.replicates)
        object.__setattr__(self, "replicates", reps)
        if len(self.mesors) != K or len(reps) != K:
            raise ValueError(f"{self.label}: mesors/replicates need one entry per condition")
        if any(a < 0 for a in self.amplitudes):
            raise ValueError("amplitudes must be non-negative")
        if any(not 0 <= p < PERIOD for p in self.phases):
            raise ValueError("phases must lie in [0, 24)")

    @property
    def K(self) -> int:
        return len(self.amplitudes)

    @property
    def n(self) -> tuple[int, ...]:
        return tuple(sum(r) for r in self.replicates)

    def designs(self) -> list[ConditionDesign]:
        return [build_design(self.times, r) for r in self.replicates]

    def mean_profiles(self) -> list[NDArray[np.float64]]:
        out = []
        for k, d in enumerate(self.designs()):
            w = 2.0 * np.pi / PERIOD
            t = d.sample_times
            out.append(self.mesors[k] + self.amplitudes[k] * np.cos(w * (t - self.phases[k])))
        return out

    def true_coefficients(self) -> NDArray[np.float64]:
        """``(K, 3)`` array of (mesor, cosine, sine) coefficients."""
        w = 2.0 * np.pi / PERIOD
        A = np.asarray(self.amplitudes)
        ph = np.asarray(self.phases)
        return np.column_stack([self.mesors, A * np.cos(w * ph), A * np.sin(w * ph)])

    def with_replicates(self, replicates, label: str | None = None) -> "ScenarioSpec":
        return replace(self, replicates=tuple(replicates), label=label or self.label)


def _per_time(r, n_times: int) -> tuple[int, ...]:
    if isinstance(r, (int, np.integer)):
        return (int(r),) * n_times
    r = tuple(int(v) for v in r)
    if len(r) != n_times:
        raise ValueError(f"expected {n_times} replicate counts, got {len(r)}")
    return r


def generate_gene(spec: ScenarioSpec, rng: np.random.Generator, size: int | None = None):
    """Draw expression vectors for every condition.

    Returns a list of ``K`` arrays of shape ``(n_k,)`` (or ``(size, n_k)``),
    samples in time-major, replicate-minor order.
    """
    shape = () if size is None else (int(size),)
    out = []
    for mean, noise in zip(spec.mean_profiles(), spec.noise):
        out.append(mean + noise.draw(rng, shape + mean.shape))
    return out


# ---------------------------------------------------------------------------
# built-in cases
# ---------------------------------------------------------------------------

def _case(label, A, phi, noise, mesors=None):
    return ScenarioSpec(label, tuple(map(float, A)), tuple(map(float, phi)), tuple(noise),
                        None if mesors is None else tuple(map(float, mesors)))


def _n(*s):
    return [normal(v) for v in s]


def _builtin_cases() -> dict[str, ScenarioSpec]:
    cases: list[ScenarioSpec] = []
    # differential rhythmicity: nulls 1-8, alternatives 9-16
    noise3 = [_n(1, 1, 1), _n(0.5, 2, 2), [normal(1), student_t(0.4, 3), student_t(0.4, 3)],
              [student_t(1, 4), student_t(0.1, 4), student_t(0.5, 4)]]
    noise2 = [_n(1, 1), _n(0.5, 2), [normal(1), student_t(0.4, 3)], [student_t(1, 4), student_t(0.5, 4)]]
    for i, nz in enumerate(noise3):
        cases.append(_case(f"T1-{i + 1}", (1, 1, 1), (5, 5, 5), nz))
        cases.append(_case(f"T2-{i + 9}", (1, 1, 1.5), (5, 2.5, 5), nz))
    for i, nz in enumerate(noise2):
        cases.append(_case(f"T1-{i + 5}", (1, 1), (5, 5), nz))
        cases.append(_case(f"T2-{i + 13}", (1, 1.5), (5, 2.5), nz))
    # mesor
    for i, (d, s) in enumerate([((1, 1, 1), (1, 1, 1)), ((1, 1, 1), (0.5, 2, 2)),
                                ((1, 3, 5), (1, 1, 1)), ((1, 3, 5), (0.5, 2, 2)),
                                ((1, 1), (1, 1)), ((1, 1), (0.5, 2)),
                                ((1, 3), (1, 1)), ((1, 3), (0.5, 2))]):
        K = len(d)
        cases.append(_case(f"S1-{i + 1}", (1,) * K, (5,) * K, _n(*s), mesors=d))
    # amplitude
    for i, (A, s) in enumerate([((4, 4, 4), (1, 1, 1)), ((4, 4, 4), (0.5, 2, 2)),
                                ((2, 2, 4), (1, 1, 1)), ((2, 2, 4), (0.5, 2, 2)),
                                ((4, 4), (1, 1)), ((4, 4), (0.5, 2)),
                                ((2, 4), (1, 1)), ((2, 4), (0.5, 2))]):
        cases.append(_case(f"S2-{i + 1}", A, (5,) * len(A), _n(*s)))
    # phase
    for i, (phi, s) in enumerate([((5, 5, 5), (1, 1, 1)), ((5, 5, 5), (0.5, 2, 2)),
                                  ((5, 3, 5), (1, 1, 1)), ((5, 3, 5), (0.5, 2, 2)),
                                  ((5, 5), (1, 1)), ((5, 5), (0.5, 2)),
                                  ((5, 3), (1, 1)), ((5, 3), (0.5, 2))]):
        cases.append(_case(f"S3-{i + 9}", (4,) * len(phi), phi, _n(*s)))
    # rhythmicity, single condition
    for A in (0, 0.5, 1, 2):
        for tag, nz in (("normal", normal(1)), ("t3", student_t(1, 3))):
            for J in (2, 3):
                base = _case(f"TR-A{A:g}-{tag}-n{6 * J}", (A,), (5,), [nz])
                cases.append(base.with_replicates([J]))
    out = {c.label: c for c in cases}
    # unbalanced variants: two replicates per time in the first condition
    for c in list(out.values()):
        if c.K >= 2 and c.label[:2] in ("T1", "T2"):
            u = c.with_replicates([2] + [3] * (c.K - 1), label=c.label + "u")
            out[u.label] = u
    return out


BUILTIN_CASES = _builtin_cases()


def get_case(label: str) -> ScenarioSpec:
    try:
        return BUILTIN_CASES[label]
    except KeyError:
        raise KeyError(f"unknown case {label!r}; known: {', '.join(sorted(BUILTIN_CASES))}") from None


def amplitude_sweep(A2: float, label: str | None = None) -> ScenarioSpec:
    """Two-condition template (A1 = 1 vs A2, phases 5 vs 2.5, sigma 1)."""
    return _case(label or f"sweep-A2={A2:g}", (1, A2), (5, 2.5), _n(1, 1))


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def _noise_from_dict(d) -> NoiseSpec:
    if isinstance(d, (int, float)):
        return normal(float(d))
    return NoiseSpec(d.get("family", "normal"), float(d.get("scale", 1.0)),
                     None if d.get("df") is None else float(d["df"]))


def scenario_from_dict(d: dict) -> ScenarioSpec:
    K = len(d["amplitudes"])
    noise = d.get("noise", [1.0] * K)
    return ScenarioSpec(
        label=str(d["label"]),
        amplitudes=tuple(float(v) for v in d["amplitudes"]),
        phases=tuple(float(v) for v in d.get("phases", [0.0] * K)),
        noise=tuple(_noise_from_dict(v) for v in noise),
        mesors=None if "mesors" not in d else tuple(float(v) for v in d["mesors"]),
        times=tuple(float(v) for v in d.get("times", DEFAULT_TIMES)),
        replicates=None if "replicates" not in d else tuple(d["replicates"]),
    )


def load_scenarios(path: str | Path) -> dict[str, ScenarioSpec]:
    """Read a JSON list of scenarios (or ``{"scenarios": [...]}``)."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("scenarios", [data])
    specs = [scenario_from_dict(d) for d in data]
    return {s.label: s for s in specs}


# ---------------------------------------------------------------------------
# reference distribution at the true parameters
# ---------------------------------------------------------------------------

_KIND_CODE = {"TDR": "DR", "TDM": "DM", "TDA": "DA", "TDP": "DP"}


def true_approx(spec: ScenarioSpec, test: str) -> FApprox:
    """Matched F reference evaluated at the true variances (and true gradients).

    Used as an oracle: the statistic itself is always computed from the
    estimated variances.
    """
    kind = _KIND_CODE[test]
    contrast = build_contrast(kind, spec.K)
    designs = spec.designs()
    M = np.stack([d.xtx_inv for d in designs])
    s2 = np.array([nz.variance for nz in spec.noise])
    r = np.array([d.df_resid for d in designs], dtype=float)
    if kind in ("DA", "DP"):
        coef = spec.true_coefficients()
        D = delta_gradient(kind, coef[:, 1], coef[:, 2])
        blocks = np.einsum("ki,kij,kj->k", D, M, D)
    else:
        blocks = M
    ctx = make_context(contrast, blocks, s2, r)
    B = build_sensitivity_matrices(contrast, ctx)
    mu1, mu2 = compute_mu1_mu2(B, sigma_hat_moments(s2, r))
    return solve_df_c(contrast.rho, float(mu1), float(mu2))


# ---------------------------------------------------------------------------
# rejection experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Metric:
    name: str
    value: float
    se: float


@dataclass(frozen=True, eq=False)
class MetricsReport:
    case: str
    test: str
    R: int
    seed: int
    metrics: tuple[Metric, ...]
    p_values: NDArray[np.float64] | None = field(default=None, repr=False)
    statistics: NDArray[np.float64] | None = field(default=None, repr=False)

    def __getitem__(self, name: str) -> Metric:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    @property
    def rejection_rate(self) -> float:
        return self["rejection_rate"].value

    def rows(self) -> list[dict]:
        return [dict(case=self.case, test=self.test, metric=m.name, value=m.value,
                     se=m.se, R=self.R, seed=self.seed) for m in self.metrics]


def write_metrics_csv(reports: Iterable[MetricsReport], path_or_buf) -> None:
    """CSV with columns ``case, test, metric, value, se, R, seed``."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            for row in rep.rows():
                row["value"] = repr(float(row["value"]))
                row["se"] = repr(float(row["se"]))
                w.writerow(row)
    finally:
        if own:
            fh.close()


def simulate_fits(spec: ScenarioSpec, reps: Sequence[int], seed: int):
    """Fit replicate datasets ``reps`` of a scenario.

    Returns ``gamma (R, K, 3)``, ``sigma2 (R, K)`` and the designs.
    """
    designs = spec.designs()
    Y = [np.empty((len(reps), d.n)) for d in designs]
    for i, rep in enumerate(reps):
        rng = make_rng(seed_token(seed, spec.label, rep))
        for k, y in enumerate(generate_gene(spec, rng)):
            Y[k][i] = y
    fits = [fit_many(Yk, d) for Yk, d in zip(Y, designs)]
    gamma = np.stack([f[0] for f in fits], axis=1)
    sigma2 = np.stack([f[1] for f in fits], axis=1)
    return gamma, sigma2, designs


def _chunk_pvalues(spec, test, reps, seed, mc_draws):
    gamma, sigma2, designs = simulate_fits(spec, reps, seed)
    if test == "TR":
        d = designs[0]
        tokens = [seed_token(seed, spec.label, rep, "TR") for rep in reps]
        stat, p, _, _ = rhythmicity_batch(gamma[:, 0], sigma2[:, 0], d.xtx_inv, d.n, tokens, mc_draws)
        return stat, p
    M = np.stack([d.xtx_inv for d in designs])
    n = np.array([d.n for d in designs])
    kind = _KIND_CODE[test]
    if kind in ("DR", "DM"):
        batch = coefficient_test_batch(kind, gamma, sigma2, M, n)
    else:
        batch = transform_test_batch(kind, gamma, sigma2, M, n)
    return batch.statistic, batch.p_value


def rejection_pvalues(spec: ScenarioSpec, test: str, R: int, seed: int = 0,
                      mc_draws: int = DEFAULT_MC_DRAWS, threads: int = 1):
    """Statistics and p-values of ``test`` over ``R`` replicate datasets."""
    if test not in TEST_KINDS:
        raise ValueError(f"unknown test {test!r}")
    if test == "TR" and spec.K != 1:
        raise ValueError("TR experiments take a single-condition scenario")
    if test != "TR" and spec.K < 2:
        raise ValueError(f"{test} needs at least two conditions")
    chunks = [range(s, min(s + CHUNK, R)) for s in range(0, R, CHUNK)]
    job = lambda ch: _chunk_pvalues(spec, test, ch, seed, mc_draws)  # noqa: E731
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(ch) for ch in chunks]
    return np.concatenate([s for s, _ in parts]), np.concatenate([p for _, p in parts])


def run_rejection_experiment(spec: ScenarioSpec, test: str, R: int = 2000, alpha: float = 0.05,
                             seed: int = 0, mc_draws: int = DEFAULT_MC_DRAWS,
                             threads: int = 1) -> MetricsReport:
    """Empirical rejection rate (``p <= alpha``) with its binomial standard error.

    Replicates whose p-value is NaN (flagged) count as non-rejections and are
    tallied in the ``flagged`` metric.
    """
    if R < 100:
        raise ValueError("need R >= 100 replicates")
    stat, p = rejection_pvalues(spec, test, R, seed, mc_draws, threads)
    rate = float(np.count_nonzero(p <= alpha)) / R
    se = math.sqrt(rate * (1.0 - rate) / R)
    flagged = float(np.count_nonzero(np.isnan(p)))
    return MetricsReport(spec.label, test, R, seed,
                         (Metric("rejection_rate", rate, se), Metric("flagged", flagged, 0.0)),
                         p_values=p, statistics=stat)


# ---------------------------------------------------------------------------
# FDR experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FdrExperimentSpec:
    """Many-gene experiment with a planted set of differentially rhythmic genes."""

    label: str = "fdr-K2"
    K: int = 2
    n_genes: int = 2000
    dr_fraction: float = 0.10
    sd: tuple[float, ...] = (0.5, 1.0, 1.0)
    dr_amplitudes: tuple[float, ...] = (1.0, 2.0, 2.0)
    dr_phases: tuple[float, ...] = (5.0, 10.0, 10.0)
    nondr_amplitude: float = 1.0
    nondr_phase: float = 5.0
    replicates: tuple[int, ...] = (2, 3, 3)
    times: tuple[float, ...] = DEFAULT_TIMES
    alpha: float = 0.05

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("FDR experiment needs K >= 2")
        for name in ("sd", "dr_amplitudes", "dr_phases", "replicates"):
            if len(getattr(self, name)) < self.K:
                raise ValueError(f"{name} needs at least K entries")

    @property
    def n_dr(self) -> int:
        return int(round(self.dr_fraction * self.n_genes))

    def scenarios(self) -> tuple[ScenarioSpec, ScenarioSpec]:
        K = self.K
        noise = tuple(normal(s) for s in self.sd[:K])
        reps = tuple(self.replicates[:K])
        dr = ScenarioSpec(self.label + "/DR", self.dr_amplitudes[:K], self.dr_phases[:K], noise,
                          times=self.times, replicates=reps)
        null = ScenarioSpec(self.label + "/nonDR", (self.nondr_amplitude,) * K,
                            (self.nondr_phase,) * K, noise, times=self.times, replicates=reps)
        return dr, null


FDR_TABLE3 = {
    "table3-K2": FdrExperimentSpec(label="table3-K2", K=2),
    "table3-K3": FdrExperimentSpec(label="table3-K3", K=3),
}


def fdr_spec_from_dict(d: dict) -> FdrExperimentSpec:
    kw = {}
    for key, val in d.items():
        kw[key] = tuple(val) if isinstance(val, list) else val
    return FdrExperimentSpec(**kw)


def _fdr_replicate(spec: FdrExperimentSpec, rep: int, seed: int):
    dr, null = spec.scenarios()
    rng = make_rng(seed_token(seed, spec.label, rep))
    G, n_dr = spec.n_genes, spec.n_dr
    designs = dr.designs()
    gammas, sig = [], []
    for k, d in enumerate(designs):
        mean = np.empty((G, d.n))
        mean[:n_dr] = dr.mean_profiles()[k]
        mean[n_dr:] = null.mean_profiles()[k]
        Y = mean + dr.noise[k].draw(rng, mean.shape)
        g, s2 = fit_many(Y, d)
        gammas.append(g)
        sig.append(s2)
    gamma = np.stack(gammas, axis=1)
    sigma2 = np.stack(sig, axis=1)
    M = np.stack([d.xtx_inv for d in designs])
    n = np.array([d.n for d in designs])
    p = coefficient_test_batch("DR", gamma, sigma2, M, n).p_value
    reject = bh_adjust(p) <= spec.alpha
    truth = np.zeros(G, dtype=bool)
    truth[:n_dr] = True
    tp = int(np.count_nonzero(reject & truth))
    fp = int(np.count_nonzero(reject & ~truth))
    fn = int(np.count_nonzero(~reject & truth))
    fdr = fp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 1.0
    return fdr, f1


def run_fdr_experiment(spec: FdrExperimentSpec, reps: int = 10, seed: int = 0,
                       threads: int = 1) -> MetricsReport:
    """Mean FDR and F1 of BH-adjusted differential-rhythmicity calls.

    FDR is taken as 0 for a replicate with no rejections.
    """
    job = lambda rep: _fdr_replicate(spec, rep, seed)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(job, range(reps)))
    else:
        res = [job(r) for r in range(reps)]
    arr = np.array(res, dtype=float).reshape(reps, 2)
    se = arr.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(2)
    metrics = (Metric("fdr", float(arr[:, 0].mean()), float(se[0])),
               Metric("f1", float(arr[:, 1].mean()), float(se[1])))
    return MetricsReport(spec.label, "TDR", reps, seed, metrics)


# ---------------------------------------------------------------------------
# whole-transcriptome synthetic data
# ---------------------------------------------------------------------------

def synthetic_expression(n_genes: int = 12_365, conditions: Sequence[str] = ("C1", "C2", "C3"),
                         times: Sequence[float] = DEFAULT_TIMES, replicates: int = 3,
                         rhythmic_fraction: float = 0.3, dr_fraction: float = 0.1,
                         seed: int = 0):
    """Log-scale expression with planted rhythmic and differentially rhythmic genes.

    Returns ``(matrix, meta, is_dr)``; sample columns are named
    ``{condition}_ZT{time}_{replicate}``.
    """
    from .pipeline import ExpressionMatrix, SampleMeta

    rng = make_rng(seed_token(seed, "synthetic-expression"))
    K = len(conditions)
    G = int(n_genes)
    meta = [SampleMeta(f"{c}_ZT{t:g}_{j + 1}", c, float(t))
            for c in conditions for t in times for j in range(replicates)]
    t_all = np.array([m.time for m in meta])
    mesor = rng.uniform(2.0, 8.0, G)
    amp = np.where(rng.random(G) < rhythmic_fraction, rng.uniform(0.3, 1.5, G), 0.0)
    phase = rng.uniform(0.0, PERIOD, G)
    sd = rng.uniform(0.1, 0.5, (G, K))
    is_dr = rng.random(G) < dr_fraction
    amp_k = np.repeat(amp[:, None], K, axis=1)
    phase_k = np.repeat(phase[:, None], K, axis=1)
    # planted differential rhythm: last condition gains amplitude and shifts its peak
    amp_k[is_dr, -1] = amp_k[is_dr, -1] + 1.0
    phase_k[is_dr, -1] = np.mod(phase_k[is_dr, -1] + 6.0, PERIOD)
    cond_idx = np.repeat(np.arange(K), len(times) * replicates)
    w = 2.0 * np.pi / PERIOD
    mean = mesor[:, None] + amp_k[:, cond_idx] * np.cos(w * (t_all[None, :] - phase_k[:, cond_idx]))
    values = mean + sd[:, cond_idx] * rng.standard_normal(mean.shape)
    genes = tuple(f"g{i:05d}" for i in range(G))
    return ExpressionMatrix(genes, tuple(m.sample_id for m in meta), values, "log"), meta, is_dr
