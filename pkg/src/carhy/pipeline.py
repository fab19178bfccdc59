"""Whole-transcriptome analysis: ingestion, preprocessing, batch testing, output.

Genes are processed in fixed-size chunks so that results never depend on
the number of worker threads; per-gene Monte Carlo streams are keyed by
gene id, so reordering genes changes only the row order of the output.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .errors import DegenerateDesign, DuplicateGene, InputValidationError, MissingSample, UnitsMismatch
from .harmonic import PERIOD, ConditionDesign, design_from_sample_times, fit_many, phase_to_hours
from .multiplicity import bh_adjust
from .rhythm_tests import (
    DEFAULT_GATE_ALPHA,
    DEFAULT_MC_DRAWS,
    ERROR_FLAGS,
    MIN_N_DIFFERENTIAL,
    MIN_N_RHYTHMICITY,
    coefficient_test_batch,
    rhythmicity_batch,
    seed_token,
    transform_test_batch,
)

log = logging.getLogger(__name__)

UNITS = ("tpm", "log")
TPM_MIN = 1.0
DEFAULT_CHUNK = 1024
DIFF_TESTS = (("TDR", "DR"), ("TDM", "DM"), ("TDA", "DA"), ("TDP", "DP"))
NA = "NA"


@dataclass(frozen=True)
class SampleMeta:
    sample_id: str
    condition: str
    time: float


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    gene_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]
    values: NDArray[np.float64] = field(repr=False)
    units: str = "tpm"

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class ConditionData:
    label: str
    design: ConditionDesign
    sample_ids: tuple[str, ...]
    Y: NDArray[np.float64] = field(repr=False)  # genes x samples, design row order


@dataclass(frozen=True, eq=False)
class Dataset:
    gene_ids: tuple[str, ...]
    conditions: tuple[ConditionData, ...]

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _sniff_sep(path: Path) -> str:
    with open(path, newline="") as fh:
        head = fh.readline()
    if "\t" in head:
        return "\t"
    try:
        return csv.Sniffer().sniff(head, delimiters=",;| ").delimiter
    except csv.Error:
        return ","


def read_expression(path, units: str = "tpm") -> ExpressionMatrix:
    """Read a genes x samples table; first column holds gene ids."""
    if units not in UNITS:
        raise UnitsMismatch(f"units must be one of {UNITS}, got {units!r}")
    path = Path(path)
    df = pd.read_csv(path, sep=_sniff_sep(path), index_col=0, dtype={0: str},
                     float_precision="round_trip")
    df.index = df.index.astype(str)
    dup = df.index[df.index.duplicated()].unique().tolist()
    if dup:
        raise DuplicateGene(f"duplicate gene ids: {dup[:5]}")
    df.columns = [str(c).strip() for c in df.columns]
    if len(set(df.columns)) != len(df.columns):
        raise InputValidationError("duplicate sample columns in expression file")
    try:
        values = df.to_numpy(dtype=float)
    except ValueError as exc:
        raise InputValidationError(f"non-numeric expression values: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise InputValidationError("expression values must be finite (no missing entries)")
    if units == "tpm" and np.any(values < 0):
        raise UnitsMismatch("negative values in a TPM matrix; pass units='log' for log-scale input")
    return ExpressionMatrix(tuple(df.index), tuple(df.columns), values, units)


def read_metadata(path) -> list[SampleMeta]:
    path = Path(path)
    df = pd.read_csv(path, sep=_sniff_sep(path), dtype={"sample_id": str, "condition": str})
    missing = {"sample_id", "condition", "time"} - set(df.columns)
    if missing:
        raise InputValidationError(f"metadata lacks columns {sorted(missing)}")
    if df["sample_id"].duplicated().any():
        raise InputValidationError("duplicate sample ids in metadata")
    try:
        times = df["time"].astype(float)
    except ValueError as exc:
        raise InputValidationError(f"non-numeric sampling time: {exc}") from exc
    return [SampleMeta(str(s).strip(), str(c), float(t))
            for s, c, t in zip(df["sample_id"], df["condition"], times)]


def ingest(expr_path, meta_path, units: str = "tpm"):
    """Read and cross-validate an expression table and its sample metadata.

    Returns
    -------
    matrix : ExpressionMatrix
    meta : list of SampleMeta

    Raises
    ------
    MissingSample
        If expression columns and metadata sample ids differ.
    DuplicateGene, UnitsMismatch
    """
    matrix = read_expression(expr_path, units)
    meta = read_metadata(meta_path)
    ids = {m.sample_id for m in meta}
    cols = set(matrix.sample_ids)
    if ids != cols:
        raise MissingSample(
            f"samples without metadata: {sorted(cols - ids)[:5]}; "
            f"metadata without samples: {sorted(ids - cols)[:5]}")
    return matrix, meta


def write_expression(matrix: ExpressionMatrix, path, sep: str = "\t") -> None:
    df = pd.DataFrame(matrix.values, index=list(matrix.gene_ids), columns=list(matrix.sample_ids))
    df.index.name = "gene_id"
    df.to_csv(path, sep=sep, float_format="%.17g")


def write_metadata(meta: Sequence[SampleMeta], path, sep: str = "\t") -> None:
    pd.DataFrame([(m.sample_id, m.condition, m.time) for m in meta],
                 columns=["sample_id", "condition", "time"]).to_csv(path, sep=sep, index=False)


def preprocess(matrix: ExpressionMatrix, meta: Sequence[SampleMeta] | None = None) -> ExpressionMatrix:
    """Keep genes with TPM > 1 in at least half the samples, then ``log2(TPM + 1)``.

    Log-scale input is returned unchanged with a warning.
    """
    if matrix.units == "log":
        warnings.warn("matrix is already log-scale; preprocessing skipped", stacklevel=2)
        return matrix
    v = matrix.values
    keep = np.count_nonzero(v > TPM_MIN, axis=1) * 2 >= v.shape[1]
    genes = tuple(g for g, k in zip(matrix.gene_ids, keep) if k)
    log.info("preprocess: kept %d of %d genes", len(genes), len(keep))
    return ExpressionMatrix(genes, matrix.sample_ids, np.log2(v[keep] + 1.0), "log")


def build_dataset(matrix: ExpressionMatrix, meta: Sequence[SampleMeta]) -> Dataset:
    """Group samples by condition (first-appearance order) in design row order."""
    col = {s: i for i, s in enumerate(matrix.sample_ids)}
    labels: list[str] = []
    for m in meta:
        if m.condition not in labels:
            labels.append(m.condition)
    conds = []
    for lab in labels:
        rows = [m for m in meta if m.condition == lab]
        missing = [m.sample_id for m in rows if m.sample_id not in col]
        if missing:
            raise MissingSample(f"metadata samples missing from expression: {missing[:5]}")
        try:
            design, order = design_from_sample_times([m.time for m in rows], PERIOD)
        except DegenerateDesign as exc:
            raise InputValidationError(f"condition {lab!r}: {exc}") from exc
        except ValueError as exc:
            raise InputValidationError(f"condition {lab!r}: {exc}") from exc
        ids = tuple(rows[i].sample_id for i in order)
        Y = matrix.values[:, [col[s] for s in ids]]
        conds.append(ConditionData(lab, design, ids, np.ascontiguousarray(Y)))
    return Dataset(matrix.gene_ids, tuple(conds))


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisConfig:
    gate_alpha: float = DEFAULT_GATE_ALPHA
    mc_draws: int = DEFAULT_MC_DRAWS
    seed: int = 0
    threads: int = 1
    chunk_size: int = DEFAULT_CHUNK


@dataclass(eq=False)
class AnalysisResult:
    """Column-oriented result table, one row per gene in input order."""

    gene_ids: tuple[str, ...]
    conditions: tuple[str, ...]
    columns: dict[str, NDArray[np.float64]]
    flags: list[set[str]]

    @property
    def has_error_flags(self) -> bool:
        return any(f.split(":", 1)[-1] in ERROR_FLAGS for fl in self.flags for f in fl)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.columns, index=pd.Index(self.gene_ids, name="gene_id"))
        df["flags"] = [";".join(sorted(f)) for f in self.flags]
        return df

    def write(self, path_or_buf, sep: str = "\t") -> None:
        """Write with shortest round-trip float formatting and ``NA`` for NaN."""
        names = list(self.columns)
        cols = [self.columns[n] for n in names]
        own = isinstance(path_or_buf, (str, Path))
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.writer(fh, delimiter=sep, lineterminator="\n")
            w.writerow(["gene_id"] + names + ["flags"])
            for i, g in enumerate(self.gene_ids):
                w.writerow([g] + [_fmt(c[i]) for c in cols] + [";".join(sorted(self.flags[i]))])
        finally:
            if own:
                fh.close()

    def to_text(self, sep: str = "\t") -> str:
        buf = io.StringIO()
        self.write(buf, sep)
        return buf.getvalue()


def _fmt(v) -> str:
    v = float(v)
    return NA if math.isnan(v) else repr(v)


def circular_phase_difference(phi1, phi2, period: float = PERIOD):
    """Minimal circular distance between peak times, in ``[0, period / 2]``."""
    d = np.mod(np.abs(np.asarray(phi1, dtype=float) - np.asarray(phi2, dtype=float)), period)
    out = np.minimum(d, period - d)
    return float(out) if out.ndim == 0 else out


def _analyze_chunk(ds: Dataset, idx: slice, cfg: AnalysisConfig):
    genes = ds.gene_ids[idx]
    G = len(genes)
    K = len(ds.conditions)
    cols: dict[str, NDArray[np.float64]] = {}
    flags: list[set[str]] = [set() for _ in range(G)]
    gammas, sigmas, trp = [], [], np.full((G, K), np.nan)
    for k, c in enumerate(ds.conditions):
        Yc = c.Y[idx]
        gamma, s2 = fit_many(Yc, c.design)
        # a flat row would otherwise fit rounding noise as rhythm
        flat = np.ptp(Yc, axis=1) == 0.0
        if flat.any():
            gamma[flat] = np.column_stack([Yc[flat, 0], np.zeros((flat.sum(), 2))])
            s2[flat] = 0.0
        gammas.append(gamma)
        sigmas.append(s2)
        amp = np.hypot(gamma[:, 1], gamma[:, 2])
        phase = np.where(amp > 0, np.arctan2(gamma[:, 2], gamma[:, 1]), 0.0)
        cols[f"mesor_{c.label}"] = gamma[:, 0]
        cols[f"amplitude_{c.label}"] = amp
        cols[f"phase_h_{c.label}"] = phase_to_hours(phase)
        cols[f"sigma2_{c.label}"] = s2
        if c.design.n < MIN_N_RHYTHMICITY:
            for f in flags:
                f.add(f"TR_{c.label}:insufficient_replication")
            continue
        tokens = [seed_token(cfg.seed, g, c.label) for g in genes]
        stat, p, _, _ = rhythmicity_batch(gamma, s2, c.design.xtx_inv, c.design.n, tokens,
                                          cfg.mc_draws, strict=False)
        trp[:, k] = p
        for i in np.flatnonzero(np.isnan(p)):
            flags[i].add(f"TR_{c.label}:nonpositive_tau")
    for k, c in enumerate(ds.conditions):
        cols[f"TR_p_{c.label}"] = trp[:, k]

    if K >= 2:
        gamma = np.stack(gammas, axis=1)
        sigma2 = np.stack(sigmas, axis=1)
        M = np.stack([c.design.xtx_inv for c in ds.conditions])
        n = np.array([c.design.n for c in ds.conditions])
        enough = bool(np.all(n >= MIN_N_DIFFERENTIAL))
        for name, kind in DIFF_TESTS:
            if not enough:
                cols[f"{name}_stat"] = np.full(G, np.nan)
                cols[f"{name}_p"] = np.full(G, np.nan)
                for f in flags:
                    f.add(f"{name}:insufficient_replication")
                continue
            with np.errstate(all="ignore"):
                if kind in ("DR", "DM"):
                    b = coefficient_test_batch(kind, gamma, sigma2, M, n)
                else:
                    b = transform_test_batch(kind, gamma, sigma2, M, n, trp, cfg.gate_alpha)
            cols[f"{name}_stat"] = b.statistic
            cols[f"{name}_p"] = b.p_value
            cols[f"{name}_df"] = b.df
            for fname, mask in b.flags.items():
                for i in np.flatnonzero(mask):
                    flags[i].add(f"{name}:{fname}")
    return cols, flags


def analyze_all(ds: Dataset, config: AnalysisConfig | None = None) -> AnalysisResult:
    """Run every applicable test on every gene and add BH-adjusted columns.

    Per-gene numerical problems become flags; the batch never aborts.
    """
    cfg = config or AnalysisConfig()
    if ds.n_genes == 0:
        raise InputValidationError("no genes to analyse")
    step = max(1, int(cfg.chunk_size))
    chunks = [slice(s, min(s + step, ds.n_genes)) for s in range(0, ds.n_genes, step)]
    job = lambda sl: _analyze_chunk(ds, sl, cfg)  # noqa: E731
    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(sl) for sl in chunks]

    names = list(parts[0][0])
    cols = {n: np.concatenate([p[0][n] for p in parts]) for n in names}
    flags = [f for p in parts for f in p[1]]
    # BH per family: TR per condition, then each differential test
    out: dict[str, NDArray[np.float64]] = {}
    for n in names:
        out[n] = cols[n]
        if n.startswith("TR_p_") or (n.endswith("_p") and n[:-2] in dict(DIFF_TESTS)):
            out[n.replace("_p", "_q", 1)] = bh_adjust(cols[n])
    return AnalysisResult(ds.gene_ids, tuple(c.label for c in ds.conditions), out, flags)
