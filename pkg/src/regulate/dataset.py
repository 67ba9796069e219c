"""Data ingestion, validation, and reshaping.

Covers three jobs:

* loading rectangular CSV data into a validated :class:`Dataset`,
* saturating discrete covariates into mutually exclusive cell indicators,
* stacking a staggered-adoption panel into the cross-sectional design used
  by the rest of the pipeline (cohort/period fixed effects plus re-centered
  event-cell indicators).

All functions are pure: they return new immutable objects and never mutate
their inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

DISCRETE = "discrete"
CONTINUOUS = "continuous"


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV columns to their roles.

    Parameters
    ----------
    outcome, treatment : str
        Column names for the outcome and the binary treatment.
    covariates : tuple of str
        Covariate columns, in the order they should appear in the design.
    discrete : tuple of str
        Subset of ``covariates`` to treat as discrete (eligible for
        saturation). Everything else is passed through as continuous.
    cluster : str, optional
        Column holding a cluster identifier for clustered standard errors.
    """

    outcome: str
    treatment: str
    covariates: tuple[str, ...]
    discrete: tuple[str, ...] = ()
    cluster: str | None = None

    def __post_init__(self):
        if not self.covariates:
            raise ConfigError("schema needs at least one covariate column")
        unknown = set(self.discrete) - set(self.covariates)
        if unknown:
            raise ConfigError(
                f"discrete columns not listed as covariates: {sorted(unknown)}"
            )


@dataclass(frozen=True)
class Dataset:
    """Validated rectangular data for one analysis.

    ``covariates`` is always a float matrix; discrete string levels are
    encoded as integer codes at load time with the original labels kept in
    ``discrete_levels`` for naming saturated cells.

    ``level_only`` / ``dictionary_only`` split covariate columns between the
    confounder block and the effect-heterogeneity dictionary. By default
    every column belongs to both, which is the cross-sectional case; the
    staggered-panel transform uses the split to keep fixed effects out of
    the heterogeneity dictionary.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    covariate_kinds: tuple[str, ...]
    cluster_id: np.ndarray | None = None
    cell_id: np.ndarray | None = None
    cells_exhaustive: bool = False
    level_only: frozenset = frozenset()
    dictionary_only: frozenset = frozenset()
    discrete_levels: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=np.float64)
        d_raw = np.asarray(self.treatment)
        x = np.atleast_2d(np.asarray(self.covariates, dtype=np.float64))
        if x.shape[0] != y.shape[0] and x.shape[1] == y.shape[0]:
            x = x.T
        n = y.shape[0]
        if n < 2:
            raise DataError("need at least 2 rows")
        if x.shape[0] != n:
            raise DataError("covariate row count does not match outcome")
        if len(self.covariate_names) != x.shape[1]:
            raise DataError("covariate_names length does not match covariates")
        if len(self.covariate_kinds) != x.shape[1]:
            raise DataError("covariate_kinds length does not match covariates")
        bad_kind = set(self.covariate_kinds) - {DISCRETE, CONTINUOUS}
        if bad_kind:
            raise DataError(f"unknown covariate kind(s): {sorted(bad_kind)}")

        d_float = np.asarray(d_raw, dtype=np.float64)
        if not np.all(np.isin(d_float, (0.0, 1.0))):
            raise DataError("non-binary treatment")
        d = d_float.astype(np.int8)
        if d.shape[0] != n:
            raise DataError("treatment length does not match outcome")
        if d.sum() == 0 or d.sum() == n:
            raise DataError("need at least one treated and one untreated unit")

        for name, col in (("outcome", y[:, None]), ("covariates", x)):
            finite = np.isfinite(col)
            if not finite.all():
                i, j = np.argwhere(~finite)[0]
                colname = (
                    "outcome" if name == "outcome" else self.covariate_names[j]
                )
                raise DataError(
                    f"non-finite value in column '{colname}' at row {i + 1}"
                )

        cluster = self.cluster_id
        if cluster is not None:
            cluster = np.asarray(cluster)
            if cluster.shape[0] != n:
                raise DataError("cluster_id length does not match outcome")
            cluster = _readonly(cluster)
        cell = self.cell_id
        if cell is not None:
            cell = np.asarray(cell, dtype=np.int64)
            if cell.shape[0] != n:
                raise DataError("cell_id length does not match outcome")
            cell = _readonly(cell)

        object.__setattr__(self, "outcome", _readonly(y))
        object.__setattr__(self, "treatment", _readonly(d))
        object.__setattr__(self, "covariates", _readonly(x))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "covariate_kinds", tuple(self.covariate_kinds))
        object.__setattr__(self, "cluster_id", cluster)
        object.__setattr__(self, "cell_id", cell)
        object.__setattr__(self, "level_only", frozenset(self.level_only))
        object.__setattr__(self, "dictionary_only", frozenset(self.dictionary_only))

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def k_raw(self) -> int:
        return self.covariates.shape[1]

    def subset(self, mask: np.ndarray) -> "Dataset":
        """Row subset as a new Dataset (re-validated)."""
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            outcome=self.outcome[mask],
            treatment=self.treatment[mask],
            covariates=self.covariates[mask],
            cluster_id=None if self.cluster_id is None else self.cluster_id[mask],
            cell_id=None if self.cell_id is None else self.cell_id[mask],
        )


def load_csv(path, schema: ColumnSchema) -> Dataset:
    """Load and validate a CSV file into a :class:`Dataset`.

    The file must be UTF-8 with a header row and '.' decimal separator.
    Floats are parsed with round-trip precision so that a dump/load cycle
    reproduces values bit for bit.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise DataError("empty file") from exc
    if frame.shape[0] == 0:
        raise DataError("empty file")
    return from_frame(frame, schema)


def from_frame(frame: pd.DataFrame, schema: ColumnSchema) -> Dataset:
    """Build a :class:`Dataset` from an in-memory data frame."""
    needed = [schema.outcome, schema.treatment, *schema.covariates]
    if schema.cluster is not None:
        needed.append(schema.cluster)
    for col in needed:
        if col not in frame.columns:
            raise DataError(f"missing column '{col}'")

    outcome = _numeric_column(frame, schema.outcome)
    treatment = _numeric_column(frame, schema.treatment, what="treatment")

    cols = []
    kinds = []
    levels: dict[str, tuple[str, ...]] = {}
    for name in schema.covariates:
        series = frame[name]
        if name in schema.discrete and not pd.api.types.is_numeric_dtype(series):
            labels = sorted(series.astype(str).unique())
            mapping = {lab: float(i) for i, lab in enumerate(labels)}
            cols.append(series.astype(str).map(mapping).to_numpy(dtype=np.float64))
            levels[name] = tuple(labels)
        else:
            cols.append(_numeric_column(frame, name))
        kinds.append(DISCRETE if name in schema.discrete else CONTINUOUS)

    cluster = None
    if schema.cluster is not None:
        codes, _ = pd.factorize(frame[schema.cluster], sort=True)
        cluster = codes.astype(np.int64)

    return Dataset(
        outcome=outcome,
        treatment=treatment,
        covariates=np.column_stack(cols),
        covariate_names=tuple(schema.covariates),
        covariate_kinds=tuple(kinds),
        cluster_id=cluster,
        discrete_levels=levels,
    )


def _numeric_column(frame: pd.DataFrame, name: str, what: str = "value") -> np.ndarray:
    series = pd.to_numeric(frame[name], errors="coerce")
    values = series.to_numpy(dtype=np.float64)
    if what == "treatment":
        bad = ~np.isin(values, (0.0, 1.0)) | ~np.isfinite(values)
        if bad.any():
            raise DataError("non-binary treatment")
        return values
    finite = np.isfinite(values)
    if not finite.all():
        row = int(np.argmax(~finite))
        raise DataError(f"non-finite value in column '{name}' at row {row + 1}")
    return values


def _format_level(ds: Dataset, column: str, code: float) -> str:
    labels = ds.discrete_levels.get(column)
    if labels is not None and float(code).is_integer() and 0 <= int(code) < len(labels):
        return labels[int(code)]
    if float(code).is_integer():
        return str(int(code))
    return repr(float(code))


def saturate(ds: Dataset, columns) -> Dataset:
    """Cross the named discrete columns into mutually exclusive cell indicators.

    Every observed combination of levels becomes one cell; the
    lexicographically smallest combination is the dropped reference (the
    design builder adds the intercept). The cell index of each row is
    recorded on the returned Dataset. Other covariate columns pass through
    unchanged, after the indicator block.
    """
    columns = tuple(columns)
    if not columns:
        raise ConfigError("saturate needs at least one column")
    name_to_idx = {name: i for i, name in enumerate(ds.covariate_names)}
    for col in columns:
        if col not in name_to_idx:
            raise DataError(f"missing column '{col}'")
        if ds.covariate_kinds[name_to_idx[col]] != DISCRETE:
            raise DataError(f"column '{col}' is not discrete")
        if np.unique(ds.covariates[:, name_to_idx[col]]).size == 1:
            warnings.warn(f"degenerate covariate '{col}' has a single level")

    sel = ds.covariates[:, [name_to_idx[c] for c in columns]]
    combos = [tuple(row) for row in sel]
    cells = sorted(set(combos))
    if len(cells) > ds.n - 1:
        raise DataError("saturation exceeds degrees of freedom")
    cell_index = {combo: i for i, combo in enumerate(cells)}
    cell_id = np.array([cell_index[c] for c in combos], dtype=np.int64)

    indicator_names = []
    indicators = []
    for combo in cells[1:]:  # cells[0] is the reference
        label = "&".join(
            f"{col}={_format_level(ds, col, val)}" for col, val in zip(columns, combo)
        )
        indicator_names.append(label)
        indicators.append((cell_id == cell_index[combo]).astype(np.float64))

    passthrough = [
        (name, i)
        for i, name in enumerate(ds.covariate_names)
        if name not in columns
    ]
    new_cols = indicators + [ds.covariates[:, i] for _, i in passthrough]
    new_names = indicator_names + [name for name, _ in passthrough]
    new_kinds = [DISCRETE] * len(indicator_names) + [
        ds.covariate_kinds[i] for _, i in passthrough
    ]
    if not new_cols:
        # single degenerate column: zero indicators, keep an empty matrix
        matrix = np.empty((ds.n, 0))
    else:
        matrix = np.column_stack(new_cols)

    return replace(
        ds,
        covariates=matrix,
        covariate_names=tuple(new_names),
        covariate_kinds=tuple(new_kinds),
        cell_id=cell_id,
        cells_exhaustive=not passthrough,
        level_only=frozenset(),
        dictionary_only=frozenset(),
    )


NEVER_TREATED = np.inf


@dataclass(frozen=True)
class PanelDataset:
    """Balanced staggered-adoption panel in long format.

    Treatment must be an absorbing staircase per unit; the derived first
    treatment period ``first_treatment`` uses ``+inf`` for never-treated
    units.
    """

    unit_id: np.ndarray
    time: np.ndarray
    outcome: np.ndarray
    treated: np.ndarray
    first_treatment: np.ndarray = field(init=False)
    units: np.ndarray = field(init=False)
    periods: np.ndarray = field(init=False)

    def __post_init__(self):
        unit = np.asarray(self.unit_id)
        time = np.asarray(self.time, dtype=np.int64)
        y = np.asarray(self.outcome, dtype=np.float64)
        d_float = np.asarray(self.treated, dtype=np.float64)
        if not np.all(np.isin(d_float, (0.0, 1.0))):
            raise DataError("non-binary treatment")
        d = d_float.astype(np.int8)
        if not (unit.shape == time.shape == y.shape == d.shape):
            raise DataError("panel columns must have equal length")
        if not np.all(np.isfinite(y)):
            row = int(np.argmax(~np.isfinite(y)))
            raise DataError(f"non-finite value in column 'outcome' at row {row + 1}")

        units = np.unique(unit)
        periods = np.unique(time)
        n_units, n_periods = units.size, periods.size
        if n_units < 2 or n_periods < 2:
            raise DataError("panel needs at least 2 units and 2 periods")
        if unit.size != n_units * n_periods:
            raise DataError("unbalanced panel: every unit must be observed in every period")

        order = np.lexsort((time, unit))
        unit, time, y, d = unit[order], time[order], y[order], d[order]
        expected_time = np.tile(periods, n_units)
        if not np.array_equal(time, expected_time):
            raise DataError("unbalanced panel: every unit must be observed in every period")

        d_mat = d.reshape(n_units, n_periods)
        if np.any(np.diff(d_mat.astype(np.int64), axis=1) < 0):
            raise DataError("not staggered adoption")
        first = np.full(n_units, NEVER_TREATED)
        any_treated = d_mat.any(axis=1)
        first[any_treated] = periods[np.argmax(d_mat[any_treated], axis=1)]
        if not any_treated.any():
            raise DataError("panel has no treated cohort")

        object.__setattr__(self, "unit_id", _readonly(unit))
        object.__setattr__(self, "time", _readonly(time))
        object.__setattr__(self, "outcome", _readonly(y))
        object.__setattr__(self, "treated", _readonly(d))
        object.__setattr__(self, "first_treatment", _readonly(first))
        object.__setattr__(self, "units", _readonly(units))
        object.__setattr__(self, "periods", _readonly(periods))

    @property
    def n_units(self) -> int:
        return self.units.size

    @property
    def n_periods(self) -> int:
        return self.periods.size


def load_panel_csv(path, unit: str, time: str, outcome: str, treatment: str) -> PanelDataset:
    """Load a long-format panel CSV into a :class:`PanelDataset`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise DataError("empty file") from exc
    if frame.shape[0] == 0:
        raise DataError("empty file")
    for col in (unit, time, outcome, treatment):
        if col not in frame.columns:
            raise DataError(f"missing column '{col}'")
    unit_codes, _ = pd.factorize(frame[unit], sort=True)
    return PanelDataset(
        unit_id=unit_codes.astype(np.int64),
        time=pd.to_numeric(frame[time]).to_numpy(dtype=np.int64),
        outcome=pd.to_numeric(frame[outcome], errors="coerce").to_numpy(np.float64),
        treated=pd.to_numeric(frame[treatment], errors="coerce").to_numpy(np.float64),
    )


def panel_to_design(panel: PanelDataset, estimand: str = "att") -> Dataset:
    """Stack a staggered panel into the cross-sectional design for the ATT.

    The emitted covariates are cohort fixed effects and period fixed effects
    (one reference each, the intercept comes from the design builder) plus
    one indicator per treated (cohort, relative-time) event cell with exactly
    one cell dropped. Fixed effects enter the confounder block only; event
    cells enter the heterogeneity dictionary only, where the ATT demeaning
    applied by the design builder reproduces the empirical event-cell
    weights. Cluster ids are set to the unit index.
    """
    if str(estimand).lower() != "att":
        raise ConfigError("staggered designs support the ATT estimand only")

    periods = panel.periods
    n_units, n_periods = panel.n_units, panel.n_periods
    e_by_unit = panel.first_treatment
    cohorts = np.unique(e_by_unit[np.isfinite(e_by_unit)])
    has_never = bool(np.any(~np.isfinite(e_by_unit)))

    # long-format arrays are sorted by (unit, time) after validation
    unit_row = np.repeat(np.arange(n_units), n_periods)
    time_row = np.tile(periods, n_units)
    d = panel.treated.astype(np.float64)
    e_row = e_by_unit[unit_row]

    # identification check: every treated event cell needs a same-period comparison
    d_mat = panel.treated.reshape(n_units, n_periods)
    treated_periods = np.unique(time_row[d == 1])
    no_comparison = [
        int(t)
        for t in treated_periods
        if d_mat[:, np.searchsorted(periods, t)].all()
    ]
    if no_comparison:
        warnings.warn(
            "ATT not point-identified; bound C required "
            f"(no untreated comparison in period(s) {no_comparison})"
        )

    cols: list[np.ndarray] = []
    names: list[str] = []
    # cohort fixed effects: drop the never cohort if present, else the earliest
    cohort_levels: list[float] = list(cohorts)
    if has_never:
        cohort_levels.append(NEVER_TREATED)
        reference_cohort = NEVER_TREATED
    else:
        reference_cohort = cohort_levels[0]
    for e in cohort_levels:
        if e == reference_cohort:
            continue
        label = "cohort_never" if not np.isfinite(e) else f"cohort_{int(e)}"
        cols.append((e_row == e).astype(np.float64))
        names.append(label)
    # period fixed effects: drop the earliest period
    for t in periods[1:]:
        cols.append((time_row == t).astype(np.float64))
        names.append(f"period_{int(t)}")
    level_names = list(names)

    # event cells (e, l>=0) actually observed; drop the lexicographically smallest
    event_cells = [
        (float(e), int(t - e))
        for e in cohorts
        for t in periods
        if t >= e
    ]
    dict_names = []
    for e, l in event_cells[1:]:
        indicator = ((e_row == e) & (time_row == e + l)).astype(np.float64)
        cols.append(indicator)
        names.append(f"event_e{int(e)}_l{l}")
        dict_names.append(names[-1])

    return Dataset(
        outcome=panel.outcome,
        treatment=d,
        covariates=np.column_stack(cols),
        covariate_names=tuple(names),
        covariate_kinds=(DISCRETE,) * len(names),
        cluster_id=unit_row.astype(np.int64),
        level_only=frozenset(level_names),
        dictionary_only=frozenset(dict_names),
    )


def to_csv(ds: Dataset, path) -> None:
    """Dump a Dataset as CSV with round-trip float formatting.

    Column order is outcome, treatment, covariates in stored order, then the
    cluster column when present.
    """
    columns = {"outcome": ds.outcome, "treatment": ds.treatment.astype(np.int64)}
    for i, name in enumerate(ds.covariate_names):
        columns[name] = ds.covariates[:, i]
    if ds.cluster_id is not None:
        columns["cluster"] = ds.cluster_id
    _write_csv(path, columns)


def _write_csv(path, columns: dict) -> None:
    names = list(columns)
    arrays = [np.asarray(columns[c]) for c in names]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(arrays[0].shape[0]):
            cells = []
            for arr in arrays:
                v = arr[i]
                if np.issubdtype(arr.dtype, np.floating):
                    cells.append(repr(float(v)))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")
