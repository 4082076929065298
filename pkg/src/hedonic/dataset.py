"""Listing ingestion, validation, encoding and stratification.

Listings arrive as CSV exports with one dwelling offer per row. Rows are
validated against a :class:`FilterConfig`; failures are kept as rejection
records rather than dropped silently. Accepted records are encoded into an
immutable :class:`ModelDataset` with a log-price response, standardized
continuous factors, dummy-coded categories and 0/1 environmental flags.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DWELLING_TYPES = ("SingleFamily", "MultiFamily", "Townhouse", "Condo")

# common spellings found in listing exports
DWELLING_ALIASES = {
    "singlefamily": "SingleFamily",
    "single family": "SingleFamily",
    "single family residential": "SingleFamily",
    "house": "SingleFamily",
    "multifamily": "MultiFamily",
    "multi-family": "MultiFamily",
    "multi-family (2-4 unit)": "MultiFamily",
    "multi-family (5+ unit)": "MultiFamily",
    "townhouse": "Townhouse",
    "condo": "Condo",
    "condo/co-op": "Condo",
    "condominium": "Condo",
}

REQUIRED_COLUMNS = (
    "price", "dwelling", "beds", "baths", "indoors", "lot",
    "year", "days", "hoa", "latitude", "longitude",
)
ENV_FACTORS = ("waterfront", "accessible", "green", "air_cond")
OPTIONAL_COLUMNS = ("borough",) + ENV_FACTORS + ("distance",)

CATEGORICAL_FACTORS = ("dwelling", "borough")
CONTINUOUS_FACTORS = (
    "latitude", "longitude", "beds", "baths", "indoors",
    "lot", "year", "days", "hoa", "distance",
)

# reporting order of the factors
SCHEMA_ORDER = (
    "dwelling", "borough", "latitude", "longitude", "beds", "baths", "indoors",
    "lot", "year", "days", "hoa", "distance",
) + ENV_FACTORS

DISPLAY_NAMES = {
    "dwelling": "Dwelling", "borough": "Borough", "latitude": "Latitude",
    "longitude": "Longitude", "beds": "Beds", "baths": "Baths",
    "indoors": "Indoors", "lot": "Lot", "year": "Year", "days": "Days",
    "hoa": "HOA", "distance": "Distance", "waterfront": "Waterfront",
    "accessible": "Accessible", "green": "Green", "air_cond": "Air Cond",
}

RESPONSE_DEFINITION = "ln(price)"


class DatasetError(ValueError):
    """Base class for ingestion and encoding failures."""


class SchemaError(DatasetError):
    """The CSV header lacks a required column."""


class NoRowsError(DatasetError):
    """Every input row was rejected (or the file had none)."""


class InsufficientRowsError(DatasetError):
    pass


class UnknownLevelError(DatasetError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    """Row filters; defaults follow the listing-site query settings.

    ``None`` bounds are not applied.
    """

    price_min: float = 50_000.0
    price_max: float = 10_000_000.0
    beds_min: float = 1.0
    baths_min: float = 1.0
    sqft_min: float = 250.0
    sqft_max: float | None = None
    lot_min: float = 250.0
    lot_max: float | None = None
    year_min: float | None = None
    year_max: float | None = None
    hoa_max: float | None = None

    @classmethod
    def from_json(cls, path) -> "FilterConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DatasetError(f"unknown filter keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ListingRecord:
    """One dwelling offer. ``row`` is the 1-based data-row number in the source."""

    price: float
    dwelling: str
    beds: float
    baths: float
    indoors: float
    lot: float
    year: float
    days: float
    hoa: float
    latitude: float
    longitude: float
    borough: str | None = None
    waterfront: bool | None = None
    accessible: bool | None = None
    green: bool | None = None
    air_cond: bool | None = None
    distance: float | None = None
    row: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ListingRecord":
        return cls(**d)


@dataclass(frozen=True)
class Rejection:
    row: int
    reason: str

    def to_json(self) -> str:
        return json.dumps({"row": self.row, "reason": self.reason})


@dataclass(frozen=True)
class IngestResult:
    records: tuple[ListingRecord, ...]
    rejections: tuple[Rejection, ...]
    n_rows: int
    source: str
    notes: tuple[str, ...] = ()


def _money(v: float) -> str:
    if v >= 1_000_000 and v % 1_000_000 == 0:
        return f"${int(v // 1_000_000)}M"
    if v >= 1_000 and v % 1_000 == 0:
        return f"${int(v // 1_000)}K"
    return f"${v:,.0f}"


def _num(v: float) -> str:
    return f"{v:g}"


class _RowError(Exception):
    pass


def _parse_float(raw: str, name: str, *, allow_empty: bool = False) -> float | None:
    s = raw.strip() if raw is not None else ""
    if s == "":
        if allow_empty:
            return None
        raise _RowError(f"missing value for {name}")
    try:
        v = float(s.replace(",", "").lstrip("$"))
    except ValueError:
        raise _RowError(f"unparseable {name} {s!r}") from None
    if not math.isfinite(v):
        raise _RowError(f"non-finite {name} {s!r}")
    return v


def _parse_bool(raw: str | None, name: str) -> bool:
    s = (raw or "").strip().lower()
    if s in ("1", "true", "yes", "y", "t"):
        return True
    if s in ("0", "false", "no", "n", "f", ""):
        return False
    raise _RowError(f"unparseable {name} {raw!r}")


def _parse_row(raw: dict, rownum: int, filters: FilterConfig, columns: set[str]) -> ListingRecord:
    f = filters
    price = _parse_float(raw["price"], "price")
    if price <= 0:
        raise _RowError("price must be positive")
    if f.price_min is not None and price < f.price_min:
        raise _RowError(f"price below min {_money(f.price_min)}")
    if f.price_max is not None and price > f.price_max:
        raise _RowError(f"price above max {_money(f.price_max)}")

    dwelling_raw = (raw["dwelling"] or "").strip()
    dwelling = DWELLING_ALIASES.get(dwelling_raw.lower())
    if dwelling is None:
        raise _RowError(f"unknown dwelling type {dwelling_raw!r}")

    beds = _parse_float(raw["beds"], "beds")
    if beds < f.beds_min:
        raise _RowError(f"beds below min {_num(f.beds_min)}")
    baths = _parse_float(raw["baths"], "baths")
    if baths < f.baths_min:
        raise _RowError(f"baths below min {_num(f.baths_min)}")
    if (baths * 2) != int(baths * 2):
        raise _RowError(f"baths {baths:g} not a multiple of 0.5")

    indoors = _parse_float(raw["indoors"], "indoors")
    if indoors < f.sqft_min:
        raise _RowError(f"indoors below min {_num(f.sqft_min)}")
    if f.sqft_max is not None and indoors > f.sqft_max:
        raise _RowError(f"indoors above max {_num(f.sqft_max)}")

    lot = _parse_float(raw["lot"], "lot", allow_empty=True)
    lot = 0.0 if lot is None else lot
    if lot < 0:
        raise _RowError("negative lot")
    # lot 0 / absent is normal for condos; the minimum applies to reported lots
    if lot > 0 and f.lot_min is not None and lot < f.lot_min:
        raise _RowError(f"lot below min {_num(f.lot_min)}")
    if f.lot_max is not None and lot > f.lot_max:
        raise _RowError(f"lot above max {_num(f.lot_max)}")

    year = _parse_float(raw["year"], "year")
    if year <= 0:
        raise _RowError(f"implausible year {year:g}")
    if f.year_min is not None and year < f.year_min:
        raise _RowError(f"year below min {_num(f.year_min)}")
    if f.year_max is not None and year > f.year_max:
        raise _RowError(f"year above max {_num(f.year_max)}")

    days = _parse_float(raw["days"], "days")
    if days < 0:
        raise _RowError("negative days on market")
    hoa = _parse_float(raw["hoa"], "hoa", allow_empty=True)
    hoa = 0.0 if hoa is None else hoa
    if hoa < 0:
        raise _RowError("negative hoa")
    if f.hoa_max is not None and hoa > f.hoa_max:
        raise _RowError(f"hoa above max {_num(f.hoa_max)}")

    lat = _parse_float(raw["latitude"], "latitude")
    if not -90.0 <= lat <= 90.0:
        raise _RowError(f"latitude {lat:g} outside [-90, 90]")
    lon = _parse_float(raw["longitude"], "longitude")
    if not -180.0 <= lon <= 180.0:
        raise _RowError(f"longitude {lon:g} outside [-180, 180]")

    extra = {}
    if "borough" in columns:
        b = (raw.get("borough") or "").strip()
        if not b:
            raise _RowError("missing borough")
        extra["borough"] = b
    for name in ENV_FACTORS:
        if name in columns:
            extra[name] = _parse_bool(raw.get(name), name)
    if "distance" in columns:
        d = _parse_float(raw.get("distance", ""), "distance", allow_empty=True)
        if d is not None and d < 0:
            raise _RowError("negative distance")
        extra["distance"] = d

    return ListingRecord(
        price=price, dwelling=dwelling, beds=beds, baths=baths, indoors=indoors,
        lot=lot, year=year, days=days, hoa=hoa, latitude=lat, longitude=lon,
        row=rownum, **extra,
    )


def ingest_csv(path, filters: FilterConfig | None = None) -> IngestResult:
    """Read and validate a listings CSV.

    Returns accepted records together with one :class:`Rejection` per failed
    row, so ``len(records) + len(rejections)`` equals the data-row count.

    Raises
    ------
    SchemaError
        A canonical column is missing from the header.
    NoRowsError
        No row survived validation.
    """
    filters = filters or FilterConfig()
    path = Path(path)
    records: list[ListingRecord] = []
    rejections: list[Rejection] = []
    notes: list[str] = []
    n_rows = 0
    hoa_missing = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing required column {col!r} in {path}")
        columns = set(header)
        for rownum, raw in enumerate(reader, start=1):
            n_rows += 1
            if None in raw:
                rejections.append(Rejection(rownum, "too many fields"))
                continue
            try:
                rec = _parse_row(raw, rownum, filters, columns)
            except _RowError as exc:
                rejections.append(Rejection(rownum, str(exc)))
                continue
            if not (raw.get("hoa") or "").strip():
                hoa_missing += 1
            records.append(rec)
    if hoa_missing:
        notes.append(f"hoa missing in {hoa_missing} accepted row(s); set to 0")
    if not records:
        raise NoRowsError(f"no rows accepted from {path} ({n_rows} read, {len(rejections)} rejected)")
    return IngestResult(tuple(records), tuple(rejections), n_rows, str(path), tuple(notes))


def write_rejections(rejections: Iterable[Rejection], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in rejections:
            fh.write(r.to_json() + "\n")


def save_records(records: Sequence[ListingRecord], path, provenance: dict | None = None) -> None:
    """Write records as a canonical JSON artifact (floats round-trip exactly)."""
    payload = {
        "response": RESPONSE_DEFINITION,
        "provenance": provenance or {},
        "records": [r.to_dict() for r in records],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_records(path) -> tuple[tuple[ListingRecord, ...], dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    recs = tuple(ListingRecord.from_dict(d) for d in payload["records"])
    return recs, payload.get("provenance", {})


# --------------------------------------------------------------------------
# Encoding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorSpec:
    """Which factors enter the model.

    ``include_borough`` and ``include_distance`` default to "use when present
    in every record"; environmental flags are opt-in.
    """

    include_borough: bool | None = None
    include_env: bool = False
    include_distance: bool | None = None
    exclude: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        d = dict(d)
        d["exclude"] = tuple(d.get("exclude", ()))
        return cls(**d)


@dataclass(frozen=True)
class Column:
    """One design column. ``kind`` is ``"continuous"`` or ``"binary"``."""

    name: str
    factor: str
    kind: str


@dataclass(frozen=True)
class Encoder:
    """Maps listing records onto the design columns of a dataset."""

    columns: tuple[Column, ...]
    levels: dict = field(default_factory=dict)  # factor -> (reference, (levels...))
    standardization: dict = field(default_factory=dict)  # column -> (mean, sd)

    @property
    def factor_names(self) -> tuple[str, ...]:
        seen: list[str] = []
        for c in self.columns:
            if c.factor not in seen:
                seen.append(c.factor)
        return tuple(seen)

    def raw_matrix(self, records: Sequence[ListingRecord]) -> np.ndarray:
        """Unstandardized design values (dummies as 0/1)."""
        out = np.empty((len(records), len(self.columns)))
        for j, col in enumerate(self.columns):
            if col.factor in self.levels:
                ref, levels = self.levels[col.factor]
                level = col.name.split("=", 1)[1]
                vals = []
                for r in records:
                    v = getattr(r, col.factor)
                    if v not in levels:
                        raise UnknownLevelError(f"unknown {col.factor} level {v!r}")
                    vals.append(1.0 if v == level else 0.0)
                out[:, j] = vals
            else:
                vals = [getattr(r, col.factor) for r in records]
                if any(v is None for v in vals):
                    raise DatasetError(f"factor {col.factor!r} missing in some records")
                out[:, j] = np.asarray(vals, dtype=float)
        return out

    def transform(self, records: Sequence[ListingRecord]) -> np.ndarray:
        x = self.raw_matrix(records)
        return self.standardize(x)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        for j, col in enumerate(self.columns):
            if col.name in self.standardization:
                mean, sd = self.standardization[col.name]
                x[:, j] = (x[:, j] - mean) / sd
        return x

    def to_dict(self) -> dict:
        return {
            "columns": [dataclasses.asdict(c) for c in self.columns],
            "levels": {k: [ref, list(lv)] for k, (ref, lv) in self.levels.items()},
            "standardization": {k: [m, s] for k, (m, s) in self.standardization.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder":
        return cls(
            columns=tuple(Column(**c) for c in d["columns"]),
            levels={k: (v[0], tuple(v[1])) for k, v in d["levels"].items()},
            standardization={k: (float(v[0]), float(v[1])) for k, v in d["standardization"].items()},
        )


@dataclass(frozen=True)
class ModelDataset:
    """Encoded, immutable design data.

    ``X`` holds the encoded factor columns (no intercept) in
    ``encoder.columns`` order; ``response`` is the natural log of price.
    ``records`` are the accepted listings the dataset was built from, which
    is what lets :func:`stratify` rebuild encodings per stratum.
    """

    response: np.ndarray
    X: np.ndarray
    encoder: Encoder
    spec: FactorSpec
    records: tuple[ListingRecord, ...] = field(repr=False)
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.response.size)

    @property
    def columns(self) -> tuple[Column, ...]:
        return self.encoder.columns

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.encoder.columns)

    @property
    def factor_names(self) -> tuple[str, ...]:
        return self.encoder.factor_names

    @property
    def encoding_map(self) -> dict:
        return {
            f: {
                "reference": ref,
                "levels": list(levels),
                "columns": [c.name for c in self.columns if c.factor == f],
            }
            for f, (ref, levels) in self.encoder.levels.items()
        }

    @property
    def standardization(self) -> dict:
        return dict(self.encoder.standardization)

    def factor_columns(self, factor: str) -> list[int]:
        return [j for j, c in enumerate(self.columns) if c.factor == factor]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.column_names.index(name)]

    @classmethod
    def from_arrays(cls, response, columns: dict, binary: Iterable[str] = ()) -> "ModelDataset":
        """Wrap pre-encoded arrays (no standardization, no source records).

        Mostly useful for simulation studies and tests.
        """
        binary = set(binary)
        cols = tuple(
            Column(name, name, "binary" if name in binary else "continuous") for name in columns
        )
        x = np.column_stack([np.asarray(v, dtype=float) for v in columns.values()]) if columns \
            else np.empty((len(response), 0))
        y = np.array(response, dtype=float)
        return cls(response=_ro(y), X=_ro(x), encoder=Encoder(cols), spec=FactorSpec(),
                   records=(), provenance={"source": "arrays"})


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _present(records: Sequence[ListingRecord], name: str) -> bool:
    return all(getattr(r, name) is not None for r in records)


def _reference_level(factor: str, levels: list[str]) -> str:
    if factor == "dwelling":
        for lv in DWELLING_TYPES:
            if lv in levels:
                return lv
    return sorted(levels)[0]


def build_dataset(records: Sequence[ListingRecord], spec: FactorSpec | None = None,
                  provenance: dict | None = None) -> ModelDataset:
    """Encode records into a :class:`ModelDataset`.

    Factors that are constant over the records are dropped with a warning
    recorded in ``provenance["warnings"]``.

    Raises
    ------
    InsufficientRowsError
        Fewer rows than candidate parameters + 10.
    """
    spec = spec or FactorSpec()
    records = tuple(records)
    if not records:
        raise NoRowsError("no records to encode")
    prov = dict(provenance or {})
    warn_log: list[str] = list(prov.get("warnings", []))

    wanted: list[str] = []
    for name in SCHEMA_ORDER:
        if name in spec.exclude:
            continue
        if name == "borough":
            use = _present(records, "borough") if spec.include_borough is None else spec.include_borough
            if use and not _present(records, "borough"):
                raise DatasetError("borough requested but missing in records")
        elif name == "distance":
            use = _present(records, "distance") if spec.include_distance is None else spec.include_distance
            if use and not _present(records, "distance"):
                raise DatasetError("Distance requested but not computed for all records")
        elif name in ENV_FACTORS:
            use = spec.include_env
            if use and not _present(records, name):
                raise DatasetError(f"environmental factor {name!r} requested but missing in records")
        else:
            use = True
        if use:
            wanted.append(name)

    columns: list[Column] = []
    levels: dict = {}
    for name in wanted:
        if name in CATEGORICAL_FACTORS:
            observed = sorted({getattr(r, name) for r in records})
            if len(observed) < 2:
                warn_log.append(f"{name} excluded: constant ({observed[0]!r})")
                continue
            ref = _reference_level(name, observed)
            ordered = [lv for lv in (DWELLING_TYPES if name == "dwelling" else observed) if lv in observed]
            levels[name] = (ref, tuple(ordered))
            columns.extend(Column(f"{name}={lv}", name, "binary") for lv in ordered if lv != ref)
        else:
            vals = np.asarray([float(getattr(r, name)) for r in records])
            if np.all(vals == vals[0]):
                warn_log.append(f"{name} excluded: constant ({vals[0]:g})")
                continue
            kind = "binary" if name in ENV_FACTORS else "continuous"
            columns.append(Column(name, name, kind))

    enc = Encoder(tuple(columns), levels, {})
    raw = enc.raw_matrix(records)
    std = {}
    for j, col in enumerate(columns):
        if col.kind == "continuous":
            mean = float(raw[:, j].mean())
            sd = float(raw[:, j].std(ddof=1))
            std[col.name] = (mean, sd)
    enc = Encoder(tuple(columns), levels, std)
    x = enc.standardize(raw)

    for w in warn_log[len(prov.get("warnings", [])):]:
        warnings.warn(w, RuntimeWarning, stacklevel=2)

    n_params = len(columns) + 1
    if len(records) < n_params + 10:
        raise InsufficientRowsError(
            f"insufficient rows: {len(records)} < {n_params} parameters + 10"
        )

    y = np.log(np.asarray([r.price for r in records], dtype=float))
    prov["warnings"] = warn_log
    prov["factor_spec"] = spec.to_dict()
    prov["rows"] = [r.row for r in records]
    return ModelDataset(response=_ro(y), X=_ro(x), encoder=enc, spec=spec,
                        records=records, provenance=prov)


@dataclass(frozen=True)
class StratifyRule:
    factor: str
    value: str

    @classmethod
    def parse(cls, text: str) -> "StratifyRule":
        if "=" not in text:
            raise DatasetError(f"stratify rule must look like factor=value, got {text!r}")
        factor, value = (s.strip() for s in text.split("=", 1))
        return cls(factor, value)

    @property
    def suffixes(self) -> tuple[str, str]:
        return self.value.lower()[:4], "non"


def stratify(dataset: ModelDataset, rule: StratifyRule) -> tuple[ModelDataset, ModelDataset]:
    """Split into (matching, complement) strata and re-encode each one."""
    if rule.factor not in CATEGORICAL_FACTORS:
        raise DatasetError(f"cannot stratify on non-categorical factor {rule.factor!r}")
    if not dataset.records:
        raise DatasetError("dataset carries no source records to stratify")
    observed = {getattr(r, rule.factor) for r in dataset.records}
    if rule.value not in observed:
        raise DatasetError(f"{rule.factor}={rule.value} not present in dataset")
    match = [r for r in dataset.records if getattr(r, rule.factor) == rule.value]
    rest = [r for r in dataset.records if getattr(r, rule.factor) != rule.value]
    if not rest:
        raise DatasetError(f"complement stratum of {rule.factor}={rule.value} is empty")
    base = {k: v for k, v in dataset.provenance.items() if k not in ("rows", "warnings")}
    tag_in, tag_out = rule.suffixes
    return (
        build_dataset(match, dataset.spec, {**base, "stratum": f"{rule.factor}={rule.value}", "suffix": tag_in}),
        build_dataset(rest, dataset.spec, {**base, "stratum": f"{rule.factor}!={rule.value}", "suffix": tag_out}),
    )
