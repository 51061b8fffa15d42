"""Synthetic accommodation-listing datasets at three scales."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass

import numpy as np

from ..formats.common import partition_layout

COLUMNS = (
    "id",
    "name",
    "price",
    "city",
    "country",
    "geonames_id",
    "timezone",
    "reviews",
    "rating",
    "satisfaction",
    "beds",
    "checkin",
    "city_id",
    "accommodation_type",
)

# (city, country, geonames id, timezone)
_CITIES = (
    ("Lisbon", "Portugal", 2267057, "Europe/Lisbon"),
    ("Porto", "Portugal", 2735943, "Europe/Lisbon"),
    ("Madrid", "Spain", 3117735, "Europe/Madrid"),
    ("Barcelona", "Spain", 3128760, "Europe/Madrid"),
    ("Paris", "France", 2988507, "Europe/Paris"),
    ("Lyon", "France", 2996944, "Europe/Paris"),
    ("Berlin", "Germany", 2950159, "Europe/Berlin"),
    ("Munich", "Germany", 2867714, "Europe/Berlin"),
    ("Rome", "Italy", 3169070, "Europe/Rome"),
    ("Milan", "Italy", 3173435, "Europe/Rome"),
    ("Amsterdam", "Netherlands", 2759794, "Europe/Amsterdam"),
    ("Vienna", "Austria", 2761369, "Europe/Vienna"),
)
_TYPES = ("Hotel", "Apartment", "Hostel", "Guest house", "Bed and breakfast", "Villa")
_ADJECTIVES = ("Cozy", "Central", "Grand", "Quiet", "Sunny", "Modern", "Old Town", "Riverside")
_CHECKIN = ("14:00", "15:00", "16:00", "12:00-20:00", "flexible")


@dataclass(frozen=True)
class DatasetSpec:
    scale: str
    rows: int
    csv_mb: float

    @property
    def csv_bytes(self) -> int:
        """Nominal CSV size; sizes are read as MiB."""
        return round(self.csv_mb * 2**20)

    def partitions(self, seed: int = 0) -> list[tuple[int, int, str]]:
        """``(rows, bytes, digest)`` per part-file a write of this dataset produces."""
        base = hashlib.sha256(f"{self.scale}:{seed}".encode()).hexdigest()[:16]
        return [(r, b, f"{base}:{i}") for i, (r, b) in enumerate(partition_layout(self.rows, self.csv_bytes))]


SCALES: dict[str, DatasetSpec] = {
    "22k": DatasetSpec("22k", 22_248, 3.8),
    "100k": DatasetSpec("100k", 100_000, 9.4),
    "500k": DatasetSpec("500k", 500_000, 47.9),
}
ALIASES = {"small": "22k", "medium": "100k", "large": "500k"}


def get_spec(scale: str) -> DatasetSpec:
    try:
        return SCALES[ALIASES.get(scale, scale)]
    except KeyError:
        raise ValueError(f"unknown scale {scale!r}; expected one of {sorted(SCALES)}") from None


@dataclass
class Dataset:
    spec: DatasetSpec
    seed: int
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.columns["id"])

    def row(self, i: int) -> tuple:
        return tuple(self.columns[c][i].item() for c in COLUMNS)

    def to_csv(self) -> bytes:
        """Semicolon-delimited CSV with a header line."""
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=";", lineterminator="\n")
        writer.writerow(COLUMNS)
        cols = [self.columns[c].tolist() for c in COLUMNS]
        writer.writerows(zip(*cols))
        return buf.getvalue().encode()


def generate_dataset(spec: DatasetSpec | str, seed: int = 0) -> Dataset:
    """Deterministic listing rows for ``seed`` with exactly ``spec.rows`` rows."""
    if isinstance(spec, str):
        spec = get_spec(spec)
    n = spec.rows
    rng = np.random.default_rng(seed)
    city_idx = rng.integers(0, len(_CITIES), n)
    cities = np.array([c[0] for c in _CITIES])
    countries = np.array([c[1] for c in _CITIES])
    geonames = np.array([c[2] for c in _CITIES])
    zones = np.array([c[3] for c in _CITIES])
    types = np.array(_TYPES)[rng.integers(0, len(_TYPES), n)]
    adjectives = np.array(_ADJECTIVES)[rng.integers(0, len(_ADJECTIVES), n)]
    names = np.char.add(np.char.add(adjectives, " "), types)
    columns = {
        "id": np.arange(1, n + 1, dtype=np.int64),
        "name": names,
        "price": np.round(rng.lognormal(4.4, 0.5, n), 2),
        "city": cities[city_idx],
        "country": countries[city_idx],
        "geonames_id": geonames[city_idx],
        "timezone": zones[city_idx],
        "reviews": rng.poisson(85, n).astype(np.int64),
        "rating": rng.integers(1, 6, n).astype(np.int64),
        "satisfaction": np.round(rng.uniform(5.0, 10.0, n), 1),
        "beds": rng.integers(1, 7, n).astype(np.int64),
        "checkin": np.array(_CHECKIN)[rng.integers(0, len(_CHECKIN), n)],
        "city_id": (city_idx + 1).astype(np.int64),
        "accommodation_type": types,
    }
    return Dataset(spec, seed, columns)
