"""Dataset schema, synthetic surrogate oracle, feasibility filtering, CSV I/O,
normalization and splitting.

The surrogate oracle stands in for the finite-element glassblowing + modal
analysis pipeline: deterministic smooth analytic functions of the design
triple (H, r, T) plus seeded low-amplitude measurement noise on the mode
frequencies. Its functional forms and constants are fixed repository
artifacts (see SURROGATE_VERSION); changing them invalidates every frozen
acceptance number downstream.

Units: millimetres for geometry, hertz for frequencies, kelvin for
temperature, Pa*s for viscosity.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields as dc_fields

import numpy as np


class DataError(ValueError):
    """Invalid data value, file content, or schema."""


# ---------------------------------------------------------------------------
# schema

CSV_HEADER = "H_mm,r_mm,T_mm,f1_hz,f2_hz,f3_hz,fb_hz,fr_hz,fs_hz,rn_mm"
REJECTED_CSV_HEADER = CSV_HEADER + ",reject_reason"
INPUT_CSV_HEADER = "H_mm,r_mm,T_mm"

# design-parameter ranges spanned by the simulation sweep
PARAM_RANGES = {
    "H": (1.04, 4.69),
    "r": (0.34, 1.36),
    "T": (0.08, 0.32),
}
RESONATOR_RADIUS_MM = 5.0

MIN_ANCHOR_RADIUS_MM = 0.1  # manufacturing feasibility floor
ANCHOR_RESOLUTION_MM = 0.01  # recorded data resolution (2 decimals)

FREQUENCY_FIELDS = ("f1", "f2", "f3", "fb", "fr", "fs")


@dataclass(frozen=True)
class Sample:
    """One design point with its simulated responses.

    h/r/t are the designed height, anchor radius and edge thickness; f1..fs
    the first six mode frequencies (n=1, n=2, n=3, breathing, rotational,
    swing); rn the post-softening actual anchor radius.
    """

    h: float
    r: float
    t: float
    f1: float
    f2: float
    f3: float
    fb: float
    fr: float
    fs: float
    rn: float

    def row(self) -> tuple[float, ...]:
        return (self.h, self.r, self.t, self.f1, self.f2, self.f3,
                self.fb, self.fr, self.fs, self.rn)


def feasibility_filter(sample: Sample) -> str | None:
    """Return None to keep, or the name of the violated rule."""
    values = sample.row()
    if not all(np.isfinite(v) for v in values):
        return "non_finite_field"
    if not all(v > 0 for v in values):
        return "non_positive_field"
    if sample.rn < MIN_ANCHOR_RADIUS_MM:
        return "anchor_radius_below_min"
    return None


@dataclass(frozen=True)
class Dataset:
    """Feasibility-filtered, duplicate-free collection of samples."""

    samples: tuple[Sample, ...]
    provenance: str = "synthetic"  # or "external"
    seed: int | None = None

    def __post_init__(self):
        triples = {(s.h, s.r, s.t) for s in self.samples}
        if len(triples) != len(self.samples):
            raise DataError("duplicate (H, r, T) design triples in dataset")
        for i, s in enumerate(self.samples):
            reason = feasibility_filter(s)
            if reason is not None:
                raise DataError(f"sample {i} fails feasibility filter: {reason}")

    def __len__(self) -> int:
        return len(self.samples)

    def inputs(self) -> np.ndarray:
        return np.array([[s.h, s.r, s.t] for s in self.samples])

    def targets(self, task: str) -> np.ndarray:
        if task == "frequency":
            return np.array([[s.f1, s.f2, s.f3, s.fb, s.fr, s.fs] for s in self.samples])
        if task == "radius":
            return np.array([[s.rn] for s in self.samples])
        raise DataError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# physics constants and the surrogate oracle

SURROGATE_VERSION = 1

# Empirical viscosity law for fused silica, valid roughly 1900-2500 K.
FULCHER_A = -5.894
FULCHER_B = 21340.8
FULCHER_T0 = 239.5


def fulcher_viscosity(temp_k: float) -> float:
    """Viscosity of fused silica in Pa*s: 10^(A + B / (T - T0))."""
    if temp_k <= FULCHER_T0:
        raise DataError(
            f"temperature {temp_k} K is at or below the {FULCHER_T0} K pole "
            "of the viscosity law"
        )
    return float(10.0 ** (FULCHER_A + FULCHER_B / (temp_k - FULCHER_T0)))


# Anchor shrinkage model. The blow duration grows with target height, the
# characteristic softening time is viscosity over driving stress at the
# process temperature, and thin sheets soften through faster. The resulting
# shrinkage fraction is squashed into the 15-30% band reported for this
# process.
PROCESS_TEMPERATURE_K = 2100.0
BLOW_STRESS_PA = 5.0e3
BLOW_SECONDS_PER_MM = 30.0
THICKNESS_SCALE_MM = 0.16
SHRINK_MIN = 0.15
SHRINK_SPAN = 0.15
SHRINK_GAIN = 6.0
SHRINK_MIDPOINT = 0.34

# Mode-frequency model: the operating (n=2) frequency is a smooth positive
# field over (H, rn, T); each neighbour mode sits a bounded tanh-shaped gap
# away from it so that coupling (gap below 1 kHz) occurs on a controlled
# fraction of the design space. n=3 stays far above and never couples.
FREQ_NOISE_SIGMA = 0.0015


def _blow_extent(h_mm: float) -> float:
    tau = fulcher_viscosity(PROCESS_TEMPERATURE_K) / BLOW_STRESS_PA
    return 1.0 - np.exp(-BLOW_SECONDS_PER_MM * h_mm / tau)


def shrinkage_fraction(h_mm: float, t_mm: float) -> float:
    """Anchor shrinkage in (0.15, 0.30): grows with height, shrinks with thickness."""
    thin = 1.0 / (1.0 + t_mm / THICKNESS_SCALE_MM)
    drive = _blow_extent(h_mm) * thin
    squash = 0.5 * (1.0 + np.tanh(0.5 * SHRINK_GAIN * (drive - SHRINK_MIDPOINT)))
    return float(SHRINK_MIN + SHRINK_SPAN * squash)


def _normalized(h_mm: float, t_mm: float) -> tuple[float, float]:
    h_lo, h_hi = PARAM_RANGES["H"]
    t_lo, t_hi = PARAM_RANGES["T"]
    return (h_mm - h_lo) / (h_hi - h_lo), (t_mm - t_lo) / (t_hi - t_lo)


def mode_frequencies(h_mm: float, rn_mm: float, t_mm: float) -> dict[str, float]:
    """Noise-free mode frequencies (Hz) as smooth functions of (H, rn, T)."""
    hn, tn = _normalized(h_mm, t_mm)
    an = rn_mm

    f2 = 8200.0 + 21000.0 * tn + 5200.0 * an - 2600.0 * hn + 1800.0 * hn * tn

    z1 = 10.5 * (hn - 0.60) - 4.5 * (tn - 0.50) + 2.25 * (an - 0.70)
    zb = 9.0 * (0.62 - tn) - 3.75 * (hn - 0.50) + 1.8 * (an - 0.70)
    zr = 12.0 * (an - 0.50) - 2.25 * (hn - 0.50)
    zs = 9.0 * (0.42 - hn) + 5.25 * (tn - 0.45) - 3.0 * (an - 0.60)

    return {
        "f1": f2 + 3300.0 * np.tanh(z1),
        "f2": f2,
        "f3": 2.08 * f2 + 900.0 * tn,
        "fb": f2 + 3600.0 * np.tanh(zb),
        "fr": f2 + 3100.0 * np.tanh(zr),
        "fs": f2 + 3900.0 * np.tanh(zs),
    }


def _sample_rng(h: float, r: float, t: float, seed: int) -> np.random.Generator:
    key = struct.pack(">dddq", h, r, t, seed)
    digest = hashlib.sha256(key).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def surrogate_oracle(h_mm: float, r_mm: float, t_mm: float, seed: int = 0) -> Sample:
    """Deterministic surrogate for one glassblowing + modal-analysis run.

    The actual anchor radius shrinks by a height/thickness-dependent fraction
    and is recorded at 0.01 mm resolution, reproducing the truncation artifact
    of the source data. Frequencies carry small seeded multiplicative noise.
    """
    if not (h_mm > 0 and r_mm > 0 and t_mm > 0):
        raise DataError(
            f"design parameters must be positive, got H={h_mm}, r={r_mm}, T={t_mm}"
        )
    shrink = shrinkage_fraction(h_mm, t_mm)
    rn = round(r_mm * (1.0 - shrink) / ANCHOR_RESOLUTION_MM) * ANCHOR_RESOLUTION_MM

    clean = mode_frequencies(h_mm, rn, t_mm)
    rng = _sample_rng(h_mm, r_mm, t_mm, seed)
    noise = 1.0 + FREQ_NOISE_SIGMA * rng.standard_normal(len(FREQUENCY_FIELDS))
    return Sample(
        h=h_mm, r=r_mm, t=t_mm,
        f1=clean["f1"] * noise[0],
        f2=clean["f2"] * noise[1],
        f3=clean["f3"] * noise[2],
        fb=clean["fb"] * noise[3],
        fr=clean["fr"] * noise[4],
        fs=clean["fs"] * noise[5],
        rn=rn,
    )


# ---------------------------------------------------------------------------
# dataset generation

GRID_POINTS_PER_AXIS = 7  # default raw draw: 7^3 = 343 jittered grid nodes
GRID_JITTER_FRACTION = 0.4  # of one grid step, per axis


def _grid_triples(rng: np.random.Generator) -> np.ndarray:
    axes = {}
    steps = {}
    for name, (lo, hi) in PARAM_RANGES.items():
        axes[name] = np.linspace(lo, hi, GRID_POINTS_PER_AXIS)
        steps[name] = (hi - lo) / (GRID_POINTS_PER_AXIS - 1)
    triples = []
    for h in axes["H"]:
        for r in axes["r"]:
            for t in axes["T"]:
                jit = rng.uniform(-GRID_JITTER_FRACTION, GRID_JITTER_FRACTION, size=3)
                triples.append((h + jit[0] * steps["H"],
                                r + jit[1] * steps["r"],
                                t + jit[2] * steps["T"]))
    return np.array(triples)


def _latin_hypercube_triples(n: int, rng: np.random.Generator) -> np.ndarray:
    cols = []
    for name in ("H", "r", "T"):
        lo, hi = PARAM_RANGES[name]
        strata = (rng.permutation(n) + rng.random(n)) / n
        cols.append(lo + strata * (hi - lo))
    return np.column_stack(cols)


def generate_dataset(n_raw: int = 343, seed: int = 0
                     ) -> tuple[Dataset, list[tuple[Sample, str]]]:
    """Draw raw design triples, run the oracle, apply the feasibility filter.

    The default 343 raws come from a jittered 7x7x7 grid over the parameter
    ranges; any other n_raw uses a seeded Latin hypercube. Returns the kept
    Dataset and the rejected (sample, reason) audit list.
    """
    if n_raw < 1:
        raise DataError(f"n_raw must be >= 1, got {n_raw}")
    rng = np.random.default_rng(derive_seed(seed, "gen-data"))
    if n_raw == GRID_POINTS_PER_AXIS ** 3:
        triples = _grid_triples(rng)
    else:
        triples = _latin_hypercube_triples(n_raw, rng)

    kept: list[Sample] = []
    rejected: list[tuple[Sample, str]] = []
    for h, r, t in triples:
        sample = surrogate_oracle(float(h), float(r), float(t), seed)
        reason = feasibility_filter(sample)
        if reason is None:
            kept.append(sample)
        else:
            rejected.append((sample, reason))
    return Dataset(tuple(kept), provenance="synthetic", seed=seed), rejected


def derive_seed(seed: int, label: str) -> int:
    """Stable per-subsystem seed derived from the master seed and a label."""
    digest = hashlib.sha256(f"{label}:{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def split(dataset: Dataset, train_fraction: float = 0.85, seed: int = 0
          ) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then partition; train size = round(fraction * n)."""
    n = len(dataset)
    if n < 10:
        raise DataError(f"dataset too small to split: {n} samples")
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    n_train = int(np.floor(train_fraction * n + 0.5))
    train = tuple(dataset.samples[i] for i in order[:n_train])
    test = tuple(dataset.samples[i] for i in order[n_train:])
    return (
        Dataset(train, provenance=dataset.provenance, seed=dataset.seed),
        Dataset(test, provenance=dataset.provenance, seed=dataset.seed),
    )


# ---------------------------------------------------------------------------
# normalization

@dataclass(frozen=True)
class NormStats:
    """Z-score statistics, computed on the training split only."""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @classmethod
    def fit(cls, train: Dataset, task: str) -> "NormStats":
        x = train.inputs()
        y = train.targets(task)
        stats = cls(x.mean(axis=0), x.std(axis=0), y.mean(axis=0), y.std(axis=0))
        if np.any(stats.input_std <= 0) or np.any(stats.target_std <= 0):
            raise DataError("zero-variance feature or target in training split")
        return stats

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.input_mean) / self.input_std

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def denormalize_targets(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.target_std + self.target_mean


# ---------------------------------------------------------------------------
# CSV I/O (17 significant digits: bit-exact float64 round trips)

def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_dataset_csv(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for s in dataset.samples:
            fh.write(",".join(_fmt(v) for v in s.row()) + "\n")


def write_rejected_csv(path, rejected: list[tuple[Sample, str]]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(REJECTED_CSV_HEADER + "\n")
        for s, reason in rejected:
            fh.write(",".join(_fmt(v) for v in s.row()) + f",{reason}\n")


def _parse_float(text: str, line_no: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"line {line_no}: column {column!r} is not a number: {text!r}") from None


def read_dataset_csv(path, provenance: str = "external") -> Dataset:
    expected = CSV_HEADER.split(",")
    samples = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header.split(",") != expected:
            raise DataError(f"line 1: expected header {CSV_HEADER!r}, got {header!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(expected):
                raise DataError(
                    f"line {line_no}: expected {len(expected)} columns, got {len(parts)}"
                )
            values = [_parse_float(p, line_no, c) for p, c in zip(parts, expected)]
            samples.append(Sample(*values))
    return Dataset(tuple(samples), provenance=provenance)


def read_inputs_csv(path) -> np.ndarray:
    """Read a prediction-input CSV holding the three design columns."""
    expected = INPUT_CSV_HEADER.split(",")
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header.split(",")[: len(expected)] != expected:
            raise DataError(
                f"line 1: expected leading columns {INPUT_CSV_HEADER!r}, got {header!r}"
            )
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise DataError(f"line {line_no}: expected at least 3 columns")
            rows.append([_parse_float(p, line_no, c) for p, c in zip(parts[:3], expected)])
    return np.array(rows).reshape(-1, 3)
