"""Benchmark problems: two driven nonlinear oscillators, a bacterial growth
law, and an experimental stress-strain dataset.

The synthetic benchmarks plant a known ground-truth law, integrate or
sample it, and split rows into train / in-domain / out-of-domain sets.
Each benchmark also carries the natural-language problem description
shown to the generator and a reference skeleton of the true law with
placeholder parameters (used by tests and oracle injection).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests
from scipy.integrate import solve_ivp

from .data import DataError, Dataset, take
from .hypothesis import ProblemSpec, linear_seed
from .seeds import derive_rng

BENCHMARKS = ("osc1", "osc2", "ecoli", "stress")

STRESS_DATA_HOME = "https://data.mendeley.com/datasets/rd6jm9tyb6/1"
STRESS_DATA_LICENSE = "CC BY 4.0"


class GenerationError(RuntimeError):
    """Trajectory integration or data generation failed."""


# ---------------------------------------------------------------------------
# Oscillators

@dataclass(frozen=True)
class OscillatorSpec:
    which: str  # osc1 | osc2
    forcing: float
    omega: float
    alpha: float
    beta: float
    gamma: float
    delta: float = 0.0
    t_span: tuple[float, float] = (0.0, 50.0)
    x0: float = 0.5
    v0: float = 0.5
    n: int = 1000
    rtol: float = 1e-8
    atol: float = 1e-8

    def __post_init__(self):
        if self.which not in ("osc1", "osc2"):
            raise ValueError(f"unknown oscillator {self.which!r}")
        if self.t_span[1] <= self.t_span[0] or self.n < 2:
            raise ValueError("need t1 > t0 and n >= 2")


def osc1_spec(**overrides) -> OscillatorSpec:
    return OscillatorSpec("osc1", forcing=0.8, omega=1.0, alpha=0.5, beta=0.2, gamma=0.5, **overrides)


def osc2_spec(**overrides) -> OscillatorSpec:
    return OscillatorSpec("osc2", forcing=0.3, omega=1.0, alpha=0.5, beta=1.0, gamma=0.5, delta=5.0,
                          **overrides)


def oscillator_rhs(spec: OscillatorSpec, t, x, v):
    """Acceleration law; vectorised over equal-shaped t, x, v."""
    if spec.which == "osc1":
        return (spec.forcing * np.sin(spec.omega * x) - spec.alpha * v**3
                - spec.beta * x**3 - spec.gamma * x * v - x * np.cos(x))
    return (spec.forcing * np.sin(spec.omega * t) - spec.alpha * v**3
            - spec.beta * x * v - spec.delta * x * np.exp(spec.gamma * x))


def simulate_oscillator(spec: OscillatorSpec) -> Dataset:
    """Integrate the trajectory and tabulate (inputs, acceleration) rows.

    Adaptive Runge-Kutta 4(5) with dense output sampled at n uniform times;
    the target is the law evaluated on the integrated states, not a finite
    difference.  The autonomous oscillator drops the time column from its
    inputs; time provenance stays in metadata for splitting.
    """

    def deriv(t, state):
        x, v = state
        return [v, float(oscillator_rhs(spec, t, x, v))]

    sol = solve_ivp(deriv, spec.t_span, [spec.x0, spec.v0], method="RK45",
                    rtol=spec.rtol, atol=spec.atol, dense_output=True)
    if not sol.success:
        raise GenerationError(f"integration failed: {sol.message}")
    ts = np.linspace(spec.t_span[0], spec.t_span[1], spec.n)
    x, v = sol.sol(ts)
    targets = oscillator_rhs(spec, ts, x, v)
    meta = {"benchmark": spec.which, "time": ts}
    if spec.which == "osc1":
        return Dataset(("x", "v"), np.column_stack([x, v]), targets, "full", meta)
    return Dataset(("t", "x", "v"), np.column_stack([ts, x, v]), targets, "full", meta)


def split_oscillator(data: Dataset, seed: int = 0,
                     ood_interval: tuple[float, float] = (0.0, 20.0),
                     train_fraction: float = 0.8) -> dict[str, Dataset]:
    """Early-time rows are the out-of-domain set; the rest splits train/id."""
    times = np.asarray(data.metadata["time"])
    ood_mask = (times >= ood_interval[0]) & (times < ood_interval[1])
    return _assign_splits(data, ood_mask, seed, train_fraction)


def _assign_splits(data: Dataset, ood_mask: np.ndarray, seed: int,
                   train_fraction: float) -> dict[str, Dataset]:
    meta = {k: v for k, v in data.metadata.items() if k != "time"}
    data = Dataset(data.input_names, data.inputs, data.targets, "full", meta)
    rest = np.flatnonzero(~ood_mask)
    rng = derive_rng(seed, "split")
    perm = rng.permutation(len(rest))
    cut = int(round(train_fraction * len(rest)))
    train_idx = np.sort(rest[perm[:cut]])
    id_idx = np.sort(rest[perm[cut:]])
    return {
        "train": take(data, train_idx, "train"),
        "id_valid": take(data, id_idx, "id_valid"),
        "ood_valid": take(data, np.flatnonzero(ood_mask), "ood_valid"),
    }


# ---------------------------------------------------------------------------
# Bacterial growth

@dataclass(frozen=True)
class EcoliSpec:
    """Growth-rate law parameters and sampling ranges.

    The law multiplies a linear population term, a saturating substrate
    term, a temperature response (tanh rise, quartic collapse) and a pH
    response (exponential optimum times a squared sine window).
    """

    mu_max: float = 1.0
    ks: float = 1.0
    k: float = 0.3  # per degC
    t_mid: float = 15.0  # degC
    quartic_c: float = 3e-6  # per degC^4
    t_decay: float = 40.0  # degC
    ph_opt: float = 6.5
    ph_min: float = 3.0
    ph_max: float = 10.0
    ranges: dict = field(default_factory=lambda: {
        "B": (0.1, 2.0), "S": (0.1, 5.0), "T": (15.0, 45.0), "pH": (4.0, 9.0)})
    id_axis_fraction: float = 0.6  # central share of each axis that counts as in-domain
    n: int = 1000

    def __post_init__(self):
        if not (self.ph_min < self.ph_opt < self.ph_max):
            raise ValueError("need ph_min < ph_opt < ph_max")
        for name, (lo, hi) in self.ranges.items():
            if hi <= lo:
                raise ValueError(f"degenerate range for {name}")


def ecoli_rhs(spec: EcoliSpec, b, s, t, ph):
    substrate = s / (spec.ks + s)
    temp = np.tanh(spec.k * (t - spec.t_mid)) / (1.0 + spec.quartic_c * (t - spec.t_decay) ** 4)
    ph_window = np.sin((ph - spec.ph_min) * math.pi / (spec.ph_max - spec.ph_min)) ** 2
    return spec.mu_max * b * substrate * temp * np.exp(-np.abs(ph - spec.ph_opt)) * ph_window


def generate_ecoli(spec: EcoliSpec, seed: int = 0, train_fraction: float = 0.8) -> dict[str, Dataset]:
    """Uniform rows over the configured ranges; the central box of every axis
    is in-domain (train/id), everything else out-of-domain."""
    rng = derive_rng(seed, "ecoli")
    names = ("B", "S", "T", "pH")
    cols = [rng.uniform(*spec.ranges[name], size=spec.n) for name in names]
    inputs = np.column_stack(cols)
    targets = ecoli_rhs(spec, *cols)
    data = Dataset(names, inputs, targets, "full", {"benchmark": "ecoli"})

    margin = (1.0 - spec.id_axis_fraction) / 2.0
    in_box = np.ones(spec.n, dtype=bool)
    for i, name in enumerate(names):
        lo, hi = spec.ranges[name]
        width = hi - lo
        in_box &= (inputs[:, i] >= lo + margin * width) & (inputs[:, i] <= hi - margin * width)
    return _assign_splits(data, ~in_box, seed, train_fraction)


# ---------------------------------------------------------------------------
# Stress-strain (experimental)

STRESS_COLUMNS = ("strain", "temp_C", "stress_MPa")
STRESS_OOD_TEMP = 200.0


def load_stress_strain(path: Path | str, seed: int = 0,
                       train_fraction: float = 0.8) -> dict[str, Dataset]:
    """Load tensile-test rows; the 200 degC curve is the out-of-domain set."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in STRESS_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in STRESS_COLUMNS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in idx])
            except (ValueError, IndexError):
                raise DataError(f"{path}, line {lineno}: malformed row") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows)
    data = Dataset(("strain", "temp_C"), table[:, :2], table[:, 2], "full",
                   {"benchmark": "stress"})
    ood_mask = np.abs(table[:, 1] - STRESS_OOD_TEMP) < 1e-6
    return _assign_splits(data, ood_mask, seed, train_fraction)


def fetch_stress_data(url: str, out_path: Path | str, timeout: float = 60.0) -> Path:
    """Download the raw experimental archive for local conversion.

    The source is the public Aluminium 6061-T651 tensile-test dataset
    (https://data.mendeley.com/datasets/rd6jm9tyb6/1, CC BY 4.0); convert
    the sheet you need into the three-column CSV schema with
    convert_stress_csv.
    """
    out_path = Path(out_path)
    resp = requests.get(url, timeout=timeout)
    resp.raise_for_status()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(resp.content)
    return out_path


def convert_stress_csv(src: Path | str, out: Path | str, strain_col: str = "strain",
                       stress_col: str = "stress_MPa", temp_col: str = "temp_C") -> Path:
    """Map arbitrary column names onto the strain/temp_C/stress_MPa schema."""
    src, out = Path(src), Path(out)
    with open(src, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{src}: empty file")
        for col in (strain_col, temp_col, stress_col):
            if col not in reader.fieldnames:
                raise DataError(f"{src}: missing column {col!r}")
        rows = [(row[strain_col], row[temp_col], row[stress_col]) for row in reader]
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STRESS_COLUMNS)
        writer.writerows(rows)
    return out


# ---------------------------------------------------------------------------
# Noise harness

@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def add_noise(data: Dataset, noise: NoiseSpec) -> Dataset:
    """Gaussian noise on the targets only (the noise study corrupts the
    training split and reports clean-split errors)."""
    eps = noise.sigma * derive_rng(noise.seed, "noise").standard_normal(data.n)
    return data.with_targets(data.targets + eps, noise_sigma=noise.sigma)


# ---------------------------------------------------------------------------
# Problem registry

_OSC1_DESCRIPTION = """\
A damped oscillator moves along one axis.  x is the displacement from rest
and v = dx/dt is the velocity (both in dimensionless simulation units); the
output to model is the acceleration dv/dt.  The force law is autonomous (no
explicit time dependence) and is expected to combine a bounded driving term,
nonlinear damping that grows with speed, and a strongly nonlinear restoring
force in the displacement.
"""

_OSC2_DESCRIPTION = """\
A periodically driven, damped oscillator moves along one axis.  t is elapsed
time, x the displacement from rest, v = dx/dt the velocity (dimensionless
simulation units); the output to model is the acceleration dv/dt.  An external
periodic drive depends on time, while damping and restoring forces depend on
the state; the restoring force may stiffen rapidly with displacement.
"""

_ECOLI_DESCRIPTION = """\
An E. coli culture grows in a stirred medium.  B is the population density,
S the substrate (nutrient) concentration, T the temperature in degrees
Celsius, and pH the acidity of the medium.  The output to model is the
instantaneous growth rate dB/dt.  Microbiology suggests a multiplicative
structure: growth proportional to B, substrate uptake that saturates at high
S, and temperature and pH responses that each peak at an optimum and collapse
towards the viability limits.
"""

_STRESS_DESCRIPTION = """\
An aluminium alloy specimen (6061-T651) is loaded in uniaxial tension.
strain is the elongation (dimensionless) and temp_C the test temperature in
degrees Celsius; the output to model is the stress in MPa.  Expect a linear
elastic regime at small strain followed by nonlinear plastic behaviour, with
overall strength decreasing as temperature rises; the transition between
regimes is smooth but fairly sharp.
"""

_DESCRIPTIONS = {
    "osc1": ("Nonlinear damped oscillator", _OSC1_DESCRIPTION, ("x", "v")),
    "osc2": ("Driven nonlinear oscillator", _OSC2_DESCRIPTION, ("t", "x", "v")),
    "ecoli": ("E. coli growth rate", _ECOLI_DESCRIPTION, ("B", "S", "T", "pH")),
    "stress": ("Stress-strain response of aluminium 6061-T651", _STRESS_DESCRIPTION,
               ("strain", "temp_C")),
}

REFERENCE_SKELETONS = {
    "osc1": ("return params[0]*sin(params[1]*x) - params[2]*v^3 - params[3]*x^3"
             " - params[4]*x*v - x*cos(x)"),
    "osc2": ("return params[0]*sin(params[1]*t) - params[2]*v^3 - params[3]*x*v"
             " - params[4]*x*exp(params[5]*x)"),
    "ecoli": ("return params[0]*B*(S/(params[1] + S))"
              "*(tanh(params[2]*(T - params[3]))/(1 + params[4]*(T - params[5])^4))"
              "*exp(-abs(pH - params[6]))"
              "*sin((pH - params[7])*3.141592653589793/(params[8] - params[7]))^2"),
}


def problem_spec(benchmark: str) -> ProblemSpec:
    if benchmark not in _DESCRIPTIONS:
        raise ValueError(f"unknown benchmark {benchmark!r}; expected one of {BENCHMARKS}")
    title, description, names = _DESCRIPTIONS[benchmark]
    return ProblemSpec(title, description, names, linear_seed(names))


def generate_benchmark(benchmark: str, seed: int = 0, samples: int = 1000,
                       noise_sigma: float = 0.0, stress_csv: Path | str | None = None,
                       ) -> tuple[dict[str, Dataset], dict]:
    """Produce the three splits plus the metadata sidecar record."""
    if benchmark == "osc1":
        spec = osc1_spec(n=samples)
        splits = split_oscillator(simulate_oscillator(spec), seed)
        split_rule = {"ood_time_interval": [0.0, 20.0], "train_fraction": 0.8}
    elif benchmark == "osc2":
        spec = osc2_spec(n=samples)
        splits = split_oscillator(simulate_oscillator(spec), seed)
        split_rule = {"ood_time_interval": [0.0, 20.0], "train_fraction": 0.8}
    elif benchmark == "ecoli":
        ecoli = EcoliSpec(n=samples)
        splits = generate_ecoli(ecoli, seed)
        split_rule = {"id_axis_fraction": ecoli.id_axis_fraction, "train_fraction": 0.8}
    elif benchmark == "stress":
        if stress_csv is None:
            raise ValueError("the stress benchmark needs an input CSV (see fetch-stress-data)")
        splits = load_stress_strain(stress_csv, seed)
        split_rule = {"ood_temp_C": STRESS_OOD_TEMP, "train_fraction": 0.8}
    else:
        raise ValueError(f"unknown benchmark {benchmark!r}; expected one of {BENCHMARKS}")
    if noise_sigma:
        splits["train"] = add_noise(splits["train"], NoiseSpec(noise_sigma, seed))
    metadata = {"benchmark": benchmark, "seed": seed, "samples": samples,
                "noise_sigma": noise_sigma, "split_rule": split_rule}
    return splits, metadata
