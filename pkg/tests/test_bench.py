import math

import numpy as np
import pytest

from eqsearch import bench
from eqsearch.data import DataError, Dataset, load_csv, load_splits, save_csv, save_splits
from eqsearch.dsl import parse
from eqsearch.evaluation import evaluate
from eqsearch.seeds import derive_rng


# -- oscillators --------------------------------------------------------------

def test_osc1_first_row_golden():
    data = bench.simulate_oscillator(bench.osc1_spec(n=50))
    # independent scalar oracle at the initial state x=v=0.5
    expected = (0.8 * math.sin(0.5) - 0.5 * 0.5**3 - 0.2 * 0.5**3
                - 0.5 * 0.5 * 0.5 - 0.5 * math.cos(0.5))
    assert expected == pytest.approx(-0.26775, abs=5e-6)
    np.testing.assert_allclose(data.inputs[0], [0.5, 0.5])
    assert data.targets[0] == pytest.approx(expected, abs=1e-12)
    assert data.input_names == ("x", "v")  # autonomous law drops t


def test_osc2_first_row_golden():
    data = bench.simulate_oscillator(bench.osc2_spec(n=50))
    # 0.3*sin(0) - 0.5*0.125 - 1.0*0.25 - 5*0.5*e^0.25
    expected = -0.0625 - 0.25 - 2.5 * math.exp(0.25)
    assert expected == pytest.approx(-3.52256, abs=5e-6)
    np.testing.assert_allclose(data.inputs[0], [0.0, 0.5, 0.5])
    assert data.targets[0] == pytest.approx(expected, abs=1e-12)
    assert data.input_names == ("t", "x", "v")


def test_targets_come_from_the_law_not_differences(osc2_splits):
    spec = bench.osc2_spec(n=500)
    for split in osc2_splits.values():
        t, x, v = (split.column(c) for c in ("t", "x", "v"))
        np.testing.assert_allclose(bench.oscillator_rhs(spec, t, x, v), split.targets,
                                   atol=1e-9)


def test_trajectory_consistent_with_velocity():
    data = bench.simulate_oscillator(bench.osc1_spec(n=1000))
    ts = np.asarray(data.metadata["time"])
    dx = np.gradient(data.column("x"), ts)  # central differences on the dense grid
    assert np.median(np.abs(dx - data.column("v"))) <= 1e-3


def test_halving_tolerance_barely_moves_states():
    base = bench.simulate_oscillator(bench.osc1_spec(n=400))
    tight = bench.simulate_oscillator(bench.osc1_spec(n=400, rtol=5e-9, atol=5e-9))
    assert np.abs(base.column("x") - tight.column("x")).max() < 1e-6


def test_split_oscillator_partition(osc2_splits):
    sizes = [osc2_splits[k].n for k in ("train", "id_valid", "ood_valid")]
    assert sum(sizes) == 500
    assert np.all(osc2_splits["ood_valid"].column("t") < 20.0)
    assert np.all(osc2_splits["train"].column("t") >= 20.0)
    assert np.all(osc2_splits["id_valid"].column("t") >= 20.0)
    # 80/20 split of the 300 later-time rows
    assert sizes[0] == 240 and sizes[1] == 60


def test_split_seeded_reproducible():
    full = bench.simulate_oscillator(bench.osc1_spec(n=200))
    a = bench.split_oscillator(full, seed=3)
    b = bench.split_oscillator(full, seed=3)
    c = bench.split_oscillator(full, seed=4)
    assert a["train"].equals(b["train"])
    assert not a["train"].equals(c["train"])


def test_reference_skeletons_reproduce_targets(osc1_splits, osc2_splits):
    cases = [
        ("osc1", osc1_splits["train"], [0.8, 1.0, 0.5, 0.2, 0.5]),
        ("osc2", osc2_splits["train"], [0.3, 1.0, 0.5, 1.0, 5.0, 0.5]),
    ]
    for name, data, params in cases:
        program = parse(bench.REFERENCE_SKELETONS[name], data.input_names)
        out = evaluate(program, params, data)
        assert out.ok
        np.testing.assert_allclose(out.predictions, data.targets, atol=1e-9)


def test_oscillator_spec_validation():
    with pytest.raises(ValueError):
        bench.osc1_spec(n=1)
    with pytest.raises(ValueError):
        bench.osc1_spec(t_span=(5.0, 5.0))


# -- bacterial growth -----------------------------------------------------------

def test_ecoli_ph_boundary_kills_growth():
    spec = bench.EcoliSpec()
    assert bench.ecoli_rhs(spec, 1.7, 2.0, 25.0, spec.ph_min) == pytest.approx(0.0)


def test_ecoli_monod_identity():
    spec = bench.EcoliSpec()
    # S = Ks halves the substrate factor; S -> infinity saturates to 1
    at_ks = bench.ecoli_rhs(spec, 1.0, spec.ks, 30.0, 6.0)
    saturated = bench.ecoli_rhs(spec, 1.0, 1e12, 30.0, 6.0)
    assert at_ks == pytest.approx(0.5 * saturated, rel=1e-9)


def test_ecoli_default_point_golden():
    spec = bench.EcoliSpec()
    # B=1, S=Ks, T=t_decay, pH=ph_opt:
    # 1 * 1/2 * tanh(0.3*(40-15)) / (1+0) * exp(0) * sin(pi/2)^2
    expected = 0.5 * math.tanh(0.3 * 25.0)
    value = bench.ecoli_rhs(spec, 1.0, 1.0, 40.0, 6.5)
    assert value == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.4999996941, abs=1e-9)


def test_ecoli_reference_skeleton_matches_law():
    spec = bench.EcoliSpec()
    splits = bench.generate_ecoli(bench.EcoliSpec(n=300), seed=2)
    program = parse(bench.REFERENCE_SKELETONS["ecoli"], ("B", "S", "T", "pH"))
    params = [spec.mu_max, spec.ks, spec.k, spec.t_mid, spec.quartic_c,
              spec.t_decay, spec.ph_opt, spec.ph_min, spec.ph_max]
    for split in splits.values():
        out = evaluate(program, params, split)
        assert out.ok
        np.testing.assert_allclose(out.predictions, split.targets, atol=1e-9)


def test_ecoli_id_box_assignment():
    spec = bench.EcoliSpec(n=800)
    splits = bench.generate_ecoli(spec, seed=5)
    assert sum(s.n for s in splits.values()) == 800

    def in_box(ds):
        ok = np.ones(ds.n, dtype=bool)
        for i, name in enumerate(("B", "S", "T", "pH")):
            lo, hi = spec.ranges[name]
            margin = 0.2 * (hi - lo)
            ok &= (ds.inputs[:, i] >= lo + margin) & (ds.inputs[:, i] <= hi - margin)
        return ok

    assert in_box(splits["train"]).all()
    assert in_box(splits["id_valid"]).all()
    assert not in_box(splits["ood_valid"]).any()


def test_ecoli_spec_validation():
    with pytest.raises(ValueError):
        bench.EcoliSpec(ph_opt=2.0)
    with pytest.raises(ValueError):
        bench.EcoliSpec(ranges={"B": (1.0, 1.0), "S": (0.1, 5.0),
                                "T": (15.0, 45.0), "pH": (4.0, 9.0)})


# -- stress-strain ---------------------------------------------------------------

def write_stress_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("strain,temp_C,stress_MPa\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def test_stress_ood_is_200C(tmp_path):
    rows = [(0.001 * i, temp, 70.0 - 0.1 * temp + i) for temp in (20, 100, 200, 300)
            for i in range(10)]
    path = tmp_path / "stress.csv"
    write_stress_csv(path, rows)
    splits = bench.load_stress_strain(path, seed=1)
    assert np.all(splits["ood_valid"].column("temp_C") == 200.0)
    assert not np.any(splits["train"].column("temp_C") == 200.0)
    assert sum(s.n for s in splits.values()) == len(rows)


def test_stress_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataError, match="empty"):
        bench.load_stress_strain(path)


def test_stress_missing_column_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("strain,stress_MPa\n0.1,50\n")
    with pytest.raises(DataError, match="temp_C"):
        bench.load_stress_strain(path)


def test_stress_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("strain,temp_C,stress_MPa\n0.1,20,50\n0.2,oops,60\n")
    with pytest.raises(DataError, match="line 3"):
        bench.load_stress_strain(path)


def test_convert_stress_csv(tmp_path):
    src = tmp_path / "raw.csv"
    src.write_text("eps,T,sigma\n0.1,20,50\n0.2,300,40\n")
    out = bench.convert_stress_csv(src, tmp_path / "out.csv", strain_col="eps",
                                   stress_col="sigma", temp_col="T")
    text = out.read_text()
    assert text.splitlines()[0] == "strain,temp_C,stress_MPa"
    assert text.splitlines()[1] == "0.1,20,50"


# -- noise -----------------------------------------------------------------------

def test_noise_zero_is_identity(osc1_splits):
    train = osc1_splits["train"]
    noisy = bench.add_noise(train, bench.NoiseSpec(0.0, seed=1))
    assert noisy.equals(train)


def test_noise_statistics():
    y = np.zeros(100_000)
    data = Dataset(("x",), np.ones((100_000, 1)), y)
    sigma = 0.05
    noisy = bench.add_noise(data, bench.NoiseSpec(sigma, seed=4))
    eps = noisy.targets - y
    assert abs(eps.mean()) <= 3 * sigma / math.sqrt(len(eps))
    assert abs(eps.std() - sigma) / sigma <= 0.02
    np.testing.assert_array_equal(noisy.inputs, data.inputs)
    assert noisy.metadata["noise_sigma"] == sigma


def test_noise_seeded_reproducible(osc1_splits):
    train = osc1_splits["train"]
    a = bench.add_noise(train, bench.NoiseSpec(0.1, seed=9))
    b = bench.add_noise(train, bench.NoiseSpec(0.1, seed=9))
    assert a.equals(b)
    with pytest.raises(ValueError):
        bench.NoiseSpec(-0.1)


# -- registry + IO ----------------------------------------------------------------

def test_generate_benchmark_round_trip(tmp_path):
    splits, metadata = bench.generate_benchmark("ecoli", seed=6, samples=300)
    save_splits(splits, tmp_path, metadata)
    loaded = load_splits(tmp_path)
    for name in splits:
        assert loaded[name].equals(splits[name])
    assert loaded["train"].input_names == ("B", "S", "T", "pH")


def test_csv_round_trip_exact(tmp_path, osc1_splits):
    path = tmp_path / "train.csv"
    save_csv(osc1_splits["train"], path)
    again = load_csv(path, "train")
    assert again.equals(osc1_splits["train"])


def test_problem_specs_parse():
    for name in bench.BENCHMARKS:
        spec = bench.problem_spec(name)
        assert spec.seed_program().param_count == len(spec.input_names)
    with pytest.raises(ValueError):
        bench.problem_spec("osc3")


def test_generate_benchmark_requires_stress_csv():
    with pytest.raises(ValueError, match="stress"):
        bench.generate_benchmark("stress")
