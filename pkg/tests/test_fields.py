import json

import numpy as np
import pytest

from pdecl.errors import FormatError, InputError
from pdecl.fields import (DARCY_HIGH, DARCY_LOW, TEST_SEED_OFFSET, GrfSpec, build_dataset, darcy_latent_field,
                          generate_field, instance_seeds, load_field, make_beta, read_dataset,
                          sample_burgers_ic, sample_darcy_coefficients, sample_grf_1d, save_field,
                          write_dataset)
from pdecl.operators import ParameterField


def test_grf_long_length_scale_is_flat():
    f = sample_grf_1d(GrfSpec(1, (100,), length_scale=1e3, seed=2))
    assert np.ptp(f.values) < 1e-2


def test_grf_reproducible():
    a = sample_grf_1d(GrfSpec(1, (64,), seed=9))
    b = sample_grf_1d(GrfSpec(1, (64,), seed=9))
    np.testing.assert_array_equal(a.values, b.values)


def test_grf_unit_variance():
    vals = np.stack([sample_grf_1d(GrfSpec(1, (40,), seed=s)).values for s in range(200)])
    assert abs(vals.var() - 1.0) < 0.15


def test_grf_correlation_matches_kernel():
    vals = np.stack([sample_grf_1d(GrfSpec(1, (51,), seed=s)).values for s in range(400)])
    lag = 5  # dx = 0.1, l = 0.2
    c = np.mean(vals[:, :-lag] * vals[:, lag:])
    assert abs(c - np.exp(-0.1 ** 2 / (2 * 0.2 ** 2))) < 0.08


def _field(v):
    return ParameterField("latent", (np.linspace(0, 1, len(v)),), np.asarray(v, float))


def test_make_beta_zero():
    np.testing.assert_array_equal(make_beta(_field([0.0, 0.0])).values, [1.0, 1.0])


def test_make_beta_formula():
    np.testing.assert_array_equal(make_beta(_field([-2.0, 0.0, 3.0])).values, [1.0, 3.0, 6.0])


@pytest.mark.parametrize("seed", range(5))
def test_sampled_beta_minimum_is_one(seed):
    assert generate_field("convection", seed, (50,)).values.min() == 1.0


def test_darcy_two_values():
    f = sample_darcy_coefficients(GrfSpec(2, (21, 21), seed=1))
    assert set(np.unique(f.values)) <= {DARCY_HIGH, DARCY_LOW}


def test_darcy_negation_swaps_regions():
    spec = GrfSpec(2, (21, 21), seed=4)
    lat = darcy_latent_field(spec)
    a = sample_darcy_coefficients(spec, latent=lat).values
    b = sample_darcy_coefficients(spec, latent=-lat).values
    nonzero = lat != 0
    assert np.all((a == DARCY_HIGH)[nonzero] == (b == DARCY_LOW)[nonzero])


def test_darcy_high_fraction():
    frac = np.mean([np.mean(sample_darcy_coefficients(GrfSpec(2, (21, 21), seed=s)).values == DARCY_HIGH)
                    for s in range(200)])
    assert abs(frac - 0.5) < 0.05


def test_burgers_periodic_and_reproducible():
    f = sample_burgers_ic(GrfSpec(1, (64,), seed=3))
    assert abs(f(np.array([0.0]))[0] - f(np.array([1.0]))[0]) < 1e-12
    np.testing.assert_array_equal(f.values, sample_burgers_ic(GrfSpec(1, (64,), seed=3)).values)


def test_burgers_zero_mean():
    means = np.array([sample_burgers_ic(GrfSpec(1, (64,), seed=s)).values.mean() for s in range(200)])
    stds = np.array([sample_burgers_ic(GrfSpec(1, (64,), seed=s)).values.std() for s in range(200)])
    assert abs(means.mean()) < 3 * stds.mean() / np.sqrt(200)


def test_dataset_seed_counts():
    seeds = instance_seeds(1000, 0, "train") + instance_seeds(50, 0, "test")
    assert len(set(seeds)) == 1050
    assert min(instance_seeds(50, 0, "test")) == TEST_SEED_OFFSET


def test_singleton_dataset():
    ds = build_dataset("burgers", 1, 5, "train", (32,))
    assert len(ds) == 1 and ds.seeds == [5]


def test_write_dataset_reproducible(tmp_path):
    for d in ("a", "b"):
        write_dataset(build_dataset("convection", 5, 7, "train", (32,)), tmp_path / d)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["instances"]) == 5
    for i in range(5):
        name = f"train_{i:05d}.fld"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_read_dataset_roundtrip(tmp_path):
    tr = build_dataset("darcy", 2, 0, "train", (11, 11))
    te = build_dataset("darcy", 3, 0, "test", (11, 11))
    write_dataset([tr, te], tmp_path)
    back = read_dataset(tmp_path, "test")
    assert back.seeds == te.seeds
    for a, b in zip(back.parameter_fields, te.parameter_fields):
        np.testing.assert_array_equal(a.values, b.values)


def test_field_file_truncated(tmp_path):
    f = generate_field("burgers", 0, (16,))
    save_field(tmp_path / "x.fld", "burgers", f, "train")
    data = (tmp_path / "x.fld").read_bytes()
    (tmp_path / "x.fld").write_bytes(data[:-5])
    with pytest.raises(FormatError):
        load_field(tmp_path / "x.fld")


def test_unknown_problem():
    with pytest.raises(InputError):
        generate_field("heat", 0)


def test_missing_manifest(tmp_path):
    with pytest.raises(InputError):
        read_dataset(tmp_path, "train")
