import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import binom

from sramage.agesim import (NO_DRIFT, STRONG_DRIFT, AgeingProfile, CellPopulation, aged_skew, generate_fleet,
                            make_profile, sample_population, simulate_device, startup_probability)
from sramage.bitcore import compute_instability, compute_p1
from sramage.errors import InvalidArgumentError
from sramage.datasetio import load_manifest, ingest
from sramage.metrics import spearman_r


def test_pristine_device_is_balanced():
    pop = sample_population(8192, 1)
    dev = simulate_device(pop, AgeingProfile(np.zeros(8192)), 0.0, 50, seed=2)
    frac = dev.ones_per_sample() / dev.num_bits
    assert abs(frac.mean() - 0.5) < 0.02


def test_zero_drift_ignores_usage():
    pop = sample_population(1024, 3)
    prof = make_profile(1024, 4, drift_rate=0.0)
    a = simulate_device(pop, prof, 0.0, 20, seed=5)
    b = simulate_device(pop, prof, 17.0, 20, seed=5)
    assert np.array_equal(a.data, b.data)


def test_saturated_drift_pins_cells():
    pop = sample_population(512, 6)
    prof = AgeingProfile(np.ones(512), drift_rate=10.0)
    p1 = compute_p1(simulate_device(pop, prof, 100.0, 30, seed=7))
    assert (p1.values == 1.0).all()
    assert (compute_instability(p1).values == 0.0).all()


def test_p1_within_binomial_interval():
    n, b = 1000, 4096
    pop = sample_population(b, 8, noise_scale=1.5)
    prof = make_profile(b, 9, drift_rate=0.2, segment_bits=16, address_gradient=-0.1,
                        low_freq_components=[(3, 0.05)])
    p = startup_probability(pop, prof, 6.0)
    assert np.allclose(p, expit(aged_skew(pop, prof, 6.0) / 1.5))
    counts = compute_p1(simulate_device(pop, prof, 6.0, n, seed=10)).counts
    lo, hi = binom.interval(1 - 1e-7, n, p)
    assert ((counts >= lo) & (counts <= hi)).all()


def _skewed_fixture():
    pop = sample_population(8192, 11, stable_scale=20.0)
    prof = make_profile(8192, 12, **STRONG_DRIFT)
    z = np.abs(aged_skew(pop, prof, 9.0)) / pop.noise_scale
    inst = compute_instability(compute_p1(simulate_device(pop, prof, 9.0, 1000, seed=13))).values
    return z, inst


@pytest.mark.xfail(strict=True, reason="logistic link leaves expit(-6) ~ 2.5e-3 minority odds per sample, "
                                       "so 1000 samples flip a threshold cell with probability ~0.92")
def test_skew_above_six_is_always_stable():
    z, inst = _skewed_fixture()
    assert (inst[z > 6] == 0).all()


def test_strongly_skewed_cells_are_stable():
    z, inst = _skewed_fixture()
    n = 1000
    # union bound over all cells: expected number of flipping cells below 1e-6
    cutoff = np.log(n * z.size / 1e-6)
    far = z > cutoff
    assert far.sum() > 100
    assert (inst[far] == 0).all()
    # between 6 and the cutoff the flip rate follows the model
    mid = (z > 6) & ~far
    expected_zero = np.exp(n * np.log1p(-expit(-z[mid]))).sum()
    assert abs((inst[mid] == 0).sum() - expected_zero) < 5 * np.sqrt(expected_zero) + 5


def test_lower_half_footprint_lowers_instability():
    b = 8192
    pop = sample_population(b, 14)
    prof = make_profile(b, 15, drift_rate=0.5, used_fraction=0.5, stress_density=1.0)
    inst = compute_instability(compute_p1(simulate_device(pop, prof, 18.0, 200, seed=16))).values
    assert inst[: b // 2].mean() < inst[b // 2:].mean()


def test_strong_drift_orders_pct_ones():
    fleet = generate_fleet(20, ("uniform", 0, 18), profile_prior=STRONG_DRIFT, seed=17, num_samples=20,
                           sram_bytes=1024)
    pct = [d.ones_per_sample().mean() / d.num_bits for d in fleet.devices]
    assert spearman_r([d.usage_months for d in fleet.devices], pct) > 0.9


def test_fleet_manifest_and_files(tmp_path):
    fleet = generate_fleet(20, ("uniform", 0, 18), seed=7, num_samples=3, sram_bytes=16, out_dir=tmp_path)
    assert len(set(fleet.manifest.device_ids)) == 20
    loaded = ingest(load_manifest(tmp_path / "manifest.json"))
    for a, b in zip(loaded, fleet.devices):
        assert a.device_id == b.device_id and np.array_equal(a.data, b.data)
    again = generate_fleet(20, ("uniform", 0, 18), seed=7, num_samples=3, sram_bytes=16)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(fleet.devices, again.devices))


def test_fleet_per_device_profiles_differ():
    fleet = generate_fleet(2, [5.0, 5.0 + 1e-9], profile_prior=STRONG_DRIFT, seed=1, num_samples=5,
                           sram_bytes=64, shared_profile=False)
    assert not np.array_equal(fleet.devices[0].data, fleet.devices[1].data)


def test_errors():
    with pytest.raises(InvalidArgumentError):
        AgeingProfile(np.array([0, 2]))
    with pytest.raises(InvalidArgumentError):
        CellPopulation(np.zeros(8), noise_scale=0)
    with pytest.raises(InvalidArgumentError):
        simulate_device(sample_population(8, 0), AgeingProfile(np.zeros(8)), -1.0, 2, 0)
    with pytest.raises(InvalidArgumentError):
        generate_fleet(3, [4.0, 4.0, 4.0], seed=0, num_samples=2, sram_bytes=8)
    with pytest.raises(InvalidArgumentError):
        aged_skew(sample_population(8, 0), AgeingProfile(np.zeros(16)), 1.0)
    assert NO_DRIFT["drift_rate"] == 0.0
