import math

import numpy as np
import pytest

from megloc import (
    InvalidArgumentError,
    NOISELESS,
    SensorArray,
    SingularityError,
    SourceActivation,
    SourceSpace,
    build_sensor_helmet,
    build_synthetic_source_space,
    compute_lead_field,
    measure_snr,
    perturb_lead_field,
    simulate,
    topography,
)


def analytic_entry(sensor_pos, sensor_ori, source_pos, source_ori):
    """Independent scalar evaluation of the dipole field formula."""
    d = np.asarray(sensor_pos, float) - np.asarray(source_pos, float)
    return float(np.dot(np.cross(source_ori, d), sensor_ori) / np.linalg.norm(d) ** 3)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# compute_lead_field
# ---------------------------------------------------------------------------

def test_lead_field_matches_scalar_formula(small_sensors, small_space, small_lead_field):
    for m in range(0, small_sensors.n_sensors, 5):
        for p in range(0, small_space.n_points, 7):
            expected = analytic_entry(
                small_sensors.positions[m],
                small_sensors.orientations[m],
                small_space.positions[p],
                small_space.orientations[p],
            )
            assert small_lead_field.entries[m, p] == pytest.approx(expected, rel=1e-12)


def test_inverse_cube_distance_scaling():
    # Two sensors on the same ray from the source, at d and 2d.
    source_pos = np.array([0.0, 0.0, 0.04])
    source_ori = np.array([1.0, 0.0, 0.0])
    ray = unit([0.0, 1.0, 1.0])
    d = 0.05
    near = source_pos + d * ray
    far = source_pos + 2 * d * ray
    sensor_ori = unit([1.0, 1.0, -1.0])
    sensors = SensorArray(
        positions=np.vstack([near, far]), orientations=np.vstack([sensor_ori, sensor_ori])
    )
    space = SourceSpace(
        positions=np.vstack([source_pos, [0.0, 0.01, 0.01]]),
        orientations=np.vstack([source_ori, [0.0, 1.0, 0.0]]),
    )
    lf = compute_lead_field(sensors, space)
    a_near = analytic_entry(near, sensor_ori, source_pos, source_ori)
    a_far = analytic_entry(far, sensor_ori, source_pos, source_ori)
    assert lf.entries[0, 0] == pytest.approx(a_near, rel=1e-12)
    assert lf.entries[1, 0] == pytest.approx(a_far, rel=1e-12)
    # Numerator q x (r - p) grows linearly with distance, so the full entry
    # falls by 1/4; freezing the numerator leaves the pure 1/d^3 ratio of 8.
    assert a_near / a_far == pytest.approx(4.0, rel=1e-10)
    numerator = np.dot(np.cross(source_ori, near - source_pos), sensor_ori)
    fixed_numerator_ratio = (numerator / d**3) / (numerator / (2 * d) ** 3)
    assert fixed_numerator_ratio == pytest.approx(8.0, rel=1e-12)


def test_orientation_magnitude_is_irrelevant_after_normalization():
    positions = np.array([[0.0, 0.0, 0.05], [0.02, 0.0, 0.03]])
    raw = np.array([[0.3, 0.4, 0.0], [0.0, 0.5, 0.1]])
    space_a = SourceSpace(positions=positions, orientations=np.array([unit(v) for v in raw]))
    space_b = SourceSpace(positions=positions, orientations=np.array([unit(2 * v) for v in raw]))
    sensors = build_sensor_helmet(8, 0.12)
    lf_a = compute_lead_field(sensors, space_a)
    lf_b = compute_lead_field(sensors, space_b)
    assert np.array_equal(lf_a.entries, lf_b.entries)


def test_parallel_orientation_gives_zero_entry():
    source_pos = np.array([0.0, 0.0, 0.04])
    direction = unit([0.0, 1.0, 1.0])
    sensor_on_axis = source_pos + 0.1 * direction
    sensor_off_axis = np.array([0.09, 0.0, 0.04])
    sensors = SensorArray(
        positions=np.vstack([sensor_on_axis, sensor_off_axis]),
        orientations=np.vstack([unit([1, 0, 0]), unit([0, 0, 1])]),
    )
    space = SourceSpace(
        positions=np.vstack([source_pos, [0.0, 0.01, 0.01]]),
        orientations=np.vstack([direction, [1.0, 0.0, 0.0]]),
    )
    lf = compute_lead_field(sensors, space)
    assert lf.entries[0, 0] == 0.0


def test_sensor_inside_source_shell_rejected():
    sensors = build_sensor_helmet(8, 0.05)
    space = build_synthetic_source_space(10, 0.08, seed=0)
    with pytest.raises(InvalidArgumentError):
        compute_lead_field(sensors, space)


def test_coincident_sensor_and_source_is_singular():
    space = build_synthetic_source_space(4, 0.08, seed=0)
    positions = np.vstack([space.positions[0], [0.0, 0.0, 0.2]])
    sensors = SensorArray(
        positions=positions, orientations=np.vstack([unit([1, 0, 0]), unit([0, 0, 1])])
    )
    with pytest.raises((SingularityError, InvalidArgumentError)):
        compute_lead_field(sensors, space)


# ---------------------------------------------------------------------------
# topography
# ---------------------------------------------------------------------------

def test_topography_returns_requested_column(small_lead_field):
    assert np.array_equal(topography(small_lead_field, 0), small_lead_field.entries[:, 0])
    for p in range(small_lead_field.n_points):
        assert np.linalg.norm(topography(small_lead_field, p)) > 0


def test_topography_matches_independent_recomputation(small_sensors, small_space, small_lead_field):
    p = 13
    expected = np.array(
        [
            analytic_entry(
                small_sensors.positions[m],
                small_sensors.orientations[m],
                small_space.positions[p],
                small_space.orientations[p],
            )
            for m in range(small_sensors.n_sensors)
        ]
    )
    np.testing.assert_allclose(topography(small_lead_field, p), expected, rtol=1e-12)


def test_topography_index_out_of_range(small_lead_field):
    with pytest.raises(InvalidArgumentError):
        topography(small_lead_field, small_lead_field.n_points)


# ---------------------------------------------------------------------------
# measure_snr
# ---------------------------------------------------------------------------

def test_snr_of_equal_matrices_is_zero_db(rng):
    y = rng.standard_normal((4, 5))
    assert measure_snr(y, y) == pytest.approx(0.0, abs=1e-12)


def test_snr_amplitude_factor_ten_is_twenty_db(rng):
    noise = rng.standard_normal((4, 5))
    signal = noise * 10.0
    assert measure_snr(signal, noise) == pytest.approx(20.0, abs=1e-12)


def test_snr_matches_elementwise_oracle(rng):
    signal = rng.standard_normal((3, 4))
    noise = rng.standard_normal((3, 4))
    num = math.sqrt(sum(signal[i, j] ** 2 for i in range(3) for j in range(4)))
    den = math.sqrt(sum(noise[i, j] ** 2 for i in range(3) for j in range(4)))
    expected = 20.0 * math.log10(num / den)
    assert measure_snr(signal, noise) == pytest.approx(expected, abs=1e-12)


def test_snr_rejects_zero_noise():
    with pytest.raises(InvalidArgumentError):
        measure_snr(np.ones((2, 2)), np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_noiseless_single_source_columns_equal_topography(small_lead_field):
    activation = SourceActivation(indices=(5,), timecourses=np.ones((1, 8)))
    rec = simulate(small_lead_field, activation, NOISELESS, seed=0)
    expected = topography(small_lead_field, 5)
    for t in range(8):
        np.testing.assert_array_equal(rec.measurements[:, t], expected)
    assert np.all(rec.noise == 0.0)


def test_noiseless_two_sources_match_dense_product_oracle(small_lead_field, rng):
    tc = rng.standard_normal((2, 16))
    activation = SourceActivation(indices=(3, 11), timecourses=tc)
    rec = simulate(small_lead_field, activation, NOISELESS, seed=0)
    m, n = rec.measurements.shape
    expected = np.empty((m, n))
    for i in range(m):
        for t in range(n):
            expected[i, t] = (
                small_lead_field.entries[i, 3] * tc[0, t]
                + small_lead_field.entries[i, 11] * tc[1, t]
            )
    np.testing.assert_allclose(rec.measurements, expected, rtol=1e-12)


def test_zero_db_equalizes_frobenius_norms(small_lead_field, rng):
    activation = SourceActivation(indices=(2, 7), timecourses=rng.standard_normal((2, 16)))
    rec = simulate(small_lead_field, activation, 0.0, seed=4)
    assert np.linalg.norm(rec.signal) == pytest.approx(np.linalg.norm(rec.noise), rel=1e-10)


@pytest.mark.parametrize("snr_db", [-15.0, -10.0, 0.0, 10.0, 20.0])
def test_snr_calibration_is_exact(small_lead_field, snr_db):
    activation = SourceActivation(indices=(1,), timecourses=np.ones((1, 16)))
    for seed in range(5):
        rec = simulate(small_lead_field, activation, snr_db, seed=seed)
        assert measure_snr(rec.signal, rec.noise) == pytest.approx(snr_db, abs=1e-9)


def test_simulate_rejects_zero_signal_with_finite_snr(small_lead_field):
    activation = SourceActivation(indices=(1,), timecourses=np.zeros((1, 4)))
    with pytest.raises(InvalidArgumentError):
        simulate(small_lead_field, activation, 10.0, seed=0)


def test_simulate_rejects_out_of_range_index(small_lead_field):
    activation = SourceActivation(
        indices=(small_lead_field.n_points,), timecourses=np.ones((1, 4))
    )
    with pytest.raises(InvalidArgumentError):
        simulate(small_lead_field, activation, NOISELESS, seed=0)


def test_simulation_linearity(small_lead_field, rng):
    tc = rng.standard_normal((2, 16))
    base = simulate(
        small_lead_field, SourceActivation(indices=(4, 9), timecourses=tc), NOISELESS, 0
    )
    scaled = simulate(
        small_lead_field, SourceActivation(indices=(4, 9), timecourses=3.5 * tc), NOISELESS, 0
    )
    np.testing.assert_allclose(scaled.measurements, 3.5 * base.measurements, rtol=1e-12)


def test_simulation_superposition(small_lead_field, rng):
    tc = rng.standard_normal((2, 16))
    both = simulate(
        small_lead_field, SourceActivation(indices=(4, 9), timecourses=tc), NOISELESS, 0
    )
    only_i = simulate(
        small_lead_field, SourceActivation(indices=(4,), timecourses=tc[:1]), NOISELESS, 0
    )
    only_j = simulate(
        small_lead_field, SourceActivation(indices=(9,), timecourses=tc[1:]), NOISELESS, 0
    )
    np.testing.assert_allclose(
        both.measurements, only_i.measurements + only_j.measurements, rtol=1e-12, atol=1e-15
    )


def test_simulation_reproducibility(small_lead_field, rng):
    tc = rng.standard_normal((1, 16))
    activation = SourceActivation(indices=(6,), timecourses=tc)
    a = simulate(small_lead_field, activation, 5.0, seed=77)
    b = simulate(small_lead_field, activation, 5.0, seed=77)
    assert np.array_equal(a.measurements, b.measurements)
    assert np.array_equal(a.noise, b.noise)


# ---------------------------------------------------------------------------
# perturb_lead_field
# ---------------------------------------------------------------------------

def test_zero_perturbation_is_identity(small_lead_field):
    out = perturb_lead_field(small_lead_field, 0.0, seed=5)
    assert np.array_equal(out.entries, small_lead_field.entries)


def test_perturbation_norm_is_exact(small_lead_field):
    for seed in range(5):
        out = perturb_lead_field(small_lead_field, 0.20, seed=seed)
        ratio = np.linalg.norm(out.entries - small_lead_field.entries) / np.linalg.norm(
            small_lead_field.entries
        )
        assert ratio == pytest.approx(0.20, abs=1e-12)


def test_perturbation_seeds_differ_norms_match(small_lead_field):
    a = perturb_lead_field(small_lead_field, 0.1, seed=1)
    b = perturb_lead_field(small_lead_field, 0.1, seed=2)
    assert not np.array_equal(a.entries, b.entries)
    na = np.linalg.norm(a.entries - small_lead_field.entries)
    nb = np.linalg.norm(b.entries - small_lead_field.entries)
    assert na == pytest.approx(nb, rel=1e-12)


def test_negative_rho_rejected(small_lead_field):
    with pytest.raises(InvalidArgumentError):
        perturb_lead_field(small_lead_field, -0.1, seed=0)
