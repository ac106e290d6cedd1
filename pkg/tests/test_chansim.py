import math

import numpy as np
import pytest

from chanfm.chansim import (
    ArrayGeometry,
    ChannelConfig,
    ChannelTensor,
    ScattererScene,
    SimulationError,
    add_noise_at_snr,
    estimation_config,
    generate_activity_dataset,
    generate_prediction_sequences,
    generate_scene,
    ls_estimate,
    ls_estimate_tensor,
    make_estimation_samples,
    make_pilot_matrix,
    max_doppler_hz,
    prediction_config,
    simulate_pilot_observation,
    synthesize_channel,
    path_delays,
    C_LIGHT,
)


def los_only_scene(tx, rx):
    return ScattererScene(
        scatterers=np.zeros((0, 3)),
        tx_position=np.asarray(tx, float),
        rx_origin=np.asarray(rx, float),
        rx_yaw_rad=0.0,
        path_gains=np.array([1.0 + 0.0j]),
        reflection_order=np.array([0]),
    )


# -- scenes -------------------------------------------------------------------


def test_scene_has_250_scatterers_plus_los():
    scene = generate_scene(0, 250)
    assert scene.scatterers.shape == (250, 3)
    assert scene.num_paths == 251
    assert scene.reflection_order[0] == 0 and np.all(scene.reflection_order[1:] == 1)


def test_scene_determinism():
    a = generate_scene(42, 17)
    b = generate_scene(42, 17)
    assert np.array_equal(a.scatterers, b.scatterers)
    assert np.array_equal(a.path_gains, b.path_gains)


def test_scene_preconditions():
    with pytest.raises(SimulationError):
        generate_scene(0, 0)
    with pytest.raises(SimulationError):
        generate_scene(0, 5, bounds=((0, 0), (0, 1), (0, 1)))


# -- channel synthesis ----------------------------------------------------------


def test_los_zero_delay_channel_is_flat_and_matches_steering():
    # transmitter collocated with the receiver origin: zero delay, direction
    # falls back to +x, so a half-wavelength receive line along x alternates sign
    scene = los_only_scene([0, 0, 0], [0, 0, 0])
    cfg = ChannelConfig(n_slots=3, n_subcarriers=5, velocity_mps=0.0,
                        array=ArrayGeometry(tx_shape=(1,), rx_shape=(4,)))
    h = synthesize_channel(scene, cfg).values
    assert np.allclose(h, h[0:1, :, 0:1], atol=0)
    expected = np.exp(1j * math.pi * np.arange(4))
    assert np.allclose(h[0, :, 0], expected, atol=1e-12)


def test_single_path_unit_magnitude_everywhere():
    scene = los_only_scene([40.0, 10.0, 5.0], [0, 0, 1.5])
    cfg = ChannelConfig(n_slots=4, n_subcarriers=16, velocity_mps=5.0,
                        array=ArrayGeometry(tx_shape=(2,), rx_shape=(4,)))
    h = synthesize_channel(scene, cfg).values
    assert np.allclose(np.abs(h), 1.0, atol=1e-10)


def test_max_doppler_40kmh_24ghz():
    cfg = ChannelConfig(velocity_mps=40.0 / 3.6, carrier_hz=2.4e9)
    assert abs(max_doppler_hz(cfg) - 88.9) < 0.1


def test_measured_doppler_matches_max_for_aligned_motion():
    # LOS arrival along +x while moving along +x: the phase advances at the
    # maximum Doppler rate, recoverable from consecutive slots
    scene = los_only_scene([100.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    cfg = ChannelConfig(n_slots=8, n_subcarriers=4, carrier_hz=2.4e9,
                        velocity_mps=40.0 / 3.6, motion_azimuth_rad=0.0,
                        slot_s=5e-4, array=ArrayGeometry(tx_shape=(1,), rx_shape=(1,)))
    h = synthesize_channel(scene, cfg).values
    step = h[1, 0, 0] / h[0, 0, 0]
    measured = np.angle(step) / (2 * math.pi * cfg.slot_s)
    assert abs(measured - 88.9) < 0.1


def test_frequency_autocorrelation_matches_delay_profile_dft():
    # scatterers placed so every path delay lands on the DFT grid; the circular
    # frequency autocorrelation must then equal the delay power profile DFT
    F = 32
    scs = 120e3
    radii_bins = [3, 7, 12]
    pts = np.array([[0.0, C_LIGHT * k / (2 * F * scs), 0.0] for k in radii_bins])
    gains = np.array([1.0, 0.5 - 0.25j, -0.3 + 0.4j, 0.2 + 0.2j])
    scene = ScattererScene(pts, np.zeros(3), np.zeros(3), 0.0, gains,
                           np.array([0, 1, 1, 1]))
    cfg = ChannelConfig(n_slots=1, n_subcarriers=F, scs_hz=scs, velocity_mps=0.0,
                        array=ArrayGeometry(tx_shape=(1,), rx_shape=(1,)))
    h = synthesize_channel(scene, cfg).values[0, 0, :]

    measured = np.array([(np.roll(h, -d) * np.conj(h)).mean() for d in range(F)])

    # independent brute-force oracle over the path list
    taus = path_delays(scene)
    bins = np.rint(taus * F * scs).astype(int)
    oracle = np.zeros(F, complex)
    for d in range(F):
        for g, k in zip(gains, bins):
            oracle[d] += abs(g) ** 2 * np.exp(-2j * math.pi * d * k / F)
    assert np.max(np.abs(measured - oracle)) < 1e-6


def test_spatial_covariance_hermitian_psd():
    scene = generate_scene(5, 20)
    h = synthesize_channel(scene, estimation_config()).values
    hs = h.transpose(0, 2, 1).reshape(-1, h.shape[1])
    cov = hs.conj().T @ hs / len(hs)
    assert np.allclose(cov, cov.conj().T, atol=1e-8)
    assert np.linalg.eigvalsh(cov).min() > -1e-8


# -- noise ---------------------------------------------------------------------


def test_noise_inf_snr_is_identity():
    scene = generate_scene(1, 4)
    ct = synthesize_channel(scene, estimation_config())
    out = add_noise_at_snr(ct, math.inf, seed=3)
    assert np.array_equal(out.values, ct.values)


@pytest.mark.parametrize("snr_db", [-5.0, 0.0, 10.0, 30.0])
def test_noise_power_calibrated_within_one_percent(snr_db):
    cfg = ChannelConfig(n_slots=10, n_subcarriers=100,
                        array=ArrayGeometry(tx_shape=(10,), rx_shape=(10,)))
    rng = np.random.default_rng(99)
    vals = rng.standard_normal((10, 100, 100)) + 1j * rng.standard_normal((10, 100, 100))
    ct = ChannelTensor(vals, cfg)
    noisy = add_noise_at_snr(ct, snr_db, seed=7)
    ratio = np.mean(np.abs(noisy.values - vals) ** 2) / np.mean(np.abs(vals) ** 2)
    assert abs(ratio / 10 ** (-snr_db / 10) - 1.0) < 0.01


def test_noise_rejects_zero_channel():
    cfg = ChannelConfig(array=ArrayGeometry(tx_shape=(1,), rx_shape=(1,)))
    ct = ChannelTensor(np.zeros((4, 1, 32), complex), cfg)
    with pytest.raises(SimulationError):
        add_noise_at_snr(ct, 10.0, 0)


# -- pilots and least squares ---------------------------------------------------


def test_pilot_matrix_is_qpsk_and_orthogonal():
    x = make_pilot_matrix(4, 64, seed=0)
    assert x.shape == (4, 64)
    assert np.allclose(np.abs(x), 1.0, atol=1e-12)
    # QPSK alphabet: both quadratures are +-1/sqrt(2) scaled to unit magnitude
    assert np.allclose(np.abs(x.real), math.sqrt(0.5), atol=1e-12)
    assert np.allclose(x @ x.conj().T, 64 * np.eye(4), atol=1e-9)


def test_pilot_length_precondition():
    with pytest.raises(SimulationError):
        make_pilot_matrix(4, 3, seed=0)


def test_noiseless_observation_and_ls_recovery():
    scene = generate_scene(2, 6)
    ct = synthesize_channel(scene, estimation_config())
    frame = simulate_pilot_observation(ct, 64, seed=1)
    assert np.array_equal(frame.received, frame.truth @ frame.pilots)
    est = ls_estimate(frame)
    nmse = np.sum(np.abs(est - frame.truth) ** 2) / np.sum(np.abs(frame.truth) ** 2)
    assert nmse < 1e-10


def test_square_pilots_reduce_to_inverse():
    scene = generate_scene(3, 6)
    ct = synthesize_channel(scene, estimation_config())
    frame = simulate_pilot_observation(ct, 4, seed=2)
    est = ls_estimate(frame)
    direct = frame.received @ np.linalg.inv(frame.pilots)
    assert np.allclose(est, direct, atol=1e-10)


def test_ls_nmse_matches_monte_carlo_oracle():
    # orthogonal pilots (X X^H = L I): error = N X^H / L, so
    # E||err||_F^2 = n_rx * n_tx * nv / L and NMSE = that / ||H||_F^2
    scene = generate_scene(8, 6)
    ct = synthesize_channel(scene, estimation_config())
    h = ct.values[0, :, 0].reshape(4, 4)
    L, snr_db = 64, 0.0
    x = make_pilot_matrix(4, L, seed=5)
    nv = float(np.mean(np.abs(h @ x) ** 2)) * 10 ** (-snr_db / 10)
    rng = np.random.default_rng(17)
    trials = 10_000
    noise = (rng.standard_normal((trials, 4, L)) + 1j * rng.standard_normal((trials, 4, L)))
    noise *= math.sqrt(nv / 2)
    proj = x.conj().T @ np.linalg.inv(x @ x.conj().T)
    err = noise @ proj
    mc = float(np.mean(np.sum(np.abs(err) ** 2, axis=(1, 2))) / np.sum(np.abs(h) ** 2))
    analytic = (4 * 4 * nv / L) / float(np.sum(np.abs(h) ** 2))
    assert abs(mc / analytic - 1.0) < 0.05
    # the vectorized dataset path must sit in the same regime
    est = ls_estimate_tensor(ct, L, seed=11, snr_db=snr_db)
    measured = np.sum(np.abs(est.values[0, :, 0] - ct.values[0, :, 0]) ** 2) / np.sum(
        np.abs(ct.values[0, :, 0]) ** 2)
    assert measured < 20 * analytic


# -- datasets -------------------------------------------------------------------


def test_activity_dataset_shapes_and_labels():
    samples = generate_activity_dataset(0, per_class=2)
    assert len(samples) == 12
    assert [s.label for s in samples] == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]
    for s in samples[:3]:
        assert s.amplitude.shape == (3, 114, 2000)
        assert s.amplitude.min() >= 0.0


def test_activity_dataset_paper_scale_arithmetic():
    # the reference train split is 800 samples over 6 classes ~ 134 per class
    assert 6 * 134 == 804


def test_prediction_sequences_shapes_and_split():
    cfg = prediction_config(velocity_mps=40 / 3.6)
    pairs = generate_prediction_sequences(0, 2, cfg)
    hist, fut = pairs[0]
    assert hist.values.shape == (16, 32, 32)
    assert fut.values.shape == (4, 32, 32)
    assert hist.meta.array.n_spatial == 32


def test_prediction_zero_velocity_future_equals_last_history():
    cfg = prediction_config(velocity_mps=0.0)
    (hist, fut), = generate_prediction_sequences(3, 1, cfg)
    assert np.allclose(fut.values, hist.values[-1:], atol=1e-12)


def test_prediction_sequences_deterministic():
    cfg = prediction_config(velocity_mps=25.0)
    a = generate_prediction_sequences(5, 2, cfg)
    b = generate_prediction_sequences(5, 2, cfg)
    assert np.array_equal(a[1][0].values, b[1][0].values)
    assert np.array_equal(a[1][1].values, b[1][1].values)


def test_estimation_samples_deterministic_and_noisy():
    a = make_estimation_samples(0, 2, snr_db=0.0)
    b = make_estimation_samples(0, 2, snr_db=0.0)
    assert np.array_equal(a[0][0].values, b[0][0].values)
    ls, truth = a[0]
    assert ls.values.shape == truth.values.shape == (4, 16, 32)
    assert not np.allclose(ls.values, truth.values)
