"""Deterministic synthetic generation of channel tensors and task datasets.

A geometric single-bounce multipath model stands in for external channel
simulators at desk scale: a scene holds a transmitter, a receiver array and
point scatterers; the channel tensor over (slot, spatial element,
subcarrier) is the sum over propagation paths of a complex gain, a Doppler
phasor, a delay phasor across subcarriers, and the array steering pattern.

Every generator is a pure function of (seed, config): repeated calls are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import hadamard

C_LIGHT = 299792458.0


class SimulationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Geometry and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna layout at both link ends.

    Shapes are (n,) for linear arrays and (rows, cols) for planar arrays.
    The spatial axis of a channel tensor enumerates, outermost first:
    polarization (when dual_pol), receive element, transmit element.
    """

    tx_shape: tuple = (4,)
    rx_shape: tuple = (4,)
    spacing_wl: float = 0.5
    dual_pol: bool = False

    @property
    def n_tx(self) -> int:
        return int(np.prod(self.tx_shape))

    @property
    def n_rx(self) -> int:
        return int(np.prod(self.rx_shape))

    @property
    def n_spatial(self) -> int:
        return self.n_tx * self.n_rx * (2 if self.dual_pol else 1)

    def validate(self):
        if len(self.tx_shape) not in (1, 2) or len(self.rx_shape) not in (1, 2):
            raise SimulationError("array shapes must be linear (n,) or planar (rows, cols)")
        if min(self.tx_shape) < 1 or min(self.rx_shape) < 1:
            raise SimulationError("array element counts must be >= 1")
        if self.spacing_wl <= 0:
            raise SimulationError("element spacing must be positive")


@dataclass(frozen=True)
class ChannelConfig:
    n_slots: int = 4
    n_subcarriers: int = 32
    carrier_hz: float = 2.4e9
    scs_hz: float = 120e3
    slot_s: float = 5e-4
    velocity_mps: float = 0.0
    motion_azimuth_rad: float = 0.0
    array: ArrayGeometry = field(default_factory=ArrayGeometry)
    snr_db: float | None = None
    seed: int | None = None

    def validate(self):
        if self.n_slots < 1 or self.n_subcarriers < 1:
            raise SimulationError("slot and subcarrier counts must be >= 1")
        if self.carrier_hz <= 0 or self.scs_hz <= 0 or self.slot_s <= 0:
            raise SimulationError("carrier, subcarrier spacing and slot duration must be positive")
        if self.velocity_mps < 0:
            raise SimulationError("velocity must be nonnegative")
        self.array.validate()


@dataclass
class ChannelTensor:
    """Complex channel H[slot, spatial element, subcarrier] plus its metadata."""

    values: np.ndarray
    meta: ChannelConfig

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or min(v.shape) < 1:
            raise SimulationError(f"channel tensor must be [T,S,F] with all axes >= 1, got {v.shape}")
        if v.shape[1] != self.meta.array.n_spatial:
            raise SimulationError(
                f"spatial axis {v.shape[1]} != array spatial size {self.meta.array.n_spatial}"
            )
        self.meta.validate()

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass
class ScattererScene:
    """Point scatterers plus link endpoints; path 0 is line of sight."""

    scatterers: np.ndarray          # [P, 3] meters
    tx_position: np.ndarray         # [3]
    rx_origin: np.ndarray           # [3]
    rx_yaw_rad: float
    path_gains: np.ndarray          # [P+1] complex, index 0 = LOS
    reflection_order: np.ndarray    # [P+1] int, 0 or 1

    def __post_init__(self):
        if not (np.all(np.isfinite(self.scatterers))
                and np.all(np.isfinite(self.tx_position))
                and np.all(np.isfinite(self.rx_origin))
                and np.all(np.isfinite(self.path_gains.view(np.float64)))):
            raise SimulationError("scene contains non-finite coordinates or gains")
        if len(self.path_gains) < 1:
            raise SimulationError("scene must contain at least one path")
        if not np.all(np.isin(self.reflection_order, (0, 1))):
            raise SimulationError("reflection order must be 0 (LOS) or 1 (single bounce)")

    @property
    def num_paths(self) -> int:
        return len(self.path_gains)


@dataclass
class PilotFrame:
    """Known transmitted pilots and the observed receive matrix."""

    pilots: np.ndarray      # X [n_tx, L] unit-magnitude QPSK
    received: np.ndarray    # Y [n_rx, L]
    noise_var: float
    truth: np.ndarray       # H [n_rx, n_tx] used to generate Y


@dataclass
class ActivitySample:
    amplitude: np.ndarray   # [links, subcarriers, time], nonnegative
    label: int

    def __post_init__(self):
        if self.amplitude.min() < 0:
            raise SimulationError("activity amplitudes must be nonnegative")
        if not 0 <= self.label < 6:
            raise SimulationError("activity label must lie in 0..5")


DEFAULT_BOUNDS = ((-30.0, 30.0), (-30.0, 30.0), (0.0, 15.0))


# ---------------------------------------------------------------------------
# Scene generation and channel synthesis
# ---------------------------------------------------------------------------


def generate_scene(seed: int, num_scatterers: int, bounds=DEFAULT_BOUNDS,
                   scatter_gain: float = 0.5) -> ScattererScene:
    """Scatterers uniform in a box; LOS plus one first-order path per scatterer."""
    if num_scatterers < 1:
        raise SimulationError(f"num_scatterers must be >= 1, got {num_scatterers}")
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    if lo.shape != (3,) or np.any(hi <= lo):
        raise SimulationError(f"degenerate bounds: {bounds}")
    rng = np.random.default_rng(seed)
    pts = lo + (hi - lo) * rng.random((num_scatterers, 3))
    span = hi - lo
    tx = lo + span * np.array([0.15, 0.15, 0.80])
    rx = lo + span * np.array([0.65, 0.60, 0.10])
    g = rng.standard_normal(num_scatterers) + 1j * rng.standard_normal(num_scatterers)
    g *= scatter_gain / math.sqrt(2.0 * num_scatterers)
    gains = np.concatenate([[1.0 + 0.0j], g])
    orders = np.concatenate([[0], np.ones(num_scatterers, dtype=np.int64)])
    return ScattererScene(pts, tx, rx, 0.0, gains, orders)


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0])
    return v / n


def _element_positions(shape: tuple, spacing_m: float, origin: np.ndarray, yaw: float) -> np.ndarray:
    """Element coordinates: linear along the yawed horizontal axis, planar in (horizontal, z)."""
    e1 = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    e2 = np.array([0.0, 0.0, 1.0])
    if len(shape) == 1:
        idx = np.arange(shape[0])[:, None]
        return origin + spacing_m * idx * e1
    rows, cols = shape
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return origin + spacing_m * (c.reshape(-1, 1) * e1 + r.reshape(-1, 1) * e2)


def _steering(positions: np.ndarray, origin: np.ndarray, directions: np.ndarray,
              wavelength: float) -> np.ndarray:
    """Per-path unit-magnitude steering: a[p, elem] = exp(+j 2pi/lambda (r - origin).u_p)."""
    rel = positions - origin
    phase = (2.0 * math.pi / wavelength) * (directions @ rel.T)
    return np.exp(1j * phase)


def path_delays(scene: ScattererScene) -> np.ndarray:
    """Propagation delay per path in seconds (LOS first)."""
    los = float(np.linalg.norm(scene.tx_position - scene.rx_origin))
    d_tx = np.linalg.norm(scene.scatterers - scene.tx_position, axis=1)
    d_rx = np.linalg.norm(scene.scatterers - scene.rx_origin, axis=1)
    return np.concatenate([[los], d_tx + d_rx]) / C_LIGHT


def synthesize_channel(scene: ScattererScene, cfg: ChannelConfig) -> ChannelTensor:
    """H[t,s,f] = sum_p gain_p * doppler_p(t) * delay_p(f) * steering_p[s]."""
    cfg.validate()
    wavelength = C_LIGHT / cfg.carrier_hz
    arr = cfg.array
    spacing_m = arr.spacing_wl * wavelength

    taus = path_delays(scene)
    # arrival directions at the receiver / departure directions at the transmitter
    arr_pts = np.concatenate([[scene.tx_position], scene.scatterers])
    dep_pts = np.concatenate([[scene.rx_origin], scene.scatterers])
    u_rx = np.stack([_unit(p - scene.rx_origin) for p in arr_pts])
    u_tx = np.stack([_unit(p - scene.tx_position) for p in dep_pts])

    rx_pos = _element_positions(arr.rx_shape, spacing_m, scene.rx_origin, scene.rx_yaw_rad)
    tx_pos = _element_positions(arr.tx_shape, spacing_m, scene.tx_position, 0.0)
    a_rx = _steering(rx_pos, scene.rx_origin, u_rx, wavelength)      # [P, n_rx]
    a_tx = _steering(tx_pos, scene.tx_position, u_tx, wavelength)    # [P, n_tx]
    spatial = np.einsum("pj,pi->pji", a_rx, a_tx).reshape(scene.num_paths, -1)
    if arr.dual_pol:
        # second polarization port: same pattern with a fixed quadrature offset
        spatial = np.concatenate([spatial, 1j * spatial], axis=1)

    motion = np.array([math.cos(cfg.motion_azimuth_rad), math.sin(cfg.motion_azimuth_rad), 0.0])
    doppler_hz = (cfg.velocity_mps * cfg.carrier_hz / C_LIGHT) * (u_rx @ motion)

    t = np.arange(cfg.n_slots) * cfg.slot_s
    f = np.arange(cfg.n_subcarriers) * cfg.scs_hz
    phase_t = np.exp(2j * math.pi * np.outer(doppler_hz, t))         # [P, T]
    phase_f = np.exp(-2j * math.pi * np.outer(taus, f))              # [P, F]
    weighted = phase_t * scene.path_gains[:, None]
    h = np.einsum("pt,ps,pf->tsf", weighted, spatial, phase_f)
    return ChannelTensor(h, cfg)


def max_doppler_hz(cfg: ChannelConfig) -> float:
    return cfg.velocity_mps * cfg.carrier_hz / C_LIGHT


def add_noise_at_snr(ct: ChannelTensor, snr_db: float, seed: int) -> ChannelTensor:
    """Circular complex gaussian noise with power = signal power * 10^(-snr/10)."""
    h = ct.values
    sig = float(np.mean(np.abs(h) ** 2))
    if sig == 0.0:
        raise SimulationError("all-zero channel: SNR undefined")
    if math.isinf(snr_db):
        return ChannelTensor(h.copy(), replace(ct.meta, snr_db=snr_db, seed=seed))
    rng = np.random.default_rng(seed)
    npow = sig * 10.0 ** (-snr_db / 10.0)
    noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    noise *= math.sqrt(npow / 2.0)
    return ChannelTensor(h + noise, replace(ct.meta, snr_db=snr_db, seed=seed))


# ---------------------------------------------------------------------------
# Pilots and least-squares estimation
# ---------------------------------------------------------------------------


def make_pilot_matrix(n_tx: int, pilot_len: int, seed: int) -> np.ndarray:
    """Hadamard-masked QPSK pilots: rows are orthogonal when L is a multiple of n_tx."""
    if pilot_len < n_tx:
        raise SimulationError(f"pilot length {pilot_len} < transmit antennas {n_tx}")
    if n_tx & (n_tx - 1):
        raise SimulationError(f"pilot construction needs a power-of-two antenna count, got {n_tx}")
    rng = np.random.default_rng(seed)
    qpsk = np.exp(1j * (math.pi / 4.0 + math.pi / 2.0 * rng.integers(0, 4, pilot_len)))
    walsh = hadamard(n_tx).astype(np.float64)
    mask = walsh[:, np.arange(pilot_len) % n_tx]
    return mask * qpsk[None, :]


def _mimo_slice(ct: ChannelTensor, slot: int, subcarrier: int) -> np.ndarray:
    arr = ct.meta.array
    if arr.dual_pol:
        raise SimulationError("pilot observation supports single-polarization arrays only")
    return ct.values[slot, :, subcarrier].reshape(arr.n_rx, arr.n_tx)


def simulate_pilot_observation(ct: ChannelTensor, pilot_len: int, seed: int,
                               snr_db: float = math.inf, slot: int = 0,
                               subcarrier: int = 0) -> PilotFrame:
    """Y = H X + N for one (slot, subcarrier) slice; deterministic in seed."""
    h = _mimo_slice(ct, slot, subcarrier)
    x = make_pilot_matrix(ct.meta.array.n_tx, pilot_len, seed)
    y0 = h @ x
    if math.isinf(snr_db):
        return PilotFrame(x, y0, 0.0, h)
    rng = np.random.default_rng(seed + 1)
    nv = float(np.mean(np.abs(y0) ** 2)) * 10.0 ** (-snr_db / 10.0)
    noise = (rng.standard_normal(y0.shape) + 1j * rng.standard_normal(y0.shape))
    noise *= math.sqrt(nv / 2.0)
    return PilotFrame(x, y0 + noise, nv, h)


def ls_estimate(frame: PilotFrame) -> np.ndarray:
    """Least-squares channel estimate Y X^H (X X^H)^-1."""
    x, y = frame.pilots, frame.received
    gram = x @ x.conj().T
    if np.linalg.cond(gram) > 1e12:
        raise SimulationError("pilot Gram matrix X X^H is singular")
    return np.linalg.solve(gram.conj(), (y @ x.conj().T).conj().T).conj().T


def ls_estimate_tensor(ct: ChannelTensor, pilot_len: int, seed: int,
                       snr_db: float = math.inf) -> ChannelTensor:
    """LS estimates for every (slot, subcarrier), packed as a channel tensor.

    One pilot matrix is shared by all slices; noise power is set from the
    mean received power so the frame SNR matches `snr_db` on average.
    """
    arr = ct.meta.array
    if arr.dual_pol:
        raise SimulationError("least-squares estimation supports single-polarization arrays only")
    T, S, F = ct.values.shape
    x = make_pilot_matrix(arr.n_tx, pilot_len, seed)
    h_all = ct.values.reshape(T, arr.n_rx, arr.n_tx, F)
    y = np.einsum("tjif,il->tjfl", h_all, x)
    if not math.isinf(snr_db):
        rng = np.random.default_rng(seed + 1)
        nv = float(np.mean(np.abs(y) ** 2)) * 10.0 ** (-snr_db / 10.0)
        noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + noise * math.sqrt(nv / 2.0)
    gram = x @ x.conj().T
    proj = x.conj().T @ np.linalg.inv(gram)          # [L, n_tx]
    est = np.einsum("tjfl,li->tjif", y, proj)
    values = est.reshape(T, S, F)
    return ChannelTensor(values, replace(ct.meta, snr_db=snr_db, seed=seed))


# ---------------------------------------------------------------------------
# Task datasets
# ---------------------------------------------------------------------------

HAR_SHAPE = (3, 114, 2000)
_HAR_RATE_HZ = 100.0
# per class: (modulation frequency Hz, depth, harmonic weight, burst flag)
_HAR_SIGNATURES = (
    (2.6, 0.45, 0.00, False),   # running
    (1.3, 0.30, 0.10, False),   # walking
    (0.5, 0.50, 0.00, True),    # falling down
    (3.4, 0.35, 0.30, False),   # boxing
    (0.7, 0.40, 0.45, False),   # circling arms
    (0.22, 0.50, 0.25, False),  # cleaning the floor
)


def generate_activity_sample(seed: int, label: int) -> ActivitySample:
    links, subs, steps = HAR_SHAPE
    rng = np.random.default_rng(seed)
    t = np.arange(steps) / _HAR_RATE_HZ
    freq, depth, harm, burst = _HAR_SIGNATURES[label]
    base = 1.0 + 0.5 * np.sin(
        2.0 * math.pi * np.arange(subs)[None, :] / subs
        * (1.5 + 0.2 * np.arange(links)[:, None])
        + rng.uniform(0, 2 * math.pi, (links, 1))
    )
    phase = rng.uniform(0, 2 * math.pi, (links, subs, 1))
    osc = np.sin(2 * math.pi * freq * t[None, None, :] + phase)
    if harm > 0:
        osc = osc + harm * np.sin(4 * math.pi * freq * t[None, None, :] + 2 * phase)
    if burst:
        # falling: oscillation ends in a sustained amplitude drop
        step = expit_curve(t, rng.uniform(6.0, 14.0))[None, None, :]
        osc = osc * (1.0 - step) - 0.9 * step
    x = base[:, :, None] * (1.0 + depth * osc)
    x = x + 0.05 * rng.standard_normal((links, subs, steps))
    return ActivitySample(np.clip(x, 0.0, None), label)


def expit_curve(t: np.ndarray, t0: float, rate: float = 3.0) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-rate * (t - t0)))


def generate_activity_dataset(seed: int, per_class: int) -> list[ActivitySample]:
    """6 activity classes of [3 x 114 x 2000] amplitude tensors."""
    if per_class < 1:
        raise SimulationError("per_class must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(6 * per_class)
    out = []
    for c in range(6):
        for i in range(per_class):
            out.append(generate_activity_sample(int(seeds[c * per_class + i]), c))
    return out


def prediction_config(velocity_mps: float, seed: int | None = None) -> ChannelConfig:
    """16+4-slot forecasting setup: 4x4 dual-polarization transmit array, single receiver."""
    return ChannelConfig(
        n_slots=20, n_subcarriers=32, carrier_hz=2.4e9, scs_hz=120e3, slot_s=5e-4,
        velocity_mps=velocity_mps,
        array=ArrayGeometry(tx_shape=(4, 4), rx_shape=(1,), dual_pol=True),
        seed=seed,
    )


def generate_prediction_sequences(seed: int, count: int, cfg: ChannelConfig,
                                  history: int = 16, future: int = 4,
                                  num_scatterers: int = 12,
                                  velocity_range_mps: tuple = (0.0, 33.4)):
    """(history, future) channel pairs split from one continuous trajectory each."""
    if not velocity_range_mps[0] <= cfg.velocity_mps <= velocity_range_mps[1]:
        raise SimulationError(
            f"velocity {cfg.velocity_mps} m/s outside configured range {velocity_range_mps}"
        )
    cfg = replace(cfg, n_slots=history + future)
    seeds = np.random.SeedSequence(seed).generate_state(count)
    pairs = []
    for s in seeds:
        scene = generate_scene(int(s), num_scatterers)
        full = synthesize_channel(scene, replace(cfg, seed=int(s)))
        hist = ChannelTensor(full.values[:history].copy(), replace(cfg, n_slots=history, seed=int(s)))
        fut = ChannelTensor(full.values[history:].copy(), replace(cfg, n_slots=future, seed=int(s)))
        pairs.append((hist, fut))
    return pairs


def estimation_config(seed: int | None = None) -> ChannelConfig:
    """Pilot-based estimation setup: 4 tx / 4 rx linear arrays, 32 subcarriers."""
    return ChannelConfig(
        n_slots=4, n_subcarriers=32, carrier_hz=2.4e9, scs_hz=120e3, slot_s=5e-4,
        velocity_mps=3.0 / 3.6,
        array=ArrayGeometry(tx_shape=(4,), rx_shape=(4,)),
        seed=seed,
    )


def make_estimation_samples(seed: int, count: int, snr_db: float,
                            cfg: ChannelConfig | None = None,
                            pilot_len: int = 64, num_scatterers: int = 12):
    """(LS estimate, true channel) pairs at one SNR; deterministic in seed."""
    cfg = cfg or estimation_config()
    seeds = np.random.SeedSequence(seed).generate_state(count)
    out = []
    for s in seeds:
        scene = generate_scene(int(s), num_scatterers)
        truth = synthesize_channel(scene, replace(cfg, seed=int(s)))
        ls = ls_estimate_tensor(truth, pilot_len, int(s) ^ 0x5A5A5A, snr_db)
        out.append((ls, truth))
    return out


def reconstruction_config(seed: int | None = None) -> ChannelConfig:
    """Environment sensing setup: single tx, 4x4 planar receive array at 10 GHz."""
    return ChannelConfig(
        n_slots=4, n_subcarriers=32, carrier_hz=10e9, scs_hz=30e3, slot_s=5e-4,
        velocity_mps=0.0,
        array=ArrayGeometry(tx_shape=(1,), rx_shape=(4, 4)),
        seed=seed,
    )


def make_reconstruction_samples(seed: int, count: int, num_scatterers: int = 250,
                                cfg: ChannelConfig | None = None,
                                bounds=DEFAULT_BOUNDS):
    """(channel tensor, scatterer point cloud) pairs for environment reconstruction."""
    cfg = cfg or reconstruction_config()
    seeds = np.random.SeedSequence(seed).generate_state(count)
    out = []
    for s in seeds:
        scene = generate_scene(int(s), num_scatterers, bounds)
        ct = synthesize_channel(scene, replace(cfg, seed=int(s)))
        out.append((ct, scene.scatterers.copy()))
    return out
