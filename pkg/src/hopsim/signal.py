"""FMCW baseband physics.

Chirp, echo, and cross-radar interference synthesis after dechirping,
noise composition, interference detection, windowed SINR/SNR estimation,
and range processing: fast-time FFT for the coarse range, then a
(velocity, fine-range) grid matched filter over slow time that exploits
the known hopping sequence. The hop sequence is nonuniform, so the fine
axis uses an explicit matched filter instead of an FFT.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .hopping import EpisodeStats

C = 3.0e8  # m/s

# Binary frame dump header: magic, version, N_s, K, f_s, reserved pad.
_FRAME_HEADER = struct.Struct("<4sHIId10x")
_FRAME_MAGIC = b"HOPF"
_FRAME_VERSION = 1

DEFAULT_DETECTION_FACTOR = 16.0  # ~12 dB over the noise-plus-signal floor


@dataclass(frozen=True)
class ChirpParams:
    """Waveform and sampling parameters of one radar."""

    f_c: float            # carrier start frequency, Hz
    subband_hz: float     # per-chirp sweep bandwidth B_a, Hz
    n_subbands: int
    pri_s: float          # pulse repetition interval, s
    active_s: float       # active sweep time T_a < PRI, s
    adc_hz: float         # complex baseband sample rate, Hz
    chirps_per_frame: int

    def __post_init__(self):
        if self.active_s >= self.pri_s or self.active_s <= 0:
            raise ValueError("need 0 < active time < PRI")
        if self.subband_hz <= 0 or self.adc_hz <= 0 or self.f_c <= 0:
            raise ValueError("frequencies must be positive")
        if self.n_subbands < 1 or self.chirps_per_frame < 1:
            raise ValueError("counts must be positive")
        if self.n_samples < 2:
            raise ValueError("fewer than 2 samples per chirp")

    @property
    def slope(self) -> float:
        return self.subband_hz / self.active_s

    @property
    def n_samples(self) -> int:
        return int(np.floor(self.adc_hz * self.active_s))

    @property
    def total_bandwidth(self) -> float:
        return self.n_subbands * self.subband_hz

    @property
    def coarse_bin_m(self) -> float:
        return C / (2.0 * self.subband_hz)

    @property
    def fine_bin_m(self) -> float:
        return C / (2.0 * self.total_bandwidth)

    @property
    def range_bin_m(self) -> float:
        """Range per FFT bin; equals coarse_bin_m when f_s*T_a is integral."""
        return (self.adc_hz / self.n_samples) * C / (2.0 * self.slope)

    def subband_start_hz(self, a) -> np.ndarray | float:
        return self.f_c + np.asarray(a) * self.subband_hz

    def hop_offsets_hz(self, a) -> np.ndarray | float:
        """Delta-b frequency shift of subband index a relative to f_c."""
        return np.asarray(a) * self.subband_hz


@dataclass(frozen=True)
class Target:
    range_m: float
    velocity_mps: float   # negative when approaching
    snr_db: float         # per-chirp post-dechirp SNR

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("target range must be positive")
        if not np.isfinite(self.snr_db):
            raise ValueError("target SNR must be finite")


@dataclass(frozen=True)
class InterferenceLink:
    source: int           # interfering radar index
    inr_db: float         # interference-to-noise ratio at the victim on collision

    def __post_init__(self):
        if not np.isfinite(self.inr_db):
            raise ValueError("INR must be finite")


@dataclass(frozen=True)
class ChirpFrame:
    """Complex baseband samples (fast time x slow time) plus the hop sequence."""

    samples: np.ndarray   # (N_s, K) complex
    hops_hz: np.ndarray   # (K,) Delta-b offsets from f_c

    def __post_init__(self):
        s = np.asarray(self.samples)
        h = np.asarray(self.hops_hz, dtype=float)
        if s.ndim != 2 or h.shape != (s.shape[1],):
            raise ValueError("samples must be (N_s, K) with one hop per chirp")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "hops_hz", h)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_chirps(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FineRangeProfile:
    """1-D magnitude-vs-range slice at a fixed velocity."""

    ranges_m: np.ndarray
    mags_db: np.ndarray
    coarse_bin: int       # coarse bin holding the global peak
    velocity_mps: float

    @property
    def peak_range_m(self) -> float:
        return float(self.ranges_m[int(np.argmax(self.mags_db))])


def tx_chirp_phase(params: ChirpParams, f_k: float, t) -> np.ndarray | float:
    """Instantaneous transmit phase (rad) at fast time t within one chirp."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t >= params.active_s):
        raise ValueError("t outside the active sweep")
    out = 2.0 * np.pi * (f_k * t + 0.5 * params.slope * t * t)
    return out if out.ndim else float(out)


def coarse_decompose(params: ChirpParams, range_m: float) -> tuple[float, float]:
    """Split a range into its coarse bin center and fine offset."""
    binw = params.coarse_bin_m
    rbar = np.round(range_m / binw) * binw
    return float(rbar), float(range_m - rbar)


def _echo_terms(params: ChirpParams, tgt: Target, noise_power: float):
    rbar, eps0 = coarse_decompose(params, tgt.range_m)
    f_r = 2.0 * tgt.range_m * params.slope / C
    f_d = -2.0 * tgt.velocity_mps * params.pri_s * params.f_c / C
    amp = np.sqrt(noise_power * 10.0 ** (tgt.snr_db / 10.0))
    return rbar, eps0, f_r, f_d, amp


def dechirped_echo(params: ChirpParams, tgt: Target, k: int, db_k: float,
                   noise_power: float = 1.0, phase0: float = 0.0) -> np.ndarray:
    """Post-mixer echo samples of one chirp; ``db_k`` is the hop offset (Hz)."""
    delay = (2.0 / C) * (tgt.range_m + k * tgt.velocity_mps * params.pri_s)
    if not 0.0 <= delay < params.active_s:
        raise ValueError("round-trip delay outside the chirp: target beyond unambiguous range")
    rbar, eps0, f_r, f_d, amp = _echo_terms(params, tgt, noise_power)
    t = np.arange(params.n_samples) / params.adc_hz
    hop = -2.0 * np.pi * (2.0 * rbar / C
                          + 2.0 * (eps0 + k * tgt.velocity_mps * params.pri_s) / C) * db_k
    phase = -2.0 * np.pi * f_r * t + 2.0 * np.pi * f_d * k + hop + phase0
    return amp * np.exp(1j * phase)


def echo_frame(params: ChirpParams, tgt: Target, hops_hz: np.ndarray,
               noise_power: float = 1.0, phase0: float = 0.0,
               k0: int = 0) -> np.ndarray:
    """Echo samples for a block of chirps, (N_s, K).

    Fast time and slow time separate into a rank-1 product: the hop term
    of the dechirped echo carries no fast-time dependence.
    """
    hops = np.asarray(hops_hz, dtype=float)
    ks = k0 + np.arange(hops.size)
    delays = (2.0 / C) * (tgt.range_m + ks * tgt.velocity_mps * params.pri_s)
    if np.any(delays < 0) or np.any(delays >= params.active_s):
        raise ValueError("round-trip delay outside the chirp: target beyond unambiguous range")
    rbar, eps0, f_r, f_d, amp = _echo_terms(params, tgt, noise_power)
    t = np.arange(params.n_samples) / params.adc_hz
    fast = amp * np.exp(-2j * np.pi * f_r * t)
    slow = np.exp(1j * (2.0 * np.pi * f_d * ks
                        - 2.0 * np.pi * (2.0 * rbar / C
                                         + 2.0 * (eps0 + ks * tgt.velocity_mps * params.pri_s) / C)
                        * hops
                        + phase0))
    return np.outer(fast, slow)


def interference_base(victim: ChirpParams, source: ChirpParams) -> np.ndarray:
    """Unit-amplitude residual chirp exp(j pi (a_v - a_s) t^2) after dechirping."""
    t = np.arange(victim.n_samples) / victim.adc_hz
    return np.exp(1j * np.pi * (victim.slope - source.slope) * t * t)


def dechirped_interference(victim: ChirpParams, link: InterferenceLink,
                           source: ChirpParams, k: int, collide: bool,
                           rng: np.random.Generator,
                           noise_power: float = 1.0) -> np.ndarray:
    """Cross-radar interference samples for one victim chirp.

    Zero when the subbands do not collide. On collision the residual
    chirp is scaled to the configured INR with a fresh random phase.
    """
    if not collide:
        return np.zeros(victim.n_samples, dtype=complex)
    amp = np.sqrt(noise_power * 10.0 ** (link.inr_db / 10.0))
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return amp * np.exp(1j * phi) * interference_base(victim, source)


def compose_received(echoes, interference, noise_power: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Sum of components plus circularly-symmetric complex Gaussian noise."""
    parts = list(echoes) + list(interference)
    lengths = {np.asarray(p).shape for p in parts}
    if len(lengths) > 1:
        raise ValueError("component length mismatch")
    if parts:
        shape = np.asarray(parts[0]).shape
        total = np.sum(parts, axis=0).astype(complex)
    else:
        shape = (0,)
        total = np.zeros(shape, dtype=complex)
    if noise_power < 0:
        raise ValueError("noise power must be non-negative")
    if noise_power > 0 and total.size:
        sigma = np.sqrt(noise_power / 2.0)
        total = total + sigma * (rng.standard_normal(shape)
                                 + 1j * rng.standard_normal(shape))
    return total


def theoretical_sinr(signal_power: float, interference_power: float,
                     noise_power: float) -> float:
    """Linear SINR; reduces to the SNR when interference_power is zero."""
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    if signal_power < 0 or interference_power < 0:
        raise ValueError("powers must be non-negative")
    return signal_power / (interference_power + noise_power)


def detect_interference(samples: np.ndarray, noise_power: float,
                        factor: float = DEFAULT_DETECTION_FACTOR):
    """Threshold detector splitting one chirp into clean and interference parts.

    Samples whose amplitude exceeds the matched-signal envelope plus the
    factor-scaled noise tail are attributed to interference; the chirp is
    flagged when more than 1% of its samples are. The envelope power is the
    strongest FFT tone minus the median bin, so broadband interference
    energy does not inflate it, and it enters the threshold as a coherent
    amplitude bound: |x| > sqrt(envelope) + sqrt(factor x noise).
    """
    if factor <= 1:
        raise ValueError("factor must exceed 1")
    x = np.asarray(samples)
    spec2 = np.abs(np.fft.fft(x, norm="ortho")) ** 2
    envelope = max(0.0, float(np.max(spec2) - np.median(spec2))) / x.size
    threshold = (np.sqrt(envelope) + np.sqrt(factor * noise_power)) ** 2
    hot = np.abs(x) ** 2 > threshold
    flag = bool(hot.mean() > 0.01)
    clean = np.where(hot, 0.0, x)
    return flag, clean, x - clean


@dataclass(frozen=True)
class ChirpMeasurements:
    """Per-chirp detection outputs feeding the episode estimator."""

    subbands: np.ndarray            # (K,) subband index per chirp
    clean_power: np.ndarray         # (K,) mean |clean|^2
    interference_power: np.ndarray  # (K,) mean |interference estimate|^2
    flagged: np.ndarray             # (K,) bool, interference detected
    noise_power: float

    def __post_init__(self):
        shapes = {np.asarray(a).shape for a in
                  (self.subbands, self.clean_power, self.interference_power, self.flagged)}
        if len(shapes) != 1 or np.asarray(self.subbands).ndim != 1:
            raise ValueError("per-chirp arrays must share one 1-D shape")
        if np.asarray(self.subbands).size < 1:
            raise ValueError("need at least one chirp")
        if self.noise_power <= 0:
            raise ValueError("noise power must be positive")


def estimate_episode_sinr(meas: ChirpMeasurements, n_subbands: int,
                          db_average: bool = False) -> EpisodeStats:
    """Per-subband windowed SINR/SNR means over one episode.

    Averages are taken over linear per-chirp ratios and then converted to
    dB (set ``db_average`` to average the dB values instead). Subbands
    with no chirps carry NaN, never zero.
    """
    sub = np.asarray(meas.subbands, dtype=int)
    flagged = np.asarray(meas.flagged, dtype=bool)
    per_sinr = np.asarray(meas.clean_power) / (
        np.asarray(meas.interference_power) + meas.noise_power)
    per_snr = np.asarray(meas.clean_power) / meas.noise_power

    def mean_by_subband(values, mask):
        counts = np.bincount(sub[mask], minlength=n_subbands)
        out = np.full(n_subbands, np.nan)
        if db_average:
            values = 10.0 * np.log10(np.maximum(values, 1e-300))
        sums = np.bincount(sub[mask], weights=values[mask], minlength=n_subbands)
        nz = counts > 0
        means = sums[nz] / counts[nz]
        out[nz] = means if db_average else 10.0 * np.log10(np.maximum(means, 1e-300))
        return out, counts

    sinr_db, count = mean_by_subband(per_sinr, np.ones_like(flagged))
    snr_db, clean_count = mean_by_subband(per_snr, ~flagged)
    hit_sinr_db, hit_count = mean_by_subband(per_sinr, flagged)
    return EpisodeStats(sinr_db=sinr_db, snr_db=snr_db, hit_sinr_db=hit_sinr_db,
                        count=count, clean_count=clean_count, hit_count=hit_count)


def range_fft(frame: ChirpFrame | np.ndarray, window: str = "rect") -> np.ndarray:
    """Per-chirp fast-time DFT (orthonormal so energy is preserved).

    The dechirped echo beats at -f_r, so the transform is evaluated at
    negative frequencies: bin b then maps to range b * range_bin_m
    directly, and slow-time phases pass through unconjugated.
    """
    samples = frame.samples if isinstance(frame, ChirpFrame) else np.asarray(frame)
    if samples.shape[0] < 2:
        raise ValueError("need at least 2 fast-time samples")
    if window == "hann":
        samples = samples * np.hanning(samples.shape[0])[:, None]
    elif window != "rect":
        raise ValueError(f"unknown window {window!r}")
    return np.fft.ifft(samples, axis=0, norm="ortho")


def fine_range_doppler(rfft: np.ndarray, hops_hz: np.ndarray, coarse_bin: int,
                       v_grid: np.ndarray, eps_grid: np.ndarray,
                       params: ChirpParams) -> np.ndarray:
    """Matched-filter magnitude surface (velocity x fine range), in dB.

    Correlates the slow-time sequence at one coarse bin against the
    hop-compensated Doppler template for each grid point. The known
    coarse-range hop phase is part of the template, so the surface peaks
    at the target's true (velocity, fine offset).
    """
    v = np.asarray(v_grid, dtype=float)
    eps = np.asarray(eps_grid, dtype=float)
    lim = C / (4.0 * params.subband_hz) + 1e-9
    if np.any(np.abs(eps) > lim):
        raise ValueError("fine-range grid outside [-c/(4 B_a), c/(4 B_a)]")
    hops = np.asarray(hops_hz, dtype=float)
    z = np.asarray(rfft)[coarse_bin, :]
    k = np.arange(z.size)
    rbar = coarse_bin * params.range_bin_m
    f_d = -2.0 * v * params.pri_s * params.f_c / C
    # template phase: 2pi f_d k - 2pi (2/c)(rbar + eps + k v T_pri) db_k
    vk = np.exp(1j * (2.0 * np.pi * np.outer(f_d, k)
                      - 2.0 * np.pi * (2.0 / C) * params.pri_s
                      * np.outer(v, k * hops)))
    ek = np.exp(-2j * np.pi * (2.0 / C) * np.outer(rbar + eps, hops))
    corr = np.einsum("vk,ek,k->ve", np.conj(vk), np.conj(ek), z)
    return 20.0 * np.log10(np.abs(corr) + 1e-300)


@dataclass(frozen=True)
class RangeVelocitySurface:
    """fine_range_doppler output stitched across coarse bins."""

    coarse_bins: np.ndarray   # (B,)
    v_grid: np.ndarray        # (V,)
    eps_grid: np.ndarray      # (E,)
    mags_db: np.ndarray       # (B, V, E)
    range_bin_m: float


def default_eps_grid(params: ChirpParams, points_per_bin: int | None = None) -> np.ndarray:
    """Fine-offset grid spanning one coarse bin, 2 B/B_a points by default."""
    if points_per_bin is None:
        points_per_bin = 2 * params.n_subbands
    binw = params.coarse_bin_m
    step = binw / points_per_bin
    return -binw / 2.0 + step * (np.arange(points_per_bin) + 0.5)


def sweep_coarse_bins(rfft: np.ndarray, hops_hz: np.ndarray, coarse_bins,
                      v_grid, eps_grid, params: ChirpParams) -> RangeVelocitySurface:
    bins = np.asarray(coarse_bins, dtype=int)
    mags = np.stack([
        fine_range_doppler(rfft, hops_hz, int(b), v_grid, eps_grid, params)
        for b in bins
    ])
    return RangeVelocitySurface(coarse_bins=bins, v_grid=np.asarray(v_grid, dtype=float),
                                eps_grid=np.asarray(eps_grid, dtype=float),
                                mags_db=mags, range_bin_m=params.range_bin_m)


def range_profile_at_velocity(surface: RangeVelocitySurface, v: float) -> FineRangeProfile:
    """Magnitude-vs-range slice of the stitched surface at one grid velocity."""
    hits = np.flatnonzero(np.abs(surface.v_grid - v) < 1e-9)
    if hits.size == 0:
        raise ValueError(f"velocity {v} is not on the evaluated grid")
    vi = int(hits[0])
    ranges = (surface.coarse_bins[:, None] * surface.range_bin_m
              + surface.eps_grid[None, :]).ravel()
    mags = surface.mags_db[:, vi, :].reshape(-1)
    order = np.argsort(ranges, kind="stable")
    ranges, mags = ranges[order], mags[order]
    peak = int(np.argmax(mags))
    coarse = int(surface.coarse_bins[peak // surface.eps_grid.size])
    return FineRangeProfile(ranges_m=ranges, mags_db=mags,
                            coarse_bin=coarse, velocity_mps=float(v))


def mainlobe_width(profile: FineRangeProfile, drop_db: float = 3.0) -> float:
    """Width of the contiguous region around the peak within drop_db of it.

    Crossings are linearly interpolated between grid points.
    """
    r, m = profile.ranges_m, profile.mags_db
    peak = int(np.argmax(m))
    level = m[peak] - drop_db

    def cross(direction):
        i = peak
        while 0 <= i + direction < m.size and m[i + direction] >= level:
            i += direction
        j = i + direction
        if not 0 <= j < m.size:
            return r[i]
        frac = (m[i] - level) / (m[i] - m[j])
        return r[i] + frac * (r[j] - r[i])

    return float(cross(+1) - cross(-1))


def write_frame(path, frame: ChirpFrame, adc_hz: float):
    """Binary dump: 32-byte header then row-major complex64 samples.

    The hop sequence goes to a ``<path>.hops.csv`` sidecar with columns
    ``k,f_k_hz`` (absolute start frequency needs the carrier added by the
    reader of the sidecar; offsets are stored as written).
    """
    path = str(path)
    header = _FRAME_HEADER.pack(_FRAME_MAGIC, _FRAME_VERSION,
                                frame.n_samples, frame.n_chirps, adc_hz)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(frame.samples, dtype="<c8").tobytes())
    with open(path + ".hops.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "f_k_hz"])
        for k, f in enumerate(frame.hops_hz):
            writer.writerow([k, repr(float(f))])


def read_frame(path) -> tuple[ChirpFrame, float]:
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read(_FRAME_HEADER.size)
        magic, version, n_s, k, f_s = _FRAME_HEADER.unpack(raw)
        if magic != _FRAME_MAGIC:
            raise ValueError("not a frame dump (bad magic)")
        if version != _FRAME_VERSION:
            raise ValueError(f"unsupported frame dump version {version}")
        samples = np.frombuffer(fh.read(), dtype="<c8").reshape(n_s, k)
    with open(path + ".hops.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
        hops = np.array([float(r[1]) for r in rows])
    return ChirpFrame(samples=samples.astype(complex), hops_hz=hops), f_s
