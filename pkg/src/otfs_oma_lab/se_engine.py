"""Log-det spectral efficiency, SNR conventions and the Monte Carlo driver."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .channel import PowerDelayProfile, UtChannel, draw_trial, etu_profile
from .effchan import EffectiveChannel, build_all, gb_kernels
from .grid_core import FrameConfig, GbDelay, GbDoppler, Iddma, Itfma, MaScheme

CONVENTIONS = ("received", "transmit")


class SeNumericError(ArithmeticError):
    """The interference-plus-noise covariance is not positive definite."""


@dataclass(frozen=True)
class NoiseSignalConfig:
    """Per-symbol energy ``E_T``, noise PSD ``N0`` and the frame size ``MN``."""

    E_T: float
    N0: float
    frame_size: int

    def __post_init__(self):
        if self.E_T <= 0 or self.N0 <= 0:
            raise ValueError("E_T and N0 must be positive")

    @property
    def rho(self) -> float:
        return self.E_T / (self.frame_size * self.N0)

    @classmethod
    def from_rho(cls, rho: float, cfg: FrameConfig, N0: float = 1.0) -> "NoiseSignalConfig":
        return cls(rho * cfg.size * N0, N0, cfg.size)


@dataclass(frozen=True)
class SeResult:
    per_ut_se: tuple[float, ...]

    @property
    def sum_se(self) -> float:
        return float(sum(self.per_ut_se))


@dataclass
class SeCurve:
    """Trial-averaged sum SE versus SNR for one scheme/pulse/Doppler setting.

    ``G`` holds the guard size used at each SNR point (``None`` when the
    scheme has no guard band). ``samples`` keeps the per-trial sum SE of the
    reported configuration, shape ``(trials, snr)``, for paired comparisons
    between curves that share channel draws.
    """

    scheme: MaScheme
    snr_grid: list[float]
    mean_sum_se: list[float]
    stderr_sum_se: list[float]
    nu_max: float
    trials: int
    seed: int
    pulse: str = "rect"
    G: list = field(default_factory=list)
    samples: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.snr_grid)
        if len(self.mean_sum_se) != n or len(self.stderr_sum_se) != n:
            raise ValueError("curve lists must have equal length")
        if not self.G:
            self.G = [getattr(self.scheme, "G", None)] * n

    @property
    def per_ut_se_mean(self) -> list[float]:
        return [s / self.scheme.Q for s in self.mean_sum_se]


# ---------------------------------------------------------------------------
# Noise and SNR
# ---------------------------------------------------------------------------


def dd_noise_variance(scheme: MaScheme, cfg: FrameConfig, N0: float = 1.0, *,
                      paper_iddma_sfft: bool = False) -> float:
    """Variance of each received DD noise sample.

    IDDMA uses ``g1 g2 MN N0`` with the identity-normalized receiver
    (``MN N0 / (g1 g2)`` with ``paper_iddma_sfft``); ITFMA ``MN N0/(g3 g4)``;
    both guard-band schemes ``MN N0``.
    """
    base = cfg.size * N0
    if isinstance(scheme, Iddma):
        return base / scheme.Q if paper_iddma_sfft else base * scheme.Q
    if isinstance(scheme, Itfma):
        return base / scheme.Q
    return float(base)


def _gb_factor(scheme, cfg: FrameConfig) -> float:
    if isinstance(scheme, GbDoppler):
        return 1.0 / scheme.Q - scheme.G / cfg.N
    return 1.0 / scheme.Q - scheme.G / cfg.M


def snr_to_energy(scheme: MaScheme, snr_linear: float, cfg: FrameConfig, N0: float = 1.0,
                  convention: str = "received") -> float:
    """Per-DD-symbol energy ``E_T`` that yields ``snr_linear``.

    ``received`` inverts the scheme's average received SNR (``rho/Q^2`` for
    IDDMA, ``rho`` for ITFMA, ``rho (1/Q - G/N)`` / ``rho (1/Q - G/M)`` for the
    guard-band schemes, with ``rho = E_T/(MN N0)``); ``transmit`` sets
    ``rho = snr`` for every scheme.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown SNR convention {convention!r}")
    if snr_linear <= 0:
        raise ValueError("snr must be positive")
    rho_energy = snr_linear * cfg.size * N0
    if convention == "transmit":
        return rho_energy
    if isinstance(scheme, Iddma):
        return rho_energy * scheme.Q ** 2
    if isinstance(scheme, Itfma):
        return rho_energy
    factor = _gb_factor(scheme, cfg)
    if factor <= 0:
        raise ValueError("guard band leaves no resources (1/Q - G/N or G/M <= 0)")
    return rho_energy / factor


def db_to_linear(db) -> np.ndarray:
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


# ---------------------------------------------------------------------------
# Spectral efficiency
# ---------------------------------------------------------------------------


def interference_covariance(eff: EffectiveChannel, E_T: float, sigma2: float) -> np.ndarray:
    """``K = sigma2 I + E_T sum_j H_j H_j^H`` with ``H_j`` summed per source UT."""
    K = sigma2 * np.eye(eff.dim, dtype=complex)
    for H in eff.per_source().values():
        K += E_T * (H @ H.conj().T)
    return 0.5 * (K + K.conj().T)


def spectral_efficiency(useful: np.ndarray, K: np.ndarray, E_T: float,
                        cfg: FrameConfig) -> float:
    """``(1/MN) log2 |I + E_T H^H K^{-1} H|`` via Cholesky whitening."""
    try:
        Lk = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError as exc:
        w = np.linalg.eigvalsh(0.5 * (K + K.conj().T))
        raise SeNumericError(f"covariance not positive definite: min eigenvalue {w.min():.3e}, "
                             f"max {w.max():.3e}") from exc
    W = linalg.solve_triangular(Lk, useful, lower=True)
    G = np.eye(useful.shape[1]) + E_T * (W.conj().T @ W)
    lam = np.linalg.eigvalsh(0.5 * (G + G.conj().T))
    return float(max(np.sum(np.log2(lam)), 0.0) / cfg.size)


def evaluate_se(effs: Sequence[EffectiveChannel], E_T: float, sigma2: float,
                cfg: FrameConfig) -> SeResult:
    """Per-UT SE for one channel draw via the reference whitening route."""
    return SeResult(tuple(
        spectral_efficiency(e.useful, interference_covariance(e, E_T, sigma2), E_T, cfg)
        for e in effs))


@dataclass(frozen=True)
class SpectralProfile:
    """Eigenvalues that make the SE of one UT cheap at any ``E_T``.

    With ``S = sum_j H_j H_j^H`` and ``H`` the useful matrix,
    ``|I + E H^H K^{-1} H| = |sigma2 I + E (S + H H^H)| / |sigma2 I + E S|``.
    """

    interference: np.ndarray
    total: np.ndarray

    @classmethod
    def from_effective(cls, eff: EffectiveChannel) -> "SpectralProfile":
        S = np.zeros((eff.dim, eff.dim), complex)
        for H in eff.per_source().values():
            S += H @ H.conj().T
        T = S + eff.useful @ eff.useful.conj().T
        lam_s = np.clip(np.linalg.eigvalsh(0.5 * (S + S.conj().T)), 0.0, None)
        lam_t = np.clip(np.linalg.eigvalsh(0.5 * (T + T.conj().T)), 0.0, None)
        return cls(lam_s, lam_t)

    def se(self, E_T, sigma2: float, frame_size: int) -> np.ndarray:
        E = np.atleast_1d(np.asarray(E_T, dtype=float))[:, None]
        val = (np.sum(np.log2(1.0 + E * self.total / sigma2), axis=1)
               - np.sum(np.log2(1.0 + E * self.interference / sigma2), axis=1))
        return np.maximum(val, 0.0) / frame_size


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


ChannelSource = Callable[[int], Sequence[UtChannel]]


def default_threads() -> int:
    env = os.environ.get("OTFS_LAB_THREADS")
    return max(1, int(env)) if env else 1


def etu_source(Q: int, nu_max: float, seed: int, cfg: FrameConfig,
               profile: PowerDelayProfile | None = None) -> ChannelSource:
    profile = profile or etu_profile()
    return lambda trial: draw_trial(profile, nu_max, Q, seed, trial, cfg)


def guard_sizes(scheme, cfg: FrameConfig) -> list[int]:
    span = cfg.N if isinstance(scheme, GbDoppler) else cfg.M
    return list(range(span // scheme.Q))


def _variants(scheme: MaScheme, cfg: FrameConfig, optimize: bool) -> list[MaScheme]:
    if optimize and isinstance(scheme, (GbDoppler, GbDelay)):
        return [type(scheme)(scheme.Q, G) for G in guard_sizes(scheme, cfg)]
    return [scheme]


def _trial_se(variants, channels, cfg, pulse, energies, sigma2):
    """Sum SE of one draw, shape ``(variants, snr)``."""
    kernels = None
    if isinstance(variants[0], (GbDoppler, GbDelay)):
        kernels = gb_kernels(channels, cfg, pulse)
    out = np.zeros((len(variants), energies.shape[1]))
    for i, sch in enumerate(variants):
        for eff in build_all(sch, channels, cfg, pulse=pulse, kernels=kernels):
            out[i] += SpectralProfile.from_effective(eff).se(energies[i], sigma2, cfg.size)
    return out


def _mean_stderr(x: np.ndarray):
    mean = x.mean(axis=0)
    if x.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])


def sweep_trials(scheme: MaScheme, snr_grid_db, cfg: FrameConfig, trials: int,
                 source: ChannelSource, *, pulse: str = "rect", convention: str = "received",
                 optimize_g: bool = False, N0: float = 1.0, threads: int | None = None):
    """Per-trial sum SE, shape ``(trials, variants, snr)``, plus the variants."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    snr = db_to_linear(snr_grid_db)
    if snr.ndim != 1 or snr.size == 0:
        raise ValueError("snr grid must be a non-empty list")
    scheme.validate(cfg)
    variants = _variants(scheme, cfg, optimize_g)
    energies = np.array([[snr_to_energy(v, s, cfg, N0, convention) for s in snr]
                         for v in variants])
    sigma2 = dd_noise_variance(scheme, cfg, N0)

    def work(t):
        return _trial_se(variants, source(t), cfg, pulse, energies, sigma2)

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        results = [work(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, range(trials)))
    return np.stack(results), variants


@dataclass(frozen=True)
class GuardBandChoice:
    G: int
    mean_sum_se: float
    stderr_sum_se: float
    per_g_mean: tuple[float, ...]


def optimize_guard_band(scheme, snr_db: float, nu_max: float, cfg: FrameConfig, trials: int,
                        seed: int, *, pulse: str = "rect", convention: str = "received",
                        source: ChannelSource | None = None,
                        threads: int | None = None) -> GuardBandChoice:
    """Exhaustive guard-size search with common random numbers.

    Every ``G`` sees the same channel draws; the largest mean sum SE wins and
    ties go to the smaller ``G``.
    """
    if not isinstance(scheme, (GbDoppler, GbDelay)):
        raise TypeError("guard-band optimization needs a GbDoppler or GbDelay scheme")
    source = source or etu_source(scheme.Q, nu_max, seed, cfg)
    data, variants = sweep_trials(scheme, [snr_db], cfg, trials, source, pulse=pulse,
                                  convention=convention, optimize_g=True, threads=threads)
    mean, err = _mean_stderr(data[:, :, 0])
    best = int(np.argmax(mean))
    return GuardBandChoice(variants[best].G, float(mean[best]), float(err[best]),
                           tuple(float(m) for m in mean))


def run_experiment(scheme: MaScheme, snr_grid_db, nu_max: float, cfg: FrameConfig,
                   trials: int, seed: int, *, pulse: str = "rect",
                   convention: str = "received", optimize_g: bool = True,
                   source: ChannelSource | None = None, profile: PowerDelayProfile | None = None,
                   threads: int | None = None) -> SeCurve:
    """Monte Carlo sum-SE curve.

    Channels are drawn per ``(seed, trial, UT)`` and the effective matrices
    built once per draw; guard-band schemes are optimized per SNR point
    when ``optimize_g`` is set (the scheme's own ``G`` is used otherwise).
    """
    source = source or etu_source(scheme.Q, nu_max, seed, cfg, profile)
    snr_grid_db = [float(s) for s in snr_grid_db]
    data, variants = sweep_trials(scheme, snr_grid_db, cfg, trials, source, pulse=pulse,
                                  convention=convention, optimize_g=optimize_g,
                                  threads=threads)
    mean, err = _mean_stderr(data)  # (variants, snr)
    best = np.argmax(mean, axis=0)
    cols = np.arange(len(snr_grid_db))
    chosen = [getattr(variants[b], "G", None) for b in best]
    return SeCurve(scheme=scheme, snr_grid=snr_grid_db,
                   mean_sum_se=[float(v) for v in mean[best, cols]],
                   stderr_sum_se=[float(v) for v in err[best, cols]],
                   nu_max=float(nu_max), trials=int(trials), seed=int(seed), pulse=pulse,
                   G=chosen, samples=data[:, best, cols])
