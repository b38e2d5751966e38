"""Per-UT multipath delay-Doppler channels (ETU-style tapped delay line)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid_core import FrameConfig

ETU_DELAYS_NS = (0, 50, 120, 200, 230, 500, 1600, 2300, 5000)
ETU_POWERS_DB = (-1, -1, -1, 0, 0, 0, -3, -5, -7)

DUMP_COLUMNS = ("trial", "ut", "path", "re_gain", "im_gain", "delay_ns", "doppler_hz")


@dataclass(frozen=True)
class ChannelPath:
    gain: complex
    delay: float  # seconds
    doppler: float  # Hz


@dataclass(frozen=True)
class UtChannel:
    """Finite list of DD impulses ``h_i delta(tau - tau_i) delta(nu - nu_i)``."""

    paths: tuple[ChannelPath, ...]

    def __post_init__(self):
        if not self.paths:
            raise ValueError("a channel needs at least one path")
        object.__setattr__(self, "paths", tuple(self.paths))

    @classmethod
    def from_arrays(cls, gains, delays, dopplers) -> "UtChannel":
        return cls(tuple(ChannelPath(complex(h), float(t), float(v))
                         for h, t, v in zip(gains, delays, dopplers)))

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=float)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler for p in self.paths], dtype=float)

    def scaled(self, c: complex) -> "UtChannel":
        return UtChannel(tuple(ChannelPath(p.gain * c, p.delay, p.doppler) for p in self.paths))

    def check(self, cfg: FrameConfig, nu_max: float | None = None) -> None:
        """Assert the delay/Doppler bounds ``0 <= tau < T``, ``|nu| <= nu_max < delta_f``."""
        bound = cfg.delta_f if nu_max is None else nu_max
        for p in self.paths:
            if not 0.0 <= p.delay < cfg.T:
                raise ValueError(f"path delay {p.delay} outside [0, T)")
            if abs(p.doppler) > bound or abs(p.doppler) >= cfg.delta_f:
                raise ValueError(f"path Doppler {p.doppler} exceeds bound")


def flat_channel() -> UtChannel:
    return UtChannel((ChannelPath(1.0 + 0j, 0.0, 0.0),))


@dataclass(frozen=True)
class PowerDelayProfile:
    delays: tuple[float, ...]  # seconds
    powers: tuple[float, ...]  # linear, sums to 1

    def __post_init__(self):
        if len(self.delays) != len(self.powers) or not self.delays:
            raise ValueError("delays and powers must be non-empty and equally long")
        if np.any(np.diff(self.delays) <= 0):
            raise ValueError("delays must be strictly increasing")
        if abs(sum(self.powers) - 1.0) > 1e-12:
            raise ValueError("powers must sum to one")


def etu_profile() -> PowerDelayProfile:
    """3GPP Extended Typical Urban profile, normalized to unit total power."""
    powers = 10.0 ** (np.asarray(ETU_POWERS_DB, dtype=float) / 10.0)
    powers = powers / powers.sum()
    delays = tuple(d * 1e-9 for d in ETU_DELAYS_NS)
    return PowerDelayProfile(delays, tuple(float(p) for p in powers))


def channel_rng(seed: int, trial: int, ut: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, trial, ut)``; order independent."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial), int(ut)))
    return np.random.Generator(np.random.Philox(ss))


def sample_channel(profile: PowerDelayProfile, nu_max: float, rng: np.random.Generator,
                   cfg: FrameConfig | None = None) -> UtChannel:
    """Rayleigh gains with the profile's powers, Doppler ``nu_max cos(theta)``."""
    if nu_max < 0:
        raise ValueError("nu_max must be non-negative")
    cfg = cfg or FrameConfig(36, 18)
    if nu_max >= cfg.delta_f:
        raise ValueError("nu_max must be smaller than delta_f")
    p = len(profile.delays)
    std = np.sqrt(np.asarray(profile.powers) / 2.0)
    gains = std * (rng.standard_normal(p) + 1j * rng.standard_normal(p))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=p)
    dopplers = nu_max * np.cos(theta)
    ch = UtChannel.from_arrays(gains, profile.delays, dopplers)
    ch.check(cfg, nu_max)
    return ch


def draw_trial(profile: PowerDelayProfile, nu_max: float, Q: int, seed: int, trial: int,
               cfg: FrameConfig | None = None) -> list[UtChannel]:
    """Independent channel realizations for ``Q`` UTs in one trial."""
    return [sample_channel(profile, nu_max, channel_rng(seed, trial, q), cfg) for q in range(Q)]


def dump_channels(path, realizations: Iterable[tuple[int, Sequence[UtChannel]]]) -> None:
    """Write ``(trial, [UtChannel per UT])`` pairs as CSV rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DUMP_COLUMNS)
        for trial, channels in realizations:
            for ut, ch in enumerate(channels):
                for i, p in enumerate(ch.paths):
                    writer.writerow([trial, ut, i, repr(p.gain.real), repr(p.gain.imag),
                                     repr(p.delay * 1e9), repr(p.doppler)])


def load_channels(path) -> dict[int, list[UtChannel]]:
    """Inverse of :func:`dump_channels`."""
    table: dict[int, dict[int, list[tuple[int, ChannelPath]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DUMP_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        for row in reader:
            p = ChannelPath(complex(float(row["re_gain"]), float(row["im_gain"])),
                            float(row["delay_ns"]) * 1e-9, float(row["doppler_hz"]))
            table.setdefault(int(row["trial"]), {}).setdefault(int(row["ut"]), []).append(
                (int(row["path"]), p))
    out = {}
    for trial, uts in sorted(table.items()):
        out[trial] = [UtChannel(tuple(p for _, p in sorted(uts[u], key=lambda x: x[0])))
                      for u in sorted(uts)]
    return out
