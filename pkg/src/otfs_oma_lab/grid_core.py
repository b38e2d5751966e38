"""OTFS frame geometry, the ISFFT/SFFT pair and per-scheme resource maps.

Grid conventions used everywhere in the package:

* DD grids have shape ``(N, M)`` and are indexed ``[k, l]`` (Doppler, delay).
* TF grids have shape ``(N, M)`` and are indexed ``[n, m]`` (time, frequency).

All indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


class SchemeError(ValueError):
    """Raised when a multiple-access scheme does not fit the frame."""


@dataclass(frozen=True)
class FrameConfig:
    """OTFS frame: ``M`` delay bins, ``N`` Doppler bins, ``delta_f * T = 1``."""

    M: int
    N: int
    delta_f: float = 15e3
    T: float | None = None

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")
        if self.T is None:
            object.__setattr__(self, "T", 1.0 / self.delta_f)
        elif abs(self.T * self.delta_f - 1.0) > 1e-12:
            raise ValueError("T * delta_f must equal 1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.M)

    @property
    def size(self) -> int:
        return self.M * self.N


# ---------------------------------------------------------------------------
# Multiple-access schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Iddma:
    """Interleaved DD allocation: UT spacing ``g1`` in delay, ``g2`` in Doppler."""

    g1: int
    g2: int

    name = "iddma"

    @property
    def Q(self) -> int:
        return self.g1 * self.g2

    def validate(self, cfg: FrameConfig) -> None:
        _check_positive(g1=self.g1, g2=self.g2)
        if cfg.M % self.g1:
            raise SchemeError("g1 must divide M")
        if cfg.N % self.g2:
            raise SchemeError("g2 must divide N")

    def dim(self, cfg: FrameConfig) -> int:
        return cfg.size // self.Q


@dataclass(frozen=True)
class Itfma:
    """Interleaved TF allocation: UT spacing ``g3`` in frequency, ``g4`` in time."""

    g3: int
    g4: int

    name = "itfma"

    @property
    def Q(self) -> int:
        return self.g3 * self.g4

    def validate(self, cfg: FrameConfig) -> None:
        _check_positive(g3=self.g3, g4=self.g4)
        if cfg.M % self.g3:
            raise SchemeError("g3 must divide M")
        if cfg.N % self.g4:
            raise SchemeError("g4 must divide N")

    def dim(self, cfg: FrameConfig) -> int:
        return cfg.size // self.Q


@dataclass(frozen=True)
class GbDoppler:
    """Contiguous Doppler-row blocks separated by ``G`` guard rows."""

    Q: int
    G: int = 0

    name = "gb_doppler"

    def validate(self, cfg: FrameConfig) -> None:
        _check_positive(Q=self.Q)
        if self.G < 0:
            raise SchemeError("G must be non-negative")
        if cfg.N % self.Q:
            raise SchemeError("Q must divide N")
        if self.G >= cfg.N // self.Q:
            raise SchemeError("G must be smaller than N/Q")

    def dim(self, cfg: FrameConfig) -> int:
        return cfg.M * (cfg.N // self.Q - self.G)


@dataclass(frozen=True)
class GbDelay:
    """Contiguous delay-column blocks separated by ``G`` guard columns."""

    Q: int
    G: int = 0

    name = "gb_delay"

    def validate(self, cfg: FrameConfig) -> None:
        _check_positive(Q=self.Q)
        if self.G < 0:
            raise SchemeError("G must be non-negative")
        if cfg.M % self.Q:
            raise SchemeError("Q must divide M")
        if self.G >= cfg.M // self.Q:
            raise SchemeError("G must be smaller than M/Q")

    def dim(self, cfg: FrameConfig) -> int:
        return cfg.N * (cfg.M // self.Q - self.G)


MaScheme = Union[Iddma, Itfma, GbDoppler, GbDelay]
GB_SCHEMES = (GbDoppler, GbDelay)


def _check_positive(**values):
    for key, value in values.items():
        if int(value) != value or value < 1:
            raise SchemeError(f"{key} must be a positive integer")


@dataclass(frozen=True)
class Rectangular:
    """Unit-energy rectangular pulse, amplitude ``1/sqrt(T)`` on ``[0, T)``."""

    name = "rect"

    def __call__(self, t, T: float):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t < T), 1.0 / math.sqrt(T), 0.0)


@dataclass(frozen=True)
class Ideal:
    """Bi-orthogonal reference pulse pair (not realizable, analytic only)."""

    name = "ideal"


PulseShape = Union[Rectangular, Ideal]


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def _check_grid(grid, cfg: FrameConfig) -> np.ndarray:
    grid = np.asarray(grid, dtype=complex)
    if grid.shape[-2:] != cfg.shape:
        raise ValueError(f"grid shape {grid.shape} does not match (N, M) = {cfg.shape}")
    return grid


def isfft(dd, cfg: FrameConfig) -> np.ndarray:
    """DD grid(s) ``[..., k, l]`` to TF grid(s) ``[..., n, m]``.

    ``X[n, m] = 1/(NM) sum_{k,l} x[k, l] exp(-j2pi(ml/M - nk/N))``.
    Leading axes are treated as a batch.
    """
    dd = _check_grid(dd, cfg)
    return np.fft.ifft(np.fft.fft(dd, axis=-1), axis=-2) / cfg.M


def sfft(tf, cfg: FrameConfig) -> np.ndarray:
    """TF grid(s) ``[..., n, m]`` to DD grid(s) ``[..., k, l]`` (unnormalized).

    ``x[k, l] = sum_{n,m} Y[n, m] exp(j2pi(ml/M - nk/N))``; exact inverse of
    :func:`isfft`.
    """
    tf = _check_grid(tf, cfg)
    return np.fft.fft(np.fft.ifft(tf, axis=-1), axis=-2) * cfg.M


# ---------------------------------------------------------------------------
# Allocation sets and index maps
# ---------------------------------------------------------------------------


def _check_ut(scheme: MaScheme, q: int) -> None:
    if not 0 <= q < scheme.Q:
        raise ValueError(f"UT index {q} out of range [0, {scheme.Q})")


def index_map(scheme: MaScheme, q: int, cfg: FrameConfig) -> np.ndarray:
    """Matrix row/column -> DD index pair ``(k, l)``, shape ``(dim, 2)``.

    For ITFMA the pair is the symbol index ``(k', l')`` of ``s_q``; the symbol
    is replicated over the full grid on transmission.
    """
    scheme.validate(cfg)
    _check_ut(scheme, q)
    M, N = cfg.M, cfg.N
    if isinstance(scheme, Iddma):
        n_u, n_v = N // scheme.g2, M // scheme.g1
        u, v = np.meshgrid(np.arange(n_u), np.arange(n_v), indexing="xy")
        # row = u + v * (N/g2): u runs fastest
        k = q // scheme.g1 + scheme.g2 * u.ravel()
        l = q % scheme.g1 + scheme.g1 * v.ravel()
    elif isinstance(scheme, Itfma):
        n_k, n_l = N // scheme.g4, M // scheme.g3
        kk, ll = np.meshgrid(np.arange(n_k), np.arange(n_l), indexing="xy")
        k, l = kk.ravel(), ll.ravel()
    elif isinstance(scheme, GbDoppler):
        rows = N // scheme.Q - scheme.G
        kk, ll = np.meshgrid(np.arange(rows), np.arange(M), indexing="xy")
        k = q * (N // scheme.Q) + kk.ravel()
        l = ll.ravel()
    elif isinstance(scheme, GbDelay):
        cols = M // scheme.Q - scheme.G
        ll, kk = np.meshgrid(np.arange(cols), np.arange(N), indexing="xy")
        # row = k * (M/Q - G) + (l - qM/Q): l runs fastest
        k = kk.ravel()
        l = q * (M // scheme.Q) + ll.ravel()
    else:
        raise TypeError(f"unknown scheme {scheme!r}")
    return np.stack([k, l], axis=1).astype(int)


def allocation_set(scheme: MaScheme, q: int, cfg: FrameConfig) -> set[tuple[int, int]]:
    """DDREs ``(k, l)`` carrying UT ``q``'s symbols."""
    if isinstance(scheme, Itfma):
        scheme.validate(cfg)
        _check_ut(scheme, q)
        return {(k, l) for k in range(cfg.N) for l in range(cfg.M)}
    return {(int(k), int(l)) for k, l in index_map(scheme, q, cfg)}


def itfma_tfre_occupancy(scheme: Itfma, q: int):
    """Predicate ``(n, m) -> bool``: is TFRE ``(n, m)`` used by UT ``q``."""
    g3, g4 = scheme.g3, scheme.g4

    def occupied(n, m):
        return ((np.asarray(m) - q % g3) % g3 == 0) & ((np.asarray(n) - q // g3) % g4 == 0)

    return occupied


def iddma_tf_block(scheme: Iddma, q: int, cfg: FrameConfig) -> tuple[int, int]:
    """Absolute ``(n, m)`` origin of UT ``q``'s contiguous TF region."""
    n_blk, m_blk = cfg.N // scheme.g2, cfg.M // scheme.g1
    return (q % scheme.g2) * n_blk, (q // scheme.g2) * m_blk


# ---------------------------------------------------------------------------
# Linear modulation / demodulation maps over the absolute TF grid
# ---------------------------------------------------------------------------


def dd_symbols_to_grid(scheme: MaScheme, q: int, symbols, cfg: FrameConfig) -> np.ndarray:
    """Place a symbol vector (matrix ordering) on the DD grid of UT ``q``.

    ``symbols`` may carry leading batch axes; output is ``[..., N, M]``.
    ITFMA symbols are replicated quasi-periodically over the whole grid.
    """
    symbols = np.asarray(symbols, dtype=complex)
    idx = index_map(scheme, q, cfg)
    batch = symbols.shape[:-1]
    grid = np.zeros(batch + cfg.shape, dtype=complex)
    if isinstance(scheme, Itfma):
        g3, g4 = scheme.g3, scheme.g4
        n_k, n_l = cfg.N // g4, cfg.M // g3
        for d1 in range(g4):
            for c1 in range(g3):
                phase = np.exp(2j * np.pi * (c1 * (q % g3) / g3 - d1 * (q // g3) / g4))
                grid[..., idx[:, 0] + d1 * n_k, idx[:, 1] + c1 * n_l] = phase * symbols
    else:
        grid[..., idx[:, 0], idx[:, 1]] = symbols
    return grid


def tx_tf_grid(scheme: MaScheme, q: int, symbols, cfg: FrameConfig) -> np.ndarray:
    """Absolute TF symbols ``X_q[n, m]`` transmitted by UT ``q``.

    For IDDMA only the UT's contiguous ``(N/g2) x (M/g1)`` TF region is
    populated, with the values of the first translation period.
    """
    X = isfft(dd_symbols_to_grid(scheme, q, symbols, cfg), cfg)
    if not isinstance(scheme, Iddma):
        return X
    n_blk, m_blk = cfg.N // scheme.g2, cfg.M // scheme.g1
    n0, m0 = iddma_tf_block(scheme, q, cfg)
    out = np.zeros_like(X)
    out[..., n0:n0 + n_blk, m0:m0 + m_blk] = X[..., :n_blk, :m_blk]
    return out


def rx_dd_symbols(scheme: MaScheme, q: int, tf, cfg: FrameConfig, *,
                  paper_iddma_sfft: bool = False) -> np.ndarray:
    """Received symbol vector of UT ``q`` from the absolute TF grid ``Y``.

    ITFMA keeps only the UT's TFREs before the SFFT; GB schemes apply the
    full SFFT and read the UT's DDREs. IDDMA transforms the UT's TF region
    with the SFFT kernel evaluated at the UT's own DDREs and scales by
    ``g1*g2``, which makes a flat channel the identity. With
    ``paper_iddma_sfft`` the local ``(N/g2) x (M/g1)`` SFFT without the
    DDRE offsets and without scaling is used instead.
    """
    tf = _check_grid(tf, cfg)
    idx = index_map(scheme, q, cfg)
    M, N = cfg.M, cfg.N
    if isinstance(scheme, Iddma):
        n_blk, m_blk = N // scheme.g2, M // scheme.g1
        n0, m0 = iddma_tf_block(scheme, q, cfg)
        block = tf[..., n0:n0 + n_blk, m0:m0 + m_blk]
        if paper_iddma_sfft:
            k = idx[:, 0] - q // scheme.g1
            l = idx[:, 1] - q % scheme.g1
            scale = 1.0
        else:
            k, l = idx[:, 0], idx[:, 1]
            scale = float(scheme.Q)
        e_n = np.exp(-2j * np.pi * np.outer(k, np.arange(n_blk)) / N)
        e_m = np.exp(2j * np.pi * np.outer(l, np.arange(m_blk)) / M)
        return scale * np.einsum("rn,rm,...nm->...r", e_n, e_m, block, optimize=True)
    if isinstance(scheme, Itfma):
        n = np.arange(N)[:, None]
        m = np.arange(M)[None, :]
        mask = itfma_tfre_occupancy(scheme, q)(n, m)
        dd = sfft(tf * mask, cfg)
        return dd[..., idx[:, 0], idx[:, 1]]
    dd = sfft(tf, cfg)
    return dd[..., idx[:, 0], idx[:, 1]]
