"""Waveform-level reference simulator.

With rectangular pulses every OTFS waveform is a finite sum of complex
exponentials gated to intervals, so the whole chain can be carried
symbolically: Heisenberg modulation, cyclic prefix, the multipath channel
(delays shift the gates, Dopplers shift the frequencies) and the Wigner
matched filter, whose integrals have closed forms. Nothing here uses the
analytic coupling formulas; the effective channel is obtained by driving
the chain with unit symbols.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import UtChannel
from .grid_core import (FrameConfig, GbDelay, GbDoppler, Iddma, Itfma, MaScheme,
                        SchemeError, dd_symbols_to_grid, iddma_tf_block,
                        index_map, isfft, itfma_tfre_occupancy, rx_dd_symbols, sfft)


@dataclass(frozen=True)
class PiecewiseExpSignal:
    """``s(t) = sum_i amp[i] exp(j2pi freq[i] t) 1{start[i] <= t < stop[i]}``.

    ``amp`` has shape ``(terms,)`` or ``(terms, batch)``; a batch carries many
    signals that share gates and frequencies (one per unit excitation).
    Times are in seconds, frequencies in Hz.
    """

    start: np.ndarray
    stop: np.ndarray
    freq: np.ndarray
    amp: np.ndarray

    def __post_init__(self):
        n = len(self.start)
        if not (len(self.stop) == len(self.freq) == len(self.amp) == n):
            raise ValueError("term arrays must have equal length")
        if np.any(np.asarray(self.stop) < np.asarray(self.start)):
            raise ValueError("every term needs start <= stop")

    @property
    def n_terms(self) -> int:
        return len(self.start)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(np.concatenate([self.start, self.stop]))

    @property
    def support(self) -> tuple[float, float]:
        if self.n_terms == 0:
            return (0.0, 0.0)
        return float(np.min(self.start)), float(np.max(self.stop))

    def __call__(self, t) -> np.ndarray:
        """Evaluate at times ``t``; output ``t.shape + batch``."""
        t = np.asarray(t, dtype=float)
        tt = t[..., None]
        gate = (tt >= self.start) & (tt < self.stop)
        ph = np.where(gate, np.exp(2j * np.pi * self.freq * tt), 0.0)
        return ph @ self.amp

    def __add__(self, other: "PiecewiseExpSignal") -> "PiecewiseExpSignal":
        return PiecewiseExpSignal(np.concatenate([self.start, other.start]),
                                  np.concatenate([self.stop, other.stop]),
                                  np.concatenate([self.freq, other.freq]),
                                  np.concatenate([self.amp, other.amp]))

    def scaled(self, c) -> "PiecewiseExpSignal":
        return PiecewiseExpSignal(self.start, self.stop, self.freq, self.amp * c)


def _empty(batch: tuple = ()) -> PiecewiseExpSignal:
    z = np.zeros(0)
    return PiecewiseExpSignal(z, z, z, np.zeros((0,) + batch, complex))


# ---------------------------------------------------------------------------
# Transmitter
# ---------------------------------------------------------------------------


def heisenberg(tf, cfg: FrameConfig, cp: float | None = None) -> PiecewiseExpSignal:
    """Rectangular-pulse Heisenberg transform of TF grid(s) ``[..., n, m]``.

    A cyclic prefix of length ``cp`` (default ``T``) copies the last ``cp``
    seconds of the frame in front of ``t = 0``.
    """
    tf = np.asarray(tf, dtype=complex)
    if tf.shape[-2:] != cfg.shape:
        raise ValueError(f"TF grid shape {tf.shape} does not match {cfg.shape}")
    cp = cfg.T if cp is None else float(cp)
    if not 0.0 <= cp <= cfg.N * cfg.T:
        raise ValueError("cyclic prefix must lie within the frame")
    N, M, T = cfg.N, cfg.M, cfg.T
    batch = tf.shape[:-2]
    n, m = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    start = (n * T).ravel()
    stop = ((n + 1) * T).ravel()
    freq = (m * cfg.delta_f).ravel()
    amp = np.moveaxis(tf.reshape(batch + (N * M,)), -1, 0) / math.sqrt(T)
    sig = PiecewiseExpSignal(start, stop, freq, amp)
    return with_cyclic_prefix(sig, N * T, cp)


def with_cyclic_prefix(sig: PiecewiseExpSignal, frame: float, cp: float) -> PiecewiseExpSignal:
    """Prepend ``s(t + frame)`` for ``t`` in ``[-cp, 0)``."""
    if cp <= 0:
        return sig
    lo = np.maximum(sig.start, frame - cp)
    keep = lo < sig.stop
    phase = np.exp(2j * np.pi * sig.freq[keep] * frame)
    phase = phase.reshape((-1,) + (1,) * (sig.amp.ndim - 1))
    prefix = PiecewiseExpSignal(lo[keep] - frame, sig.stop[keep] - frame, sig.freq[keep],
                                sig.amp[keep] * phase)
    return prefix + sig


def _check_support(scheme: MaScheme, q: int, dd: np.ndarray, cfg: FrameConfig) -> None:
    if isinstance(scheme, Itfma):
        return
    mask = np.zeros(cfg.shape, bool)
    idx = index_map(scheme, q, cfg)
    mask[idx[:, 0], idx[:, 1]] = True
    if np.any(dd[..., ~mask] != 0):
        raise ValueError(f"DD symbols of UT {q} lie outside its allocation set")


def transmit_tf(scheme: MaScheme, q: int, dd_symbols, cfg: FrameConfig) -> np.ndarray:
    """TF symbols actually put on air by UT ``q`` for DD grid(s) ``[..., k, l]``."""
    dd = np.asarray(dd_symbols, dtype=complex)
    scheme.validate(cfg)
    _check_support(scheme, q, dd, cfg)
    X = isfft(dd, cfg)
    if isinstance(scheme, Iddma):
        nb, mb = cfg.N // scheme.g2, cfg.M // scheme.g1
        n0, m0 = iddma_tf_block(scheme, q, cfg)
        out = np.zeros_like(X)
        out[..., n0:n0 + nb, m0:m0 + mb] = X[..., :nb, :mb]
        return out
    if isinstance(scheme, Itfma):
        n = np.arange(cfg.N)[:, None]
        m = np.arange(cfg.M)[None, :]
        return X * itfma_tfre_occupancy(scheme, q)(n, m)
    return X


def synthesize_tx(scheme: MaScheme, q: int, dd_symbols, cfg: FrameConfig, *,
                  cp: float | None = None) -> PiecewiseExpSignal:
    """Transmitted waveform of UT ``q`` (cyclic prefix included)."""
    return heisenberg(transmit_tf(scheme, q, dd_symbols, cfg), cfg, cp)


def signal_energy(sig: PiecewiseExpSignal, t0: float = -np.inf, t1: float = np.inf):
    """Exact ``int_{t0}^{t1} |s(t)|^2 dt`` (per batch entry)."""
    lo = np.maximum(np.maximum.outer(sig.start, sig.start), t0)
    hi = np.minimum(np.minimum.outer(sig.stop, sig.stop), t1)
    length = np.clip(hi - lo, 0.0, None)
    df = np.subtract.outer(sig.freq, sig.freq)
    gram = np.exp(2j * np.pi * df * lo) * _exp_integral(df, length)
    amp = sig.amp if sig.amp.ndim > 1 else sig.amp[:, None]
    val = np.einsum("ib,ij,jb->b", amp, gram, amp.conj()).real
    return val if sig.amp.ndim > 1 else float(val[0])


# ---------------------------------------------------------------------------
# Channel
# ---------------------------------------------------------------------------


def apply_channel(sig: PiecewiseExpSignal, ch: UtChannel) -> PiecewiseExpSignal:
    """``r(t) = sum_i h_i e^{-j2pi nu_i tau_i} s(t - tau_i) e^{j2pi nu_i t}`` (noiseless)."""
    out = None
    for p in ch.paths:
        phase = p.gain * np.exp(-2j * np.pi * p.doppler * p.delay) \
            * np.exp(-2j * np.pi * sig.freq * p.delay)
        phase = phase.reshape((-1,) + (1,) * (sig.amp.ndim - 1))
        part = PiecewiseExpSignal(sig.start + p.delay, sig.stop + p.delay,
                                  sig.freq + p.doppler, sig.amp * phase)
        out = part if out is None else out + part
    return out


# ---------------------------------------------------------------------------
# Receiver
# ---------------------------------------------------------------------------


def _exp_integral(g, length):
    """``int_0^length exp(j2pi g s) ds`` for arrays ``g`` and ``length``."""
    gl = g * length
    return length * np.exp(1j * np.pi * gl) * np.sinc(gl)


def wigner(rx: PiecewiseExpSignal, cfg: FrameConfig) -> np.ndarray:
    """Exact rectangular-pulse Wigner transform ``Y[..., n, m]``.

    ``Y[n, m] = int r(t) g_rx(t - nT) exp(-j2pi m delta_f (t - nT)) dt``; each
    term contributes a closed-form exponential integral over its overlap
    with window ``n``.
    """
    N, M, T = cfg.N, cfg.M, cfg.T
    batch = rx.amp.shape[1:]
    out = np.zeros((N, M) + batch, complex)
    g = rx.freq[:, None] - np.arange(M)[None, :] * cfg.delta_f  # [term, m]
    for n in range(N):
        lo = np.maximum(rx.start, n * T)
        hi = np.minimum(rx.stop, (n + 1) * T)
        live = hi > lo
        if not np.any(live):
            continue
        s_lo = (lo[live] - n * T)[:, None]
        length = (hi[live] - lo[live])[:, None]
        gl = g[live]
        coef = (np.exp(2j * np.pi * rx.freq[live] * n * T)[:, None]
                * np.exp(2j * np.pi * gl * s_lo) * _exp_integral(gl, length))
        out[n] = np.tensordot(coef, rx.amp[live], axes=(0, 0)) / math.sqrt(T)
    return np.moveaxis(out.reshape((N, M, -1)), -1, 0).reshape(batch + (N, M))


def receive_dd(scheme: MaScheme, qp: int, rx: PiecewiseExpSignal, cfg: FrameConfig, *,
               paper_iddma_sfft: bool = False) -> np.ndarray:
    """Received symbol vector(s) of UT ``qp``, shape ``batch + (dim,)``."""
    return rx_dd_symbols(scheme, qp, wigner(rx, cfg), cfg, paper_iddma_sfft=paper_iddma_sfft)


def riemann_wigner(rx: PiecewiseExpSignal, cfg: FrameConfig, L: int) -> np.ndarray:
    """Midpoint-rule approximation of :func:`wigner` with ``L`` points per window.

    Only a cross-check: the gates make the integrand discontinuous, so the
    error decays like ``1/L``.
    """
    N, M, T = cfg.N, cfg.M, cfg.T
    s = (np.arange(L) + 0.5) * T / L
    t = np.arange(N)[:, None] * T + s[None, :]  # [n, s]
    r = rx(t)  # [n, s, *batch]
    kern = np.exp(-2j * np.pi * np.outer(s, np.arange(M)) * cfg.delta_f)  # [s, m]
    out = np.einsum("ns...,sm->nm...", r, kern) * (T / L) / math.sqrt(T)
    batch = rx.amp.shape[1:]
    return np.moveaxis(out.reshape((N, M, -1)), -1, 0).reshape(batch + (N, M))


# ---------------------------------------------------------------------------
# Unit-excitation matrices
# ---------------------------------------------------------------------------


def unit_excitations(scheme: MaScheme, q: int, cfg: FrameConfig) -> np.ndarray:
    """DD grids ``[j, k, l]`` for unit symbol ``j`` of UT ``q``."""
    dim = scheme.dim(cfg)
    return dd_symbols_to_grid(scheme, q, np.eye(dim, dtype=complex), cfg)


def oracle_matrix(scheme: MaScheme, q: int, qp: int, ch_q: UtChannel, cfg: FrameConfig, *,
                  paper_iddma_sfft: bool = False, cp: float | None = None) -> np.ndarray:
    """Column ``j``: UT ``qp``'s noiseless output for unit symbol ``j`` of UT ``q``."""
    sig = synthesize_tx(scheme, q, unit_excitations(scheme, q, cfg), cfg, cp=cp)
    y = receive_dd(scheme, qp, apply_channel(sig, ch_q), cfg,
                   paper_iddma_sfft=paper_iddma_sfft)
    return y.T


# ---------------------------------------------------------------------------
# Bi-orthogonal (ideal) pulse reference
# ---------------------------------------------------------------------------


def ideal_tf_gain(ch: UtChannel, cfg: FrameConfig) -> np.ndarray:
    """Per-TFRE gain ``H[n, m] = sum_i h_i e^{j2pi nu_i nT} e^{-j2pi(nu_i + m delta_f) tau_i}``."""
    n = np.arange(cfg.N)[:, None] * cfg.T
    m = np.arange(cfg.M)[None, :] * cfg.delta_f
    out = np.zeros(cfg.shape, complex)
    for p in ch.paths:
        out += p.gain * np.exp(2j * np.pi * p.doppler * n) \
            * np.exp(-2j * np.pi * (p.doppler + m) * p.delay)
    return out


def ideal_full_kernel(ch: UtChannel, cfg: FrameConfig) -> np.ndarray:
    """Full DD kernel under ideal pulses; row ``k~ M + l~``, column ``k M + l``."""
    units = np.eye(cfg.size, dtype=complex).reshape(cfg.size, cfg.N, cfg.M)
    out = sfft(ideal_tf_gain(ch, cfg) * isfft(units, cfg), cfg)
    return out.reshape(cfg.size, cfg.size).T


def ideal_pulse_matrix(scheme: MaScheme, q: int, qp: int, ch: UtChannel, cfg: FrameConfig, *,
                       kernel: np.ndarray | None = None) -> np.ndarray:
    """Effective matrix from UT ``q`` to UT ``qp`` under bi-orthogonal pulses.

    The TF channel is a pointwise product with :func:`ideal_tf_gain`. For
    GB schemes a precomputed :func:`ideal_full_kernel` may be supplied.
    """
    if isinstance(scheme, Itfma):
        raise SchemeError("ideal-pulse reference is defined for IDDMA and guard-band schemes")
    scheme.validate(cfg)
    if isinstance(scheme, (GbDoppler, GbDelay)):
        if kernel is None:
            kernel = ideal_full_kernel(ch, cfg)
        rows = index_map(scheme, qp, cfg) @ np.array([cfg.M, 1])
        cols = index_map(scheme, q, cfg) @ np.array([cfg.M, 1])
        return kernel[np.ix_(rows, cols)]
    return rx_dd_symbols(scheme, qp, ideal_tf_gain(ch, cfg) * _unit_tf(scheme, q, cfg), cfg).T


@lru_cache(maxsize=64)
def _unit_tf(scheme: MaScheme, q: int, cfg: FrameConfig) -> np.ndarray:
    X = transmit_tf(scheme, q, unit_excitations(scheme, q, cfg), cfg)
    X.setflags(write=False)
    return X


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def sample_dd_noise(scheme: MaScheme, qp: int, cfg: FrameConfig, N0: float,
                    rng: np.random.Generator, size: int, *, L: int | None = None,
                    paper_iddma_sfft: bool = False) -> np.ndarray:
    """Received DD noise of UT ``qp`` for white noise of PSD ``N0``.

    The noise enters as independent integrals over ``L`` subintervals per
    window (Brownian increments of variance ``N0 T / L``); the Wigner
    kernel is held at its left-endpoint value on each subinterval. With
    ``L >= M`` (default ``2M``) the subcarrier kernels stay orthogonal.
    Returns shape ``(size, dim)``.
    """
    L = 2 * cfg.M if L is None else int(L)
    if L < cfg.M:
        raise ValueError("need at least M subintervals per window")
    scale = math.sqrt(N0 * cfg.T / L / 2.0)
    shape = (size, cfg.N, L)
    w = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    Y = np.fft.fft(w, axis=-1)[..., :cfg.M] / math.sqrt(cfg.T)
    return rx_dd_symbols(scheme, qp, Y, cfg, paper_iddma_sfft=paper_iddma_sfft)


__all__ = [
    "PiecewiseExpSignal", "heisenberg", "with_cyclic_prefix", "transmit_tf", "synthesize_tx",
    "signal_energy", "apply_channel", "wigner", "receive_dd", "riemann_wigner",
    "unit_excitations", "oracle_matrix", "ideal_tf_gain", "ideal_full_kernel",
    "ideal_pulse_matrix", "sample_dd_noise",
]
