"""Closed-form effective channel matrices under rectangular pulses.

Every builder evaluates the analytic TF-coupling / DD-kernel expressions path
by path. The only primitives are :func:`phase_ratio` (finite exponential
integral) and :func:`dirichlet_ratio` (finite geometric sum); the sums over
subcarriers are carried out as small matrix products.

Delays and Dopplers enter in normalized form ``tau/T`` and ``nu/delta_f``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import UtChannel
from .grid_core import FrameConfig, GbDelay, GbDoppler, Iddma, Itfma, MaScheme, index_map
from .td_oracle import ideal_full_kernel, ideal_pulse_matrix

TAYLOR_THRESHOLD = 1e-6
INTEGER_THRESHOLD = 1e-9


# ---------------------------------------------------------------------------
# Scalar kernels
# ---------------------------------------------------------------------------


def phase_ratio(xi, a):
    """``(exp(j2pi xi a) - 1) / (j2pi xi)``, i.e. ``int_0^a exp(j2pi xi t) dt``.

    Broadcasts over ``xi`` and ``a``. The removable singularity at ``xi = 0``
    is handled with a three-term Taylor series below ``|xi| < 1e-6``.
    """
    xi = np.asarray(xi, dtype=float)
    a = np.asarray(a, dtype=float)
    xi, a = np.broadcast_arrays(xi, a)
    za = xi * a
    out = a * np.exp(1j * np.pi * za) * np.sinc(za)
    small = np.abs(xi) < TAYLOR_THRESHOLD
    if np.any(small):
        xs, as_ = xi[small], a[small]
        out = np.array(out, dtype=complex)
        out[small] = (as_ + 1j * np.pi * xs * as_**2
                      - (2.0 / 3.0) * np.pi**2 * xs**2 * as_**3)
    return out[()] if out.ndim == 0 else out


def dirichlet_ratio(x, P: int):
    """``sum_{n=0}^{P-1} exp(j2pi n x)`` = ``P e^{j pi (P-1) x} sinc(Px)/sinc(x)``.

    The argument is reduced modulo one first (the sum is 1-periodic), so the
    sinc ratio never divides by zero; within ``1e-9`` of an integer the
    geometric sum is evaluated term by term.
    """
    x = np.asarray(x, dtype=float)
    P = int(P)
    r = x - np.round(x)
    out = P * np.exp(1j * np.pi * (P - 1) * r) * np.sinc(P * r) / np.sinc(r)
    near = np.abs(r) < INTEGER_THRESHOLD
    if np.any(near):
        out = np.array(out, dtype=complex)
        rn = r[near]
        out[near] = np.exp(2j * np.pi * np.multiply.outer(rn, np.arange(P))).sum(axis=-1)
    return out[()] if out.ndim == 0 else out


def _normalized_paths(ch: UtChannel, cfg: FrameConfig):
    return ch.gains, ch.delays / cfg.T, ch.dopplers / cfg.delta_f


# ---------------------------------------------------------------------------
# IDDMA
# ---------------------------------------------------------------------------


def _congruent(a: int, b: int, g: int) -> bool:
    return (a - b) % g == 0


def iddma_tf_coupling(q: int, qp: int, ch: UtChannel, scheme: Iddma, cfg: FrameConfig):
    """TF couplings ``(H1, H2, H3)``, each indexed ``[m, n~, m~]``.

    ``H1``/``H2`` are non-zero only for ``q = qp (mod g2)``; ``H3`` (the
    wrap-around term from the preceding TF region, carries ``delta[n~]``) only
    for ``q = qp - 1 (mod g2)``. Structural zeros are returned otherwise.

    When ``qp``'s TF region starts the frame, the preceding region is seen
    through the cyclic prefix, so ``H3`` uses the Doppler phase of time
    ``-T`` rather than ``(N-1)T``.
    """
    g1, g2 = scheme.g1, scheme.g2
    Mb, Nb = cfg.M // g1, cfg.N // g2
    h, tn, vn = _normalized_paths(ch, cfg)
    m = np.arange(Mb)[:, None, None]
    nt = np.arange(Nb)[None, :, None]
    mt = np.arange(Mb)[None, None, :]
    shape = (Mb, Nb, Mb)
    H1 = np.zeros(shape, complex)
    H2 = np.zeros(shape, complex)
    H3 = np.zeros(shape, complex)
    same = _congruent(q, qp, g2)
    wrap = _congruent(q, qp - 1, g2)
    for hi, ti, vi in zip(h, tn, vn):
        xi = m - mt + Mb * (q // g2 - qp // g2) + vi
        rx_phase = np.exp(-2j * np.pi * (mt + Mb * (qp // g2)) * ti)
        if same:
            H1 += (hi * rx_phase * np.exp(2j * np.pi * vi * (nt + Nb * (q % g2)))
                   * phase_ratio(xi, 1.0 - ti))
            H2 += (hi * rx_phase * np.exp(2j * np.pi * xi)
                   * np.exp(2j * np.pi * vi * (nt - 1 + Nb * (q % g2)))
                   * phase_ratio(-xi, ti))
        if wrap:
            t_prev = Nb * (q % g2 + 1) - 1 if qp % g2 else -1
            H3 += (hi * rx_phase * np.exp(2j * np.pi * xi) * np.exp(2j * np.pi * vi * t_prev)
                   * phase_ratio(-xi, ti) * (nt == 0))
    return H1, H2, H3


def iddma_received_tf(qp: int, tf_symbols, channels, scheme: Iddma, cfg: FrameConfig):
    """Noiseless ``Y_qp[n~, m~]`` reassembled from the TF couplings.

    ``tf_symbols[q]`` is UT ``q``'s local ``(N/g2, M/g1)`` TF block.
    """
    Nb = cfg.N // scheme.g2
    Y = np.zeros_like(np.asarray(tf_symbols[0], dtype=complex))
    for q, (X, ch) in enumerate(zip(tf_symbols, channels)):
        H1, H2, H3 = iddma_tf_coupling(q, qp, ch, scheme, cfg)
        X = np.asarray(X, dtype=complex)
        Y += np.einsum("nm,mnk->nk", X, H1)
        X_prev = np.vstack([np.zeros((1, X.shape[1])), X[:-1]])
        Y += np.einsum("nm,mnk->nk", X_prev, H2)
        Y += np.einsum("m,mnk->nk", X[Nb - 1], H3)
    return Y


def iddma_dd_matrices(q: int, qp: int, ch: UtChannel, scheme: Iddma, cfg: FrameConfig, *,
                      paper_sfft: bool = False):
    """DD matrices ``(h1, h2)`` of size ``MN/Q``, row ``u~ + v~ N/g2``.

    ``h1`` (same ``q mod g2``) merges the in-region ICI/ISI terms through the
    Doppler Dirichlet factor; ``h2`` (``q = qp - 1 mod g2``) is the
    wrap-around coupling from the preceding TF region. The default receiver
    evaluates the SFFT kernel at ``qp``'s own DDREs and scales by ``g1 g2``;
    ``paper_sfft`` selects the local SFFT with unit scaling instead.
    """
    g1, g2 = scheme.g1, scheme.g2
    M, N = cfg.M, cfg.N
    Mb, Nb = M // g1, N // g2
    dim = Mb * Nb
    h1 = np.zeros((Mb, Nb, Mb, Nb), complex)  # [v~, u~, v, u]
    h2 = np.zeros((Mb, Nb, Mb, Nb), complex)
    same = _congruent(q, qp, g2)
    wrap = _congruent(q, qp - 1, g2)
    if not (same or wrap):
        return h1.reshape(dim, dim), h2.reshape(dim, dim)

    u = np.arange(Nb)
    v = np.arange(Mb)
    k_tx = q // g1 + g2 * u
    l_tx = q % g1 + g1 * v
    if paper_sfft:
        k_rx, l_rx, scale = g2 * u, g1 * v, 1.0
    else:
        k_rx, l_rx, scale = qp // g1 + g2 * u, qp % g1 + g1 * v, float(scheme.Q)

    m = np.arange(Mb)
    ftx = np.exp(-2j * np.pi * np.outer(m, l_tx) / M)  # [m, v]
    h, tn, vn = _normalized_paths(ch, cfg)
    for hi, ti, vi in zip(h, tn, vn):
        xi = m[None, :] - m[:, None] + Mb * (q // g2 - qp // g2) + vi  # [m~, m]
        frx = np.exp(2j * np.pi * m[None, :] * (l_rx[:, None] / M - ti))  # [v~, m~]
        common = hi * np.exp(2j * np.pi * (Nb * vi * (q % g2) - Mb * ti * (qp // g2)))
        if same:
            psi = (k_tx[None, :] - k_rx[:, None]) / N + vi  # [u~, u]
            d = dirichlet_ratio(psi, Nb)
            p1 = phase_ratio(xi, 1.0 - ti)
            p2 = ti * np.sinc(xi * ti) * np.exp(-2j * np.pi * xi * (ti / 2.0 - 1.0))
            l1 = frx @ p1 @ ftx
            l2 = frx @ p2 @ ftx
            isi = (d - 1.0) * np.exp(-2j * np.pi * (k_tx[None, :] / N + vi))
            h1 += common * (np.einsum("ab,cd->cadb", d, l1) + np.einsum("ab,cd->cadb", isi, l2))
        if wrap:
            cp = np.exp(-2j * np.pi * vi * N) if qp % g2 == 0 else 1.0
            p3 = np.exp(2j * np.pi * xi * (1.0 - ti / 2.0)) * np.sinc(xi * ti)
            l3 = frx @ p3 @ ftx
            tx_phase = np.exp(2j * np.pi * (Nb - 1) * (k_tx / N + vi))  # [u]
            h2 += (common * cp * ti
                   * np.einsum("b,cd->cdb", tx_phase, l3)[:, None, :, :])
    norm = scale / (M * N)
    return norm * h1.reshape(dim, dim), norm * h2.reshape(dim, dim)


# ---------------------------------------------------------------------------
# ITFMA
# ---------------------------------------------------------------------------


def itfma_tf_coupling(q: int, ch: UtChannel, cfg: FrameConfig):
    """Full-grid TF couplings ``(Hdd1, Hdd2)`` indexed ``[m, n~, m~]``.

    ``Y[n~, m~] = sum_m X[n~, m] Hdd1 + X[n~ - 1, m] Hdd2``; the symbol of
    time slot ``-1`` is the cyclic prefix copy of slot ``N - 1``. These are
    also the TF couplings of both GB schemes.
    """
    M, N = cfg.M, cfg.N
    h, tn, vn = _normalized_paths(ch, cfg)
    m = np.arange(M)[:, None, None]
    nt = np.arange(N)[None, :, None]
    mt = np.arange(M)[None, None, :]
    H1 = np.zeros((M, N, M), complex)
    H2 = np.zeros((M, N, M), complex)
    for hi, ti, vi in zip(h, tn, vn):
        xi1 = m - mt + vi
        base = hi * np.exp(-2j * np.pi * mt * ti)
        H1 += base * np.exp(2j * np.pi * nt * vi) * phase_ratio(xi1, 1.0 - ti)
        H2 += (base * np.exp(2j * np.pi * (nt - 1) * vi) * np.exp(2j * np.pi * xi1)
               * phase_ratio(-xi1, ti))
    return H1, H2


def itfma_dd_matrix(q: int, qp: int, ch: UtChannel, scheme: Itfma, cfg: FrameConfig):
    """Coupling from UT ``q``'s symbols ``s_q`` to UT ``qp``'s received symbols.

    Size ``MN/(g3 g4)``; row ``k~ + l~ N/g4``, column ``k' + l' N/g4``.
    """
    g3, g4 = scheme.g3, scheme.g4
    M, N = cfg.M, cfg.N
    Mb, Nb = M // g3, N // g4
    cq, fq = qp % g3, qp // g3
    kt = np.arange(Nb)  # k~ and k'
    lt = np.arange(Mb)  # l~, l', m'
    m = np.arange(M)
    eps = q // g3 - fq
    c4a = dirichlet_ratio(eps / g4, g4)
    c4b = dirichlet_ratio((eps + 1) / g4, g4)
    c3 = dirichlet_ratio(((q % g3) - m) / g3, g3)  # [m]
    ftx = np.exp(-2j * np.pi * np.outer(m, lt) / M) * c3[:, None]  # [m, l']
    doppler, delay = [], []  # per path and term: [k~, k'] and [l~, l'] factors
    h, tn, vn = _normalized_paths(ch, cfg)
    for hi, ti, vi in zip(h, tn, vn):
        frx = np.exp(-2j * np.pi * g3 * np.outer(ti - lt / M, lt))  # [l~, m']
        kappa = m[None, :] - (cq + g3 * lt[:, None]) + vi  # [m', m]
        k1 = phase_ratio(kappa, 1.0 - ti)
        k2 = np.exp(2j * np.pi * kappa) * phase_ratio(-kappa, ti)
        dop = dirichlet_ratio(g4 * (vi + (kt[None, :] - kt[:, None]) / N), Nb)  # [k~, k']
        tx_phase = np.exp(2j * np.pi * ((vi + kt / N) * fq - cq * ti))  # [k']
        isi_phase = np.exp(-2j * np.pi * (vi + kt / N))  # [k']
        a = dop * tx_phase[None, :]
        doppler += [a, a * isi_phase[None, :]]
        delay += [hi * c4a * (frx @ k1 @ ftx), hi * c4b * (frx @ k2 @ ftx)]
    A = np.stack(doppler).reshape(len(doppler), Nb * Nb)
    B = np.stack(delay).reshape(len(delay), Mb * Mb)
    out = (B.T @ A).reshape(Mb, Mb, Nb, Nb).transpose(0, 2, 1, 3)  # [l~, k~, l', k']
    rx_phase = np.exp(2j * np.pi * (cq * lt[:, None] / M - kt[None, :] * fq / N))  # [l~, k~]
    out *= rx_phase[:, :, None, None] / (M * N)
    dim = Mb * Nb
    return out.reshape(dim, dim)


# ---------------------------------------------------------------------------
# Guard-band schemes
# ---------------------------------------------------------------------------


def gb_kernel(ch: UtChannel, cfg: FrameConfig) -> np.ndarray:
    """Full DD kernel ``h[k~, l~, k, l]`` as an ``(MN, MN)`` matrix.

    Row ``k~ M + l~``, column ``k M + l``. It does not depend on the receiving
    UT; the GB schemes differ only in which rows/columns they keep.
    """
    M, N = cfg.M, cfg.N
    k = np.arange(N)
    l = np.arange(M)
    m = np.arange(M)
    ftx = np.exp(-2j * np.pi * np.outer(m, l) / M)  # [m, l]
    h, tn, vn = _normalized_paths(ch, cfg)
    doppler, delay = [], []  # per path and term: [k~, k] and [l~, l] factors
    for hi, ti, vi in zip(h, tn, vn):
        frx = np.exp(2j * np.pi * m[None, :] * (l[:, None] / M - ti))
        xi1 = m[None, :] - m[:, None] + vi  # [m~, m]
        l1 = frx @ phase_ratio(xi1, 1.0 - ti) @ ftx
        l2 = frx @ phase_ratio(-xi1, ti) @ ftx
        d = dirichlet_ratio((k[None, :] - k[:, None]) / N + vi, N)  # [k~, k]
        doppler += [d, d * np.exp(-2j * np.pi * k / N)[None, :]]
        delay += [hi * l1, hi * l2]
    # sum over paths of outer products, as one matrix product
    A = np.stack(doppler).reshape(len(doppler), N * N)
    B = np.stack(delay).reshape(len(delay), M * M)
    out = (A.T @ B).reshape(N, N, M, M).transpose(0, 2, 1, 3) / (M * N)
    return out.reshape(M * N, M * N)


def _flat(idx: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    return idx[:, 0] * cfg.M + idx[:, 1]


def gb_dd_matrix(q: int, qp: int, ch: UtChannel, scheme, cfg: FrameConfig, *,
                 kernel: np.ndarray | None = None):
    """Rows of ``R_qp``, columns of ``R_q``, laid out by the scheme's index map."""
    if not isinstance(scheme, (GbDoppler, GbDelay)):
        raise TypeError("gb_dd_matrix needs a GbDoppler or GbDelay scheme")
    if kernel is None:
        kernel = gb_kernel(ch, cfg)
    rows = _flat(index_map(scheme, qp, cfg), cfg)
    cols = _flat(index_map(scheme, q, cfg), cfg)
    return kernel[np.ix_(rows, cols)]


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


@dataclass
class EffectiveChannel:
    """Matrices seen by receiving UT ``q_prime``.

    ``interferers`` holds ``(source UT, tag, matrix)``; tags are ``"h1"`` and
    ``"h2"`` for IDDMA and ``"mui"`` for the other schemes.
    """

    scheme: MaScheme
    q_prime: int
    useful: np.ndarray
    interferers: list = field(default_factory=list)
    index_map: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.useful.shape[0]

    @property
    def tags(self) -> set:
        return {(q, tag) for q, tag, _ in self.interferers}

    def per_source(self) -> dict[int, np.ndarray]:
        """Interference matrices summed per transmitting UT.

        Terms from the same UT carry the same symbols and must be added
        before forming covariances (IDDMA with ``g2 = 1`` has both an
        ``h1`` and an ``h2`` term from every other UT).
        """
        out: dict[int, np.ndarray] = {}
        for q, _, H in self.interferers:
            out[q] = out[q] + H if q in out else H
        return out


def interferer_tags(scheme: MaScheme, qp: int) -> list[tuple[int, str]]:
    """Interference terms entering UT ``qp``'s covariance."""
    Q = scheme.Q
    if isinstance(scheme, Iddma):
        g2 = scheme.g2
        tags = [(q, "h1") for q in range(Q) if q != qp and _congruent(q, qp, g2)]
        tags += [(q, "h2") for q in range(Q) if q != qp and _congruent(q, qp - 1, g2)]
        return tags
    return [(q, "mui") for q in range(Q) if q != qp]


def build_effective_channel(scheme: MaScheme, qp: int, channels, cfg: FrameConfig, *,
                            pulse: str = "rect", kernels=None) -> EffectiveChannel:
    """Assemble the useful and interference matrices for receiving UT ``qp``.

    ``kernels`` optionally carries precomputed GB kernels, one per UT.
    """
    scheme.validate(cfg)
    if len(channels) != scheme.Q:
        raise ValueError(f"expected {scheme.Q} channels, got {len(channels)}")
    if not 0 <= qp < scheme.Q:
        raise ValueError(f"UT index {qp} out of range")
    if pulse not in ("rect", "ideal"):
        raise ValueError(f"unknown pulse {pulse!r}")

    if pulse == "ideal":
        def pair(q):
            return ideal_pulse_matrix(scheme, q, qp, channels[q], cfg,
                                      kernel=None if kernels is None else kernels[q])
        useful = pair(qp)
        inter = [(q, "mui", pair(q)) for q in range(scheme.Q) if q != qp]
        return EffectiveChannel(scheme, qp, useful, inter, index_map(scheme, qp, cfg))

    if isinstance(scheme, Iddma):
        cache = {}

        def mats(q):
            if q not in cache:
                cache[q] = iddma_dd_matrices(q, qp, channels[q], scheme, cfg)
            return cache[q]
        useful = mats(qp)[0]
        if scheme.g2 == 1:
            # the preceding TF region is the UT's own (through the cyclic prefix)
            useful = useful + mats(qp)[1]
        inter = [(q, tag, mats(q)[0 if tag == "h1" else 1])
                 for q, tag in interferer_tags(scheme, qp)]
    elif isinstance(scheme, Itfma):
        useful = itfma_dd_matrix(qp, qp, channels[qp], scheme, cfg)
        inter = [(q, "mui", itfma_dd_matrix(q, qp, channels[q], scheme, cfg))
                 for q, _ in interferer_tags(scheme, qp)]
    else:
        def mat(q):
            kern = None if kernels is None else kernels[q]
            return gb_dd_matrix(q, qp, channels[q], scheme, cfg, kernel=kern)
        useful = mat(qp)
        inter = [(q, "mui", mat(q)) for q, _ in interferer_tags(scheme, qp)]
    return EffectiveChannel(scheme, qp, useful, inter, index_map(scheme, qp, cfg))


def build_all(scheme: MaScheme, channels, cfg: FrameConfig, *, pulse: str = "rect",
              kernels=None) -> list[EffectiveChannel]:
    """Effective channels of every receiving UT for one channel draw."""
    if kernels is None and isinstance(scheme, (GbDoppler, GbDelay)):
        kernels = gb_kernels(channels, cfg, pulse)
    return [build_effective_channel(scheme, qp, channels, cfg, pulse=pulse, kernels=kernels)
            for qp in range(scheme.Q)]


def gb_kernels(channels, cfg: FrameConfig, pulse: str = "rect") -> list[np.ndarray]:
    fn = gb_kernel if pulse == "rect" else ideal_full_kernel
    return [fn(ch, cfg) for ch in channels]


def dump_matrix_csv(path, matrix) -> None:
    """Write ``row,col,re,im`` for every entry."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "re", "im"])
        for (r, c), val in np.ndenumerate(matrix):
            writer.writerow([r, c, repr(float(val.real)), repr(float(val.imag))])


def load_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n_r = max(int(r["row"]) for r in rows) + 1
    n_c = max(int(r["col"]) for r in rows) + 1
    out = np.zeros((n_r, n_c), complex)
    for r in rows:
        out[int(r["row"]), int(r["col"])] = complex(float(r["re"]), float(r["im"]))
    return out
