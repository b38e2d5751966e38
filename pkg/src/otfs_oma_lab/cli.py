"""Command-line driver: figure presets, config files, CSV and SVG output.

Config files are INI-style key/value documents; a leading ``[experiment]``
header is optional::

    scheme = iddma
    g1 = 3
    g2 = 2
    nu_max = 300, 600
    snr_start = 0
    snr_stop = 40
    snr_step = 5
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .grid_core import FrameConfig, GbDelay, GbDoppler, Iddma, Itfma, MaScheme, SchemeError
from .se_engine import CONVENTIONS, SeCurve, default_threads, run_experiment

CSV_COLUMNS = ("scheme", "snr_db", "nu_max_hz", "Q", "g1_or_g3", "g2_or_g4", "G", "pulse",
               "trials", "sum_se_mean", "sum_se_stderr", "per_ut_se_mean")

DEFAULT_SNR = tuple(float(s) for s in range(0, 41, 5))
SCHEME_LABELS = {"iddma": "IDDMA", "itfma": "ITFMA", "gb_doppler": "GB-Doppler",
                 "gb_delay": "GB-Delay"}


class ConfigError(ValueError):
    """Invalid experiment description."""


@dataclass(frozen=True)
class Series:
    """One scheme/pulse combination evaluated for each Doppler value."""

    scheme: MaScheme
    pulse: str = "rect"
    optimize_g: bool = True


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    frame: FrameConfig
    series: tuple[Series, ...]
    nu_max: tuple[float, ...]
    snr_grid: tuple[float, ...] = DEFAULT_SNR
    trials: int = 100
    seed: int = 0
    snr_convention: str = "received"
    x_axis: str = "snr"  # "snr" or "Q"

    def __post_init__(self):
        if not self.series:
            raise ConfigError("at least one scheme is required")
        if not self.snr_grid:
            raise ConfigError("snr grid is empty")
        if not self.nu_max:
            raise ConfigError("nu_max list is empty")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.snr_convention not in CONVENTIONS:
            raise ConfigError(f"snr_convention must be one of {CONVENTIONS}")
        for s in self.series:
            s.scheme.validate(self.frame)
        for nu in self.nu_max:
            if not 0 <= nu < self.frame.delta_f:
                raise ConfigError("nu_max must lie in [0, delta_f)")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _four(g_a: int, g_b: int, Q: int, ideal: bool) -> tuple[Series, ...]:
    rect = (Series(Iddma(g_a, g_b)), Series(Itfma(g_a, g_b)),
            Series(GbDoppler(Q)), Series(GbDelay(Q)))
    if not ideal:
        return rect
    return rect + (Series(Iddma(g_a, g_b), "ideal"), Series(GbDoppler(Q), "ideal"),
                   Series(GbDelay(Q), "ideal"))


def _q_sweep() -> tuple[Series, ...]:
    frame = FrameConfig(36, 18)
    out = []
    for Q, (ga, gb) in ((6, (3, 2)), (9, (3, 3)), (12, (4, 3)), (18, (6, 3))):
        out += [Series(Iddma(ga, gb)), Series(Itfma(ga, gb)), Series(Iddma(ga, gb), "ideal")]
        for gb_scheme in (GbDoppler(Q), GbDelay(Q)):
            try:
                gb_scheme.validate(frame)
            except SchemeError:
                continue  # e.g. Q = 12 does not divide N = 18
            out.append(Series(gb_scheme))
    return tuple(out)


def presets() -> dict[str, ExperimentSpec]:
    frame = FrameConfig(36, 18, 15e3)
    base = dict(frame=frame, snr_grid=DEFAULT_SNR)
    return {
        "fig4": ExperimentSpec("fig4", series=_four(3, 2, 6, True), nu_max=(300.0,), **base),
        "fig5": ExperimentSpec("fig5", series=_four(3, 3, 9, True), nu_max=(300.0,), **base),
        "fig6": ExperimentSpec("fig6", series=_four(6, 3, 18, True), nu_max=(300.0,), **base),
        "fig7": ExperimentSpec("fig7", series=_four(3, 2, 6, False), nu_max=(600.0,), **base),
        "fig8": ExperimentSpec("fig8", series=_four(3, 2, 6, False), nu_max=(1200.0,), **base),
        "fig9": ExperimentSpec("fig9", series=(Series(Iddma(3, 2)), Series(Itfma(3, 2))),
                               nu_max=(0.0, 300.0, 600.0, 1200.0), **base),
        "fig10": ExperimentSpec("fig10", frame=frame, series=_q_sweep(), nu_max=(600.0,),
                                snr_grid=(23.0,), x_axis="Q"),
    }


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_KNOWN = {"name", "m", "n", "delta_f", "scheme", "g1", "g2", "g3", "g4", "q", "g", "pulse",
          "nu_max", "snr_start", "snr_stop", "snr_step", "snr_db", "trials", "seed",
          "snr_convention"}


def _int(d, key, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    try:
        return int(d[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {d[key]!r}") from None


def _floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of numbers") from None


def _snr_grid(d) -> tuple[float, ...]:
    if "snr_db" in d:
        return _floats(d["snr_db"], "snr_db")
    start = float(d.get("snr_start", 0))
    stop = float(d.get("snr_stop", 40))
    step = float(d.get("snr_step", 5))
    if step <= 0:
        raise ConfigError("snr_step must be positive")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(float(start + i * step) for i in range(max(n, 0)))


def _scheme(d) -> tuple[MaScheme, bool]:
    if "scheme" not in d:
        raise ConfigError("missing key 'scheme'")
    kind = d["scheme"].strip().lower()
    if kind == "iddma":
        return Iddma(_int(d, "g1"), _int(d, "g2")), False
    if kind == "itfma":
        return Itfma(_int(d, "g3"), _int(d, "g4")), False
    if kind in ("gb_doppler", "gb_delay"):
        g_text = d.get("g", "optimize").strip().lower()
        optimize = g_text == "optimize"
        G = 0 if optimize else _int(d, "g")
        cls = GbDoppler if kind == "gb_doppler" else GbDelay
        return cls(_int(d, "q"), G), optimize
    raise ConfigError(f"unknown scheme {d['scheme']!r}")


def parse_config(text: str) -> ExperimentSpec:
    """Parse and validate a key/value experiment description."""
    parser = configparser.ConfigParser()
    body = text if text.lstrip().startswith("[") else "[experiment]\n" + text
    try:
        parser.read_string(body)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if parser.sections() != ["experiment"]:
        raise ConfigError("config must contain exactly one [experiment] section")
    d = dict(parser["experiment"])
    unknown = sorted(set(d) - _KNOWN)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    try:
        frame = FrameConfig(_int(d, "m", 36), _int(d, "n", 18), float(d.get("delta_f", 15000)))
        scheme, optimize = _scheme(d)
        scheme.validate(frame)
    except SchemeError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    pulses = [p.strip().lower() for p in d.get("pulse", "rect").split(",") if p.strip()]
    for p in pulses:
        if p not in ("rect", "ideal"):
            raise ConfigError(f"unknown pulse {p!r}")
        if p == "ideal" and isinstance(scheme, Itfma):
            raise ConfigError("ideal pulses are only supported for iddma and guard-band schemes")
    series = tuple(Series(scheme, p, optimize) for p in pulses)
    try:
        return ExperimentSpec(
            name=d.get("name", "custom"), frame=frame, series=series,
            nu_max=_floats(d.get("nu_max", "300"), "nu_max"), snr_grid=_snr_grid(d),
            trials=_int(d, "trials", 100), seed=_int(d, "seed", 0),
            snr_convention=d.get("snr_convention", "received").strip().lower())
    except SchemeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _params(scheme: MaScheme) -> tuple[int, int, int]:
    if isinstance(scheme, Iddma):
        return scheme.g1, scheme.g2, 0
    if isinstance(scheme, Itfma):
        return scheme.g3, scheme.g4, 0
    return 0, 0, scheme.G


def curve_rows(curve: SeCurve) -> list[list[str]]:
    s = curve.scheme
    ga, gb, _ = _params(s)
    rows = []
    for i, snr in enumerate(curve.snr_grid):
        G = curve.G[i]
        rows.append([s.name, _fmt(snr), _fmt(curve.nu_max), str(s.Q), str(ga), str(gb),
                     "" if G is None else str(G), curve.pulse, str(curve.trials),
                     _fmt(curve.mean_sum_se[i]), _fmt(curve.stderr_sum_se[i]),
                     _fmt(curve.per_ut_se_mean[i])])
    return rows


def write_csv(path: Path, curves: list[SeCurve]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for c in curves:
        writer.writerows(curve_rows(c))
    Path(path).write_text(buf.getvalue())


def csv_name(spec: ExperimentSpec, curve: SeCurve) -> str:
    key = "ideal" if curve.pulse == "ideal" else curve.scheme.name
    return f"{spec.name}_{key}_nu{int(round(curve.nu_max))}.csv"


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#17becf", "#7f7f7f", "#bcbd22")


def _nice_ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.floor(lo / step) * step
    return [float(start + i * step) for i in range(int(np.ceil((hi - start) / step)) + 1)]


def render_svg(title: str, xlabel: str, ylabel: str,
               lines: list[tuple[str, list[float], list[float], bool]],
               width: int = 1000, height: int = 700) -> str:
    """Line plot; ``lines`` holds ``(label, x, y, dashed)``."""
    left, right, top, bottom = 90, 250, 60, 80
    pw, ph = width - left - right, height - top - bottom
    xs = [v for _, x, _, _ in lines for v in x] or [0.0, 1.0]
    ys = [v for _, _, y, _ in lines for v in y] or [0.0, 1.0]
    xt = _nice_ticks(min(xs), max(xs))
    yt = _nice_ticks(min(0.0, min(ys)), max(ys))
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="14">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="30" text-anchor="middle" font-size="18">'
           f'{escape(title)}</text>']
    for t in xt:
        out.append(f'<line x1="{px(t):.2f}" y1="{top}" x2="{px(t):.2f}" y2="{top + ph}" '
                   'stroke="#dddddd"/>')
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 22}" text-anchor="middle">'
                   f'{t:g}</text>')
    for t in yt:
        out.append(f'<line x1="{left}" y1="{py(t):.2f}" x2="{left + pw}" y2="{py(t):.2f}" '
                   'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 10}" y="{py(t) + 5:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
               'stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 25}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="25" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 25 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, x, y, dashed) in enumerate(lines):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        dash = ' stroke-dasharray="8,5"' if dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        for a, b in zip(x, y):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        ly = top + 20 + 24 * i
        lx = left + pw + 20
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 30}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 38}" y="{ly + 5}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _label(curve: SeCurve, spec: ExperimentSpec) -> str:
    text = SCHEME_LABELS[curve.scheme.name]
    if curve.pulse == "ideal":
        text += " (ideal)"
    if len(spec.nu_max) > 1:
        text += f", {curve.nu_max:g} Hz"
    return text


def figure_svg(spec: ExperimentSpec, curves: list[SeCurve]) -> str:
    f = spec.frame
    if spec.x_axis == "Q":
        groups: dict[tuple, list[SeCurve]] = {}
        for c in curves:
            groups.setdefault((c.scheme.name, c.pulse, c.nu_max), []).append(c)
        lines = []
        for group in groups.values():
            group = sorted(group, key=lambda c: c.scheme.Q)
            lines.append((_label(group[0], spec), [float(c.scheme.Q) for c in group],
                          [c.per_ut_se_mean[0] for c in group], group[0].pulse == "ideal"))
        title = (f"Per-UT SE vs. Q (M = {f.M}, N = {f.N}, SNR = {spec.snr_grid[0]:g} dB, "
                 f"nu_max = {spec.nu_max[0]:g} Hz)")
        return render_svg(title, "Number of UTs Q", "Per-UT SE (bits/s/Hz)", lines)
    lines = [(_label(c, spec), list(c.snr_grid), list(c.mean_sum_se), c.pulse == "ideal")
             for c in curves]
    Qs = sorted({c.scheme.Q for c in curves})
    title = f"Sum SE vs. SNR (M = {f.M}, N = {f.N}, Q = {', '.join(map(str, Qs))})"
    return render_svg(title, "SNR (dB)", "Sum SE (bits/s/Hz)", lines)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_curves(spec: ExperimentSpec, threads: int | None = None) -> list[SeCurve]:
    curves = []
    for nu in spec.nu_max:
        for s in spec.series:
            curves.append(run_experiment(s.scheme, spec.snr_grid, nu, spec.frame, spec.trials,
                                         spec.seed, pulse=s.pulse,
                                         convention=spec.snr_convention,
                                         optimize_g=s.optimize_g, threads=threads))
    return curves


def run(spec: ExperimentSpec, out_dir, threads: int | None = None) -> list[Path]:
    """Evaluate every series and write the CSV files plus one SVG figure."""
    return write_outputs(spec, run_curves(spec, threads), out_dir)


def write_outputs(spec: ExperimentSpec, curves: list[SeCurve], out_dir) -> list[Path]:
    """One CSV per scheme (ideal-pulse baselines share one file) and Doppler value,
    plus the figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, list[SeCurve]] = {}
    for c in curves:
        files.setdefault(csv_name(spec, c), []).append(c)
    written = []
    for name, group in files.items():
        write_csv(out / name, group)
        written.append(out / name)
    svg = out / f"{spec.name}.svg"
    svg.write_text(figure_svg(spec, curves))
    written.append(svg)
    return written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otfs-oma-lab",
                                description="Sum spectral efficiency of OTFS multiple-access "
                                            "schemes with rectangular pulses.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(presets()), help="figure preset")
    src.add_argument("--config", type=Path, help="key/value experiment file")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--trials", type=int, help="Monte Carlo trials (default 100)")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--snr-convention", choices=CONVENTIONS, help="SNR axis definition")
    p.add_argument("--threads", type=int,
                   help="worker threads (default $OTFS_LAB_THREADS or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.preset:
            spec = presets()[args.preset]
        else:
            spec = parse_config(args.config.read_text())
        overrides = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            overrides["seed"] = args.seed
        if args.trials is not None:
            overrides["trials"] = args.trials
        if args.snr_convention is not None:
            overrides["snr_convention"] = args.snr_convention
        spec = replace(spec, **overrides)
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise ConfigError("threads must be at least 1")
    except (ConfigError, SchemeError) as exc:
        print(f"otfs-oma-lab: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"otfs-oma-lab: error: {exc}", file=sys.stderr)
        return 1
    try:
        written = run(spec, args.out, threads)
    except OSError as exc:
        print(f"otfs-oma-lab: error: cannot write output: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
