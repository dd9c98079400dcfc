"""Self-contained SVG 1.1 rendering of convergence and trajectory plots.

Plots are derived artifacts: every plotted series is also written to CSV by
the callers, so this module only needs straightforward polylines, log-decade
ticks and a small legend. No plotting dependency is involved.
"""

from __future__ import annotations

import math

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
)

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 28, 42
_FLOOR = 1e-300


def _fmt(x: float) -> str:
    return f"{x:.6g}"


class _Canvas:
    def __init__(self, width, height, title):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]
        if title:
            self.text(width / 2, 18, title, anchor="middle", size=13)

    def line(self, x1, y1, x2, y2, color="#000", width=1.0, dash=None):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{width}"{dash_attr}/>'
        )

    def polyline(self, points, color, width=1.4):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"/>'
        )

    def text(self, x, y, s, anchor="start", size=11, color="#000"):
        s = s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
            f'font-size="{size}" fill="{color}" text-anchor="{anchor}">{s}</text>'
        )

    def write(self, path):
        self.parts.append("</svg>")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.parts) + "\n")


def _nice_linear_ticks(lo, hi, target=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(t)
        t += step
    return ticks


def line_plot(series, path, title="", xlabel="iteration", ylabel="", logy=True,
              width=720, height=480):
    """Render line series [(label, xs, ys), ...] to an SVG file.

    With ``logy`` the ordinate is log10 with decade ticks; non-positive
    values are floored to keep converged (exactly zero) tails drawable.
    """
    x0, x1 = _MARGIN_L, width - _MARGIN_R
    y0, y1 = height - _MARGIN_B, _MARGIN_T

    xs_all = [float(x) for _, xs, _ in series for x in xs]
    if logy:
        ys_all = [math.log10(max(abs(float(y)), _FLOOR)) for _, _, ys in series for y in ys]
    else:
        ys_all = [float(y) for _, _, ys in series for y in ys]
    if not xs_all:
        raise ValueError("nothing to plot")
    xmin, xmax = min(xs_all), max(xs_all)
    ymin, ymax = min(ys_all), max(ys_all)
    if logy:
        ymin, ymax = math.floor(ymin), math.ceil(ymax)
        if ymax - ymin > 24:
            ymin = ymax - 24  # clamp the floored tail to two dozen decades
    if xmax == xmin:
        xmax = xmin + 1
    if ymax == ymin:
        ymax = ymin + 1

    def sx(x):
        return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0)

    def sy(y):
        return y0 + (y - ymin) / (ymax - ymin) * (y1 - y0)

    canvas = _Canvas(width, height, title)
    canvas.line(x0, y0, x1, y0)
    canvas.line(x0, y0, x0, y1)

    for t in _nice_linear_ticks(xmin, xmax):
        canvas.line(sx(t), y0, sx(t), y0 + 4)
        canvas.text(sx(t), y0 + 16, f"{t:g}", anchor="middle", size=10)
    if logy:
        span = max(1, int(ymax - ymin))
        step = max(1, span // 8)
        for k in range(int(ymin), int(ymax) + 1, step):
            canvas.line(x0 - 4, sy(k), x0, sy(k))
            canvas.line(x0, sy(k), x1, sy(k), color="#eee")
            canvas.text(x0 - 7, sy(k) + 4, f"1e{k:d}", anchor="end", size=10)
    else:
        for t in _nice_linear_ticks(ymin, ymax):
            canvas.line(x0 - 4, sy(t), x0, sy(t))
            canvas.text(x0 - 7, sy(t) + 4, f"{t:g}", anchor="end", size=10)

    canvas.text((x0 + x1) / 2, height - 8, xlabel, anchor="middle")
    canvas.text(14, (y0 + y1) / 2, ylabel, anchor="middle")

    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        if logy:
            pts = [
                (sx(float(x)), sy(min(max(math.log10(max(abs(float(y)), _FLOOR)), ymin), ymax)))
                for x, y in zip(xs, ys)
            ]
        else:
            pts = [(sx(float(x)), sy(float(y))) for x, y in zip(xs, ys)]
        if pts:
            canvas.polyline(pts, color)
        canvas.text(x1 - 8, y1 + 16 + 14 * k, label, anchor="end", size=11, color=color)

    canvas.write(path)


def trajectory_plot(series, path, title="iterates in the admissibility projection space",
                    width=720, height=560, floor=1e-18):
    """Isometric 2D projection of (const, compat, equil) trajectories.

    Coordinates are log10-scaled with a floor so exactly-admissible
    trajectories (coordinates identically zero) sit on the floor plane.
    """
    logf = math.log10(floor)

    def log3(p):
        return [max(math.log10(max(abs(float(c)), floor)), logf) for c in p]

    all_logs = [log3(p) for _, pts in series for p in pts]
    if not all_logs:
        raise ValueError("nothing to plot")
    lo = min(min(v) for v in all_logs)
    hi = max(max(v) for v in all_logs)
    if hi == lo:
        hi = lo + 1
    c30, s30 = math.cos(math.pi / 6), math.sin(math.pi / 6)

    def iso(p):
        a, b, c = [(v - lo) / (hi - lo) for v in log3(p)]
        u = (a - b) * c30
        v = (a + b) * s30 - c
        return u, v

    projected = [[iso(p) for p in pts] for _, pts in series]
    us = [u for pts in projected for u, _ in pts]
    vs = [v for pts in projected for _, v in pts]
    umin, umax = min(us + [-c30]), max(us + [c30])
    vmin, vmax = min(vs + [-1.0]), max(vs + [2 * s30])

    def sx(u):
        return _MARGIN_L + (u - umin) / (umax - umin) * (width - _MARGIN_L - _MARGIN_R)

    def sy(v):
        return (height - _MARGIN_B) - (v - vmin) / (vmax - vmin) * (
            height - _MARGIN_T - _MARGIN_B
        )

    canvas = _Canvas(width, height, title)
    origin = iso((floor, floor, floor))
    for axis, label in enumerate(("d_const", "d_compat", "d_equil")):
        tip3 = [floor] * 3
        tip3[axis] = 10.0 ** hi
        tip = iso(tip3)
        canvas.line(sx(origin[0]), sy(origin[1]), sx(tip[0]), sy(tip[1]),
                    color="#999", dash="4,3")
        canvas.text(sx(tip[0]), sy(tip[1]) - 4, label, anchor="middle", size=10,
                    color="#555")

    for k, ((label, _), pts) in enumerate(zip(series, projected)):
        color = PALETTE[k % len(PALETTE)]
        canvas.polyline([(sx(u), sy(v)) for u, v in pts], color)
        canvas.text(width - _MARGIN_R - 8, _MARGIN_T + 16 + 14 * k, label,
                    anchor="end", size=11, color=color)
    canvas.text(_MARGIN_L, height - 8,
                f"log10 scale, floor 1e{int(math.log10(floor))}", size=10, color="#555")
    canvas.write(path)
