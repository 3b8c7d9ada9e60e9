"""Learning-curve SVGs and gap tables."""
from __future__ import annotations

from typing import Sequence

from .data import RunLog
from .trainer import GapReport, gap_report

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
W, H = 720, 420
LEFT, RIGHT, TOP, BOTTOM = 60, 190, 20, 50


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def learning_curve_svg(runs: Sequence[tuple[str, RunLog]], title: str = "robust error") -> str:
    """Train (dashed) and test (solid) robust error against epoch, one colour per run."""
    max_epoch = max((r.epoch for _, lg in runs for r in lg.records), default=1) or 1
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(e):
        return LEFT + pw * e / max_epoch

    def py(v):
        return TOP + ph * (1.0 - v)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{LEFT}" y="{TOP - 6}">{_esc(title)}</text>',
           f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>']
    for k in range(6):
        v = k / 5
        out.append(f'<text x="{LEFT - 8}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
        out.append(f'<line x1="{LEFT}" y1="{py(v):.1f}" x2="{LEFT + pw}" y2="{py(v):.1f}" '
                   f'stroke="#dddddd"/>')
    step = max(1, max_epoch // 6)
    for e in range(0, max_epoch + 1, step):
        out.append(f'<text x="{px(e):.1f}" y="{TOP + ph + 16}" text-anchor="middle">{e}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{H - 12}" text-anchor="middle">epoch</text>')
    for i, (name, lg) in enumerate(runs):
        color = COLORS[i % len(COLORS)]
        for metric, dash in (("train_robust_err", ' stroke-dasharray="5,3"'), ("test_robust_err", "")):
            pts = " ".join(f"{px(r.epoch):.1f},{py(getattr(r, metric)):.1f}" for r in lg.records)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
        ly = TOP + 14 + 34 * i
        lx = W - RIGHT + 12
        out.append(f'<text x="{lx}" y="{ly}">{_esc(name)}</text>')
        out.append(f'<line x1="{lx}" y1="{ly + 8}" x2="{lx + 24}" y2="{ly + 8}" stroke="{color}" '
                   f'stroke-dasharray="5,3"/><text x="{lx + 30}" y="{ly + 12}">train</text>')
        out.append(f'<line x1="{lx + 70}" y1="{ly + 8}" x2="{lx + 94}" y2="{ly + 8}" stroke="{color}"/>'
                   f'<text x="{lx + 100}" y="{ly + 12}">test</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_for(lg: RunLog, metric: str = "test_robust_err") -> GapReport:
    return gap_report(lg, metric, min(5, len(lg)))


def gap_table(runs: Sequence[tuple[str, RunLog]], metric: str = "test_robust_err") -> str:
    lines = ["run\twindow\tfinal_mean\tfinal_std\tbest\tbest_epoch\tdiff"]
    for name, lg in runs:
        r = report_for(lg, metric)
        lines.append(f"{name}\t{r.window}\t{r.final_mean:.6f}\t{r.final_std:.6f}\t{r.best:.6f}\t"
                     f"{r.best_epoch}\t{r.diff:.6f}")
    return "\n".join(lines) + "\n"
