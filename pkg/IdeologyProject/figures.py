import io
import hashlib
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import matplotlib
from matplotlib.figure import Figure
from matplotlib.backends.backend_svg import FigureCanvasSVG

from IdeologyProject.logger import logging
from IdeologyProject.analysis import BiplotResult, ForestResult, RadarResult, select_top
from IdeologyProject.filtering import LIKERT_SCORES

SVG_RC = {"svg.hashsalt": "ideology-figures", "svg.fonttype": "none", "font.family": "DejaVu Sans"}
MARKERS = ["o", "s", "^", "D", "v", "P", "X", "*", "<", ">", "h", "p"]
PALETTE = matplotlib.colormaps["tab20"]



####################################################################################################################
                                                ## Helpers ##
####################################################################################################################



def _slot(name: str, modulo: int) -> int:
    return int(hashlib.sha256(name.encode("utf-8")).hexdigest()[:8], 16) % modulo


def stable_color(name: str):
    return PALETTE(_slot(name, PALETTE.N))


def stable_marker(name: str) -> str:
    return MARKERS[_slot(name, len(MARKERS))]


def _to_svg(figure: Figure, description: str = "") -> str:
    with matplotlib.rc_context(SVG_RC):
        FigureCanvasSVG(figure)
        buffer = io.BytesIO()
        figure.savefig(buffer, format="svg", metadata={"Date": None, "Description": description or None})
    return buffer.getvalue().decode("utf-8")


def _new_figure(size: tuple[float, float]) -> Figure:
    with matplotlib.rc_context(SVG_RC):
        return Figure(figsize=size)


def save_svg(svg: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg, encoding="utf-8")
    logging.info(f"Figure saved: {path}")
    return path



####################################################################################################################
                                                ## Figures ##
####################################################################################################################



def render_biplot(result: BiplotResult, display_names: Optional[dict[str, str]] = None, description: str = "") -> str:
    """Respondent scores, per-model and per-language averages, and unit-norm tag arrows."""
    display_names = display_names or {}
    figure = _new_figure((10, 9))
    with matplotlib.rc_context(SVG_RC):
        axes = figure.add_subplot()
        points = result.points.sort_values("respondent")
        for _, row in points.iterrows():
            axes.scatter(row["pc1"], row["pc2"], color=stable_color(row["language"]), marker=stable_marker(row["model_id"]),
                         alpha=0.35, s=40)
        for _, row in result.model_means.iterrows():
            axes.scatter(row["pc1"], row["pc2"], color="black", marker=stable_marker(row["model_id"]), s=70,
                         label=row["model_id"])
        for _, row in result.language_means.iterrows():
            axes.scatter(row["pc1"], row["pc2"], facecolors="none", edgecolors=stable_color(row["language"]), marker="o",
                         s=260, linewidths=2, label=row["language"])

        loadings = result.loadings.set_index("code")
        extent = float(np.abs(points[["pc1", "pc2"]].to_numpy()).max()) if len(points) else 1.0
        extent = extent or 1.0
        chosen = [code for code in result.top_tags if code in loadings.index]
        max_norm = max((float(loadings.loc[code, "norm"]) for code in chosen), default=1.0) or 1.0
        for index, code in enumerate(chosen):
            l1, l2, norm = (float(loadings.loc[code, column]) for column in ("l1", "l2", "norm"))
            if norm == 0:
                continue
            dx, dy = 0.85 * extent * l1 / norm, 0.85 * extent * l2 / norm
            arrow = axes.arrow(0, 0, dx, dy, width=0.004 * extent * (0.3 + norm / max_norm), color="dimgray",
                               alpha=0.8, length_includes_head=True)
            arrow.set_gid(f"arrow-{index}")
            axes.text(dx * 1.05, dy * 1.05, display_names.get(code, code), fontsize=7, ha="center", va="center")

        first, second = result.explained_variance
        axes.set_xlabel(f"PC1 ({100 * first:.1f}%)")
        axes.set_ylabel(f"PC2 ({100 * second:.1f}%)")
        axes.axhline(0, color="lightgray", linewidth=0.5)
        axes.axvline(0, color="lightgray", linewidth=0.5)
        axes.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=7)
        figure.tight_layout()
    return _to_svg(figure, description)


def render_radar(result: RadarResult, description: str = "") -> str:
    """One closed curve per group in tag order around a dotted zero ring."""
    order = result.tag_order
    angles = np.linspace(0, 2 * np.pi, len(order), endpoint=False)
    closed = np.append(angles, angles[0])
    figure = _new_figure((10, 10))
    with matplotlib.rc_context(SVG_RC):
        axes = figure.add_subplot(projection="polar")
        axes.set_theta_offset(np.pi / 2)
        axes.set_theta_direction(-1)
        values = result.values[order].to_numpy(dtype=float) if order else np.zeros((len(result.groups), 0))
        low = float(values.min()) if values.size else -0.1
        high = float(values.max()) if values.size else 0.1
        pad = 0.1 * ((high - low) or 0.1)
        axes.set_ylim(low - pad, high + pad)
        ring = np.linspace(0, 2 * np.pi, 361)
        zero, = axes.plot(ring, np.zeros_like(ring), linestyle=":", color="black", linewidth=1)
        zero.set_gid("zero-ring")
        for index, group in enumerate(result.groups):
            curve = np.append(values[index], values[index][0]) if len(order) else np.array([])
            line, = axes.plot(closed if len(order) else [], curve, color=stable_color(group), linewidth=2, label=group)
            line.set_gid(f"radar-curve-{index}")
        axes.set_xticks(angles)
        axes.set_xticklabels([result.display_names.get(code, code) for code in order], fontsize=7)
        axes.legend(loc="upper left", bbox_to_anchor=(1.05, 1.0))
        figure.tight_layout()
    return _to_svg(figure, description)


def render_forest(result: ForestResult, title: str = "", description: str = "") -> str:
    """Selected rows, most positive first, with CI whiskers and the overall-mean line."""
    rows = select_top(result.rows, result.top_k).sort_values(["mean_diff", "item"], ascending=[False, True])
    rows = rows.reset_index(drop=True)
    figure = _new_figure((8, max(3.0, 0.3 * len(rows) + 1.5)))
    with matplotlib.rc_context(SVG_RC):
        axes = figure.add_subplot()
        positions = np.arange(len(rows))[::-1]
        for index, (position, (_, row)) in enumerate(zip(positions, rows.iterrows())):
            whisker, = axes.plot([row["ci_lo"], row["ci_hi"]], [position, position], color="black", linewidth=1.2)
            whisker.set_gid(f"whisker-{index}")
            axes.plot([row["mean_diff"]], [position], marker="s", color="black", markersize=5)
        reference = axes.axvline(result.overall_mean, color="red", linewidth=1.2)
        reference.set_gid("overall-mean")
        axes.axvline(0, color="gray", linestyle=":", linewidth=0.8)
        axes.set_yticks(positions)
        axes.set_yticklabels([str(label) for label in rows["label"]], fontsize=8)
        axes.set_xlabel("Mean score difference")
        if title:
            axes.set_title(title)
        figure.tight_layout()
    return _to_svg(figure, description)


def render_tag_frequencies(frequencies: pd.DataFrame, description: str = "") -> str:
    ordered = frequencies.sort_values(["topics", "code"], ascending=[False, True])
    figure = _new_figure((8, max(4.0, 0.18 * len(ordered) + 1.0)))
    with matplotlib.rc_context(SVG_RC):
        axes = figure.add_subplot()
        positions = np.arange(len(ordered))[::-1]
        axes.barh(positions, ordered["topics"].to_numpy(), color="steelblue")
        axes.set_yticks(positions)
        axes.set_yticklabels(ordered["display_name"].tolist(), fontsize=6)
        axes.set_xlabel("Topics")
        figure.tight_layout()
    return _to_svg(figure, description)


def render_label_distribution(distribution: pd.DataFrame, description: str = "") -> str:
    """Stacked label shares per language."""
    languages = distribution[distribution["scope"] == "language"].sort_values("name")
    labels = list(LIKERT_SCORES)
    shares = languages[labels].to_numpy(dtype=float)
    totals = shares.sum(axis=1, keepdims=True)
    shares = np.divide(shares, totals, out=np.zeros_like(shares), where=totals > 0)
    figure = _new_figure((8, 4))
    with matplotlib.rc_context(SVG_RC):
        axes = figure.add_subplot()
        left = np.zeros(len(languages))
        cmap = matplotlib.colormaps["RdYlGn"]
        for index, label in enumerate(labels):
            axes.barh(languages["name"].tolist(), shares[:, index], left=left, color=cmap(index / (len(labels) - 1)),
                      label=label)
            left += shares[:, index]
        axes.set_xlim(0, 1)
        axes.set_xlabel("Share of responses")
        axes.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=7)
        figure.tight_layout()
    return _to_svg(figure, description)
