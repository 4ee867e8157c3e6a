from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from tsae_tool.util.paths import safe_mkdir  # noqa: E402

SOURCE_COLORS = {"real": "tab:blue", "generated": "tab:orange"}


def scatter_svg(
    coords: np.ndarray,
    sources: Sequence[str],
    path: str,
    title: str = "",
    labels: Sequence[str | None] | None = None,
) -> str:
    """2-D scatter of an embedding, one colour per source (real blue, generated orange).

    With `labels`, labelled points get one colour per class and unlabelled
    points keep their source colour; generated points are drawn as crosses.
    Each group is written as an SVG element with id `points-<group>`.
    """
    coords = np.asarray(coords, dtype=np.float64)
    p = Path(path)
    safe_mkdir(p.parent)
    src = np.asarray(sources)
    if labels is None:
        groups = src
    else:
        groups = np.asarray([str(lab) if lab else s for lab, s in zip(labels, sources)])
    present = set(groups.tolist())
    classes = sorted(g for g in present if g not in SOURCE_COLORS)
    cmap = matplotlib.colormaps["tab10"]
    colors = {c: cmap(i % 10) for i, c in enumerate(classes)}

    fig, ax = plt.subplots(figsize=(6, 6))
    try:
        for name in [*classes, *(s for s in SOURCE_COLORS if s in present)]:
            sel = groups == name
            marker = "x" if np.all(src[sel] == "generated") else "o"
            ax.scatter(
                coords[sel, 0],
                coords[sel, 1],
                s=12,
                color=colors.get(name, SOURCE_COLORS.get(name, "tab:gray")),
                marker=marker,
                label=f"{name} ({int(sel.sum())})",
                gid=f"points-{name}",
            )
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        fig.savefig(p, format="svg")
    finally:
        plt.close(fig)
    return str(p)
