from __future__ import annotations

import numpy as np

from tsae_tool.util.plotting import scatter_svg


def test_scatter_by_source(tmp_path):
    coords = np.arange(12.0).reshape(6, 2)
    svg = scatter_svg(coords, ["real"] * 4 + ["generated"] * 2, str(tmp_path / "plot" / "e.svg"))
    text = open(svg, encoding="utf-8").read()
    assert 'id="points-real"' in text and 'id="points-generated"' in text


def test_scatter_by_label_keeps_unlabelled_generated(tmp_path):
    coords = np.arange(12.0).reshape(6, 2)
    sources = ["real"] * 4 + ["generated"] * 2
    labels = ["1", "2", "1", "2", "", None]
    text = open(scatter_svg(coords, sources, str(tmp_path / "e.svg"), labels=labels), encoding="utf-8").read()
    assert 'id="points-1"' in text and 'id="points-2"' in text
    assert 'id="points-generated"' in text
    assert 'id="points-real"' not in text
