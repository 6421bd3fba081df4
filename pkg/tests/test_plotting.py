import numpy as np

from camtraj.plotting import category_label, plot_category_histogram, plot_scales, plot_trajectory
from camtraj.synthetic import polyline

PNG = b"\x89PNG\r\n\x1a\n"


def test_category_label():
    assert category_label(0) == "forward/none"
    assert category_label(2) == "forward/right"
    assert category_label(29) == "down/down"


def test_figures_written_and_reproducible(tmp_path):
    C = polyline([("forward", 20), ("right", 10)])
    paths = [
        plot_category_histogram({"0": 4, "2": 1}, {"0": 2, "2": 1}, tmp_path / "a" / "h.png"),
        plot_category_histogram({0: 3}, None, tmp_path / "a" / "h1.png"),
        plot_trajectory(C, tmp_path / "a" / "t.png", keypoints=[20], title="L"),
        plot_trajectory(C, tmp_path / "a" / "t0.png"),
        plot_scales({"v1": 1.5, "v0": 2.0}, tmp_path / "a" / "s.png"),
    ]
    for p in paths:
        assert p.read_bytes().startswith(PNG)
    again = plot_trajectory(C, tmp_path / "b.png", keypoints=np.array([20]), title="L")
    assert again.read_bytes() == paths[2].read_bytes()
