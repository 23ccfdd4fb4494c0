"""Smoke tests for the votbench python module."""

import numpy as np
import pytest

votbench = pytest.importorskip("votbench")


def test_catalog_has_18_entries():
    names = votbench.catalog()
    assert len(names) == 18
    assert "ball_single" in names
    assert "icosahedron_quintuple_static" in names
    assert "ball_green_single" in names


def test_generate_and_track_clip():
    clip = votbench.generate_clip("ball_single", seed=3)
    top, bottom = clip["top"], clip["bottom"]
    assert top.shape == (50, 96, 96, 3)
    assert bottom.shape == (50, 48, 64, 3)
    assert top.dtype == np.uint8
    truth = clip["truth"]
    assert len(truth) == 50

    tracked = votbench.track_clip(bottom, color=clip["target_color"], tol=40)
    for (i, x, y), (ti, tx, ty) in zip(tracked, truth):
        assert i == ti
        assert abs(x - tx) <= 1
        assert abs(y - ty) <= 1


def test_generate_is_deterministic():
    a = votbench.generate_clip("cube_double", seed=11)
    b = votbench.generate_clip("cube_double", seed=11)
    assert np.array_equal(a["bottom"], b["bottom"])
    assert a["truth"] == b["truth"]


def test_prediction_error_closed_form():
    truth = np.zeros((12, 16), dtype=np.float32)
    pred = np.zeros((12, 16), dtype=np.float32)
    assert votbench.prediction_error(truth, pred) == 0.0
    pred[3, 5] = 255.0
    assert votbench.prediction_error(truth, pred) == pytest.approx(255.0**2 / 192.0)
    assert votbench.generation_gap(646.0, 512.0) == 134.0


def test_rasterize_marks_visited_cells():
    grid = votbench.rasterize([(0, 0, 0), (1, 479, 639)], 480, 640)
    assert grid.shape == (12, 16)
    assert grid[0, 0] == 255.0
    assert grid[11, 15] == 255.0
    assert np.count_nonzero(grid) == 2


def test_clip_file_round_trip(tmp_path):
    clip = votbench.generate_clip("foam_single", seed=5)
    path = str(tmp_path / "clip.cgpv")
    votbench.write_clip(clip["bottom"], 1, path)
    back = votbench.read_clip(path)
    assert np.array_equal(back, clip["bottom"])


def test_param_counts():
    assert votbench.param_count("maxvit", "full") == votbench.param_count("maxvit2", "full")
    assert abs(votbench.param_count("maxvit", "full") - 5.2e7) / 5.2e7 < 0.10
    assert abs(votbench.param_count("swint", "full") - 4.9e7) / 4.9e7 < 0.10


def test_model_forward_contract():
    clip = votbench.generate_clip("ball_single", seed=9)
    grid = votbench.model_forward("maxvit", clip["top"], seed=1)
    assert grid.shape == (12, 16)
    assert np.isfinite(grid).all()
    again = votbench.model_forward("maxvit", clip["top"], seed=1)
    assert np.array_equal(grid, again)
