import os
import re
import tempfile
import unittest

import numpy as np
import numpy.testing as npt
import pandas as pd

from sindex.plots import PLOT_KINDS, emit_plots


def _sweep_table(ds=(10, 20, 50)):
    rows = []
    for d in ds:
        for n in (512, 1024, 2048):
            rows.append({"kind": "aggregate", "d": d, "s": 1, "n": n,
                         "status": "ok", "risk_post": d / n,
                         "risk_post_std": 0.1 * d / n, "abs_m": 0.9})
    return pd.DataFrame(rows)


def _curve_pixels(svg, label):
    start = svg.index(f'id="curve-{label}"')
    d = re.search(r'\sd="([^"]+)"', svg[start:]).group(1)
    coords = np.array([float(v) for v in re.findall(r"-?[\d.]+", d)])
    return coords[0::2], coords[1::2]


def _raw_table(ds=(10, 20, 50), seeds=3):
    rows = []
    for d in ds:
        for n in (512, 1024, 4096):
            for seed in range(seeds):
                rows.append({"kind": "raw", "d": d, "s": 1, "n": n,
                             "seed": seed, "status": "ok",
                             "risk_post": d / n ** 0.7 * (1 + 0.1 * seed),
                             "abs_m": 1.0 - d / n - 0.01 * seed})
    return pd.DataFrame(rows)


def _affine(anchor_data, anchor_pixels):
    """Map pixels back to data coordinates through two anchor points."""
    (a, b), (p, q) = anchor_data, anchor_pixels
    return lambda pixels: a + (np.asarray(pixels) - p) * (b - a) / (q - p)


class TestEmitPlots(unittest.TestCase):

    def test_empty_table(self):
        table = pd.DataFrame(columns=["n", "risk_post"])
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(emit_plots(table, "risk_vs_n", tmp), [])
            self.assertEqual(os.listdir(tmp), [])

    def test_one_curve_per_dimension(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = emit_plots(_sweep_table(), "risk_vs_n", tmp)
            self.assertEqual(paths, [os.path.join(tmp, "risk_vs_n.svg")])
            with open(paths[0]) as f:
                svg = f.read()
        curves = set(re.findall(r'id="(curve-[^"]+)"', svg))
        self.assertEqual(curves, {"curve-d10-s1", "curve-d20-s1",
                                  "curve-d50-s1"})
        self.assertEqual(len(re.findall(r'id="band-', svg)), 3)

    def test_decreasing_curve_renders_decreasing(self):
        table = _sweep_table(ds=(10,))
        with tempfile.TemporaryDirectory() as tmp:
            path = emit_plots(table, "risk_vs_n", tmp)[0]
            with open(path) as f:
                svg = f.read()
        xs, ys = _curve_pixels(svg, "d10-s1")
        self.assertEqual(len(xs), 3)
        self.assertTrue(np.all(np.diff(xs) > 0))
        # svg y grows downwards
        self.assertTrue(np.all(np.diff(ys) > 0))

    def _recovered(self, table, kind, y, to_axis):
        with tempfile.TemporaryDirectory() as tmp:
            path = emit_plots(table, kind, tmp)[0]
            with open(path) as f:
                svg = f.read()
        means = table.groupby(["d", "n"])[y].mean()
        ns = np.array([512, 1024, 4096])
        anchor = means.loc[10].to_numpy()
        px, py = _curve_pixels(svg, "d10-s1")
        to_x = _affine(np.log2(ns[[0, -1]]), px[[0, -1]])
        to_y = _affine(to_axis(anchor[[0, -1]]), py[[0, -1]])
        for d in (10, 20, 50):
            px, py = _curve_pixels(svg, f"d{d}-s1")
            self.assertEqual(len(px), len(ns))
            npt.assert_allclose(to_x(px), np.log2(ns), atol=1e-4)
            npt.assert_allclose(to_y(py), to_axis(means.loc[d].to_numpy()),
                                atol=1e-4)

    def test_risk_points_match_table(self):
        self._recovered(_raw_table(), "risk_vs_n", "risk_post", np.log)

    def test_overlap_points_match_table(self):
        self._recovered(_raw_table(), "m_vs_n", "abs_m", lambda v: v)

    def test_identical_output(self):
        table = _sweep_table()
        with tempfile.TemporaryDirectory() as tmp:
            first = emit_plots(table, "m_vs_n", os.path.join(tmp, "a"))[0]
            second = emit_plots(table, "m_vs_n", os.path.join(tmp, "b"))[0]
            with open(first) as f, open(second) as g:
                self.assertEqual(f.read(), g.read())

    def test_landscape_scan_without_groups(self):
        m = np.linspace(-1.0, 1.0, 11)
        table = pd.DataFrame({"m": m, "loss": 1.0 - 0.5 * m})
        with tempfile.TemporaryDirectory() as tmp:
            path = emit_plots(table, "landscape_scan", tmp)[0]
            with open(path) as f:
                svg = f.read()
        self.assertIn('id="curve-all"', svg)
        self.assertNotIn('id="band-', svg)

    def test_rejects(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValueError):
                emit_plots(_sweep_table(), "histogram", tmp)
            with self.assertRaises(ValueError):
                emit_plots(pd.DataFrame({"n": [1]}), "risk_vs_n", tmp)

    def test_kinds(self):
        self.assertEqual(set(PLOT_KINDS),
                         {"risk_vs_n", "m_vs_n", "landscape_scan", "trace"})


if __name__ == "__main__":
    unittest.main()
