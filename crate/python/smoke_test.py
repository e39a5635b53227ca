"""Smoke test for the Python bindings.

Build the extension first:

    cargo build --release -p echographs-py --features extension-module

then run `python3 python/smoke_test.py` from the repository root. The
script imports `echographs_py` if it is installed and otherwise loads the
freshly built library from target/.
"""

import importlib.machinery
import importlib.util
import math
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        import echographs_py

        return echographs_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        path = ROOT / "target" / profile / "libechographs_py.so"
        if path.exists():
            loader = importlib.machinery.ExtensionFileLoader("echographs_py", str(path))
            spec = importlib.util.spec_from_file_location("echographs_py", path, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("echographs_py not found; build it with --features extension-module")


def circle(r, n=42):
    # traced from the bottom of the axis, basal points at index 0 and 41
    return [
        (0.5 + r * math.cos(-math.pi / 2 + 2 * math.pi * i / (n - 1)),
         0.5 + r * math.sin(-math.pi / 2 + 2 * math.pi * i / (n - 1)))
        for i in range(n)
    ]


def main():
    eg = load()

    case = eg.synthetic_case(3, image_size=48, n_cycles=2)
    frames = case["frames"]
    assert len(frames) == len(case["keypoints"]) > 0
    assert all(len(f) == 48 * 48 for f in frames)
    ed, es = case["cycles"][0]
    ef = eg.ef_from_keypoints(case["keypoints"][ed], case["keypoints"][es], n_disks=200)
    assert abs(ef - case["ef"]) < 1e-3, (ef, case["ef"])

    v1 = eg.disk_volume(circle(0.2))
    v2 = eg.disk_volume(circle(0.1))
    assert abs(v2 / v1 - 0.125) < 1e-6

    a, b = circle(0.2), circle(0.25)
    assert eg.dice(a, a, 64, 64) == 1.0
    assert 0.0 < eg.dice(a, b, 64, 64) < 1.0
    assert eg.hausdorff(a, a, 64, 64) == 0.0
    assert eg.mean_keypoint_error(a, a) == 0.0

    curve = [100 * (1 + 0.3 * math.cos(2 * math.pi * t / 32)) for t in range(64)]
    pairs = eg.detect_peaks(curve)
    assert [(p[0], p[1]) for p in pairs] == [(0, 16), (32, 48)], pairs
    assert eg.detect_peaks(list(range(20))) == []

    single = eg.Model("single_frame", seed=1, image_size=48)
    assert single.parameter_count == single.analytic_parameter_count
    contour = single.predict_frame(frames[0])
    assert len(contour) == 42

    cls = eg.Model("multi_frame_classifier", seed=2, image_size=48)
    out = cls.predict_clip(frames[:16])
    assert 0.0 <= out["ef_regressed"] <= 1.0
    assert len(out["ed_likelihood"]) == 16
    sw = cls.sliding_window_ef(frames)
    assert len(sw["window_starts"]) >= 1

    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "single.egrf")
        single.save(path)
        again = eg.Model.load(path)
        assert again.predict_frame(frames[0]) == contour

    known = eg.Model("multi_frame_known", seed=3, image_size=48)
    r = eg.two_stage_ef(single, known, frames)
    assert len(r["volumes"]) == len(frames)

    print("python smoke test passed")


if __name__ == "__main__":
    main()
