"""Smoke test for the boundary_spot_py extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math
import tempfile
from pathlib import Path

import boundary_spot_py as bs


def main():
    pts = bs.resample_polyline([(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)], 8)
    want = [(0, 0), (1, 0), (2, 0), (3, 0), (3, 1), (3, 2), (3, 3), (3, 4)]
    assert all(math.dist(p, q) < 1e-12 for p, q in zip(pts, want)), pts

    d = bs.default_points(64.0, 8.0, 7)
    off = [0.01 * i for i in range(28)]
    t = bs.decode_offsets(d, off, 64.0, 8.0)
    back = bs.encode_offsets(d, t, 64.0, 8.0)
    assert max(abs(a - b) for a, b in zip(off, back)) < 1e-12

    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert abs(bs.polygon_iou(sq, sq) - 1.0) < 1e-12
    assert bs.edit_distance("kitten", "sitting") == 3

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        summary = bs.gen_dataset(str(tmp / "ds"), 12, 7)
        assert summary["images"] == 12, summary

        model = bs.Spotter(seed=3, rec_channels=8, hidden=16, attention=16)
        metrics = model.train(str(tmp / "ds"), 1, 3)
        assert len(metrics) == 1 and metrics[0]["kind"] == "train_epoch"

        model.save(str(tmp / "m.ckpt"))
        loaded = bs.Spotter.load(str(tmp / "m.ckpt"))
        assert loaded.config == model.config

        n = loaded.spot_dataset(str(tmp / "ds"), str(tmp / "spots.jsonl"))
        assert n == summary["instances"]
        det, e2e = bs.evaluate(str(tmp / "spots.jsonl"), str(tmp / "ds"))
        assert det["kind"] == "detection" and e2e["true_positives"] <= det["true_positives"]

        spots = loaded.spot(str(tmp / "ds" / "images" / "0000.png"), [(96.0, 48.0, 60.0, 16.0, 0.1)])
        assert len(spots) == 1 and set(spots[0]) == {"side_a", "side_b", "text", "score"}

    print("smoke test passed")


if __name__ == "__main__":
    main()
