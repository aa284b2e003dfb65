"""Smoke test for the pointattn extension module.

Build and install first:
    pip install maturin
    cd crates/python && maturin develop --release
"""

import tempfile
from pathlib import Path

import pointattn as pa


def main():
    scene = pa.generate_scene(seed=3, extent=(2.0, 2.0), density=40.0)
    n = len(scene)
    assert n > 0 and len(scene.labels) == n
    print(scene)

    pos = scene.positions
    centers = list(range(10))
    rows = pa.multi_directional_search(pos, centers, radius=0.4, m=1)
    assert len(rows) == 10 and all(len(r) == 16 for r in rows)
    assert all(len(r) == 8 for r in pa.knn_search(pos, centers, 8))
    assert all(len(r) == 8 for r in pa.ball_query(pos, centers, 0.3, 8))
    fps = pa.farthest_point_sampling(pos, 16)
    assert fps[0] == 0 and len(set(fps)) == 16

    cfg = pa.NetworkConfig.tiny(3)
    cfg.set("search", "knn")
    model = pa.Model(cfg, seed=0)
    losses = model.train([scene], epochs=3, lr=1e-2)
    assert len(losses) == 3 and all(l == l for l in losses)

    labels, confidence = model.predict(scene, stride=1.0)
    assert len(labels) == n and all(0.0 < c <= 1.0 for c in confidence)
    metrics = pa.compute_metrics(labels, scene.labels, 3)
    print("OA %.2f  mIoU %.2f" % (metrics["overall_accuracy"], metrics["mean_iou"]))

    with tempfile.TemporaryDirectory() as d:
        ckpt = Path(d) / "m.ckpt"
        model.save(ckpt)
        again = pa.Model.load(ckpt, cfg)
        assert again.predict(scene, stride=1.0)[0] == labels
        out = Path(d) / "pred.xyzrgbl"
        scene.save_labeled(labels, out)
        assert pa.PointCloud.load(out).labels == labels

    try:
        cfg.set("no_such_key", "1")
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("unknown key accepted")

    results = pa.selfcheck(trials=1)
    failed = [k for k, v in results.items() if v is not None]
    assert not failed, failed
    print("%d properties passed" % len(results))
    print("ok")


if __name__ == "__main__":
    main()
