"""Smoke test for the idcnn_py extension.

Build and run from the repository root:

    cargo build --release -p idcnn-py --features extension-module
    cp target/release/libidcnn_py.so python/idcnn_py.so
    python3 python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import idcnn_py as m  # noqa: E402

FIXTURES = Path(__file__).resolve().parent.parent / "crates/core/tests/data/natural"


def main():
    # Speckle statistics.
    f = m.sample_speckle(200, 200, 4.0, 1)
    vals = f.to_list()
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    assert abs(mean - 1.0) < 0.01, mean
    assert abs(var - 0.25) < 0.02, var
    assert abs(m.gamma_pdf(1.0, 1.0) - math.exp(-1.0)) < 1e-12

    # Metrics and baselines.
    flat = m.Image.filled(64, 64, 0.5)
    noisy = m.apply_speckle(flat, m.sample_speckle(64, 64, 1.0, 2))
    region = (0, 0, 64, 64)
    assert abs(m.enl(noisy, region) - 1.0) < 0.2
    lee = m.lee_filter(noisy, 1.0)
    kuan = m.kuan_filter(noisy, 1.0, window=5)
    assert m.enl(lee, region) > m.enl(noisy, region)
    assert m.enl(kuan, region) > m.enl(noisy, region)
    assert m.psnr(flat, lee) > m.psnr(flat, noisy)
    assert m.ssim(flat, flat) == 1.0
    assert m.uqi(noisy, noisy) > 0.999999

    # Network shape and parameter census.
    net = m.Network()
    assert net.param_count == 223553, net.param_count
    assert len(net.param_census()) == 8
    x, n = net.despeckle(noisy)
    assert (x.width, x.height) == (64, 64)
    assert min(n.to_list()) >= 0.0

    # Tiny end-to-end run.
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        src = tmp / "src"
        src.mkdir()
        for p in sorted(FIXTURES.glob("*.png"))[:4]:
            (src / p.name).write_bytes(p.read_bytes())
        pairs, manifest, smean, svar = m.generate_dataset(str(src), str(tmp / "data"), 1.0, size=48, seed=3)
        assert pairs == 4
        assert abs(smean - 1.0) < 0.05
        trained, losses = m.train(
            manifest, str(tmp / "run"), iterations=6, batch_size=2, features=8, depth=3, crop=32
        )
        assert len(losses) == 6
        assert all(math.isfinite(t) for _, _, t in losses)
        assert (tmp / "run" / "final.idcnn").exists()
        rows = m.evaluate_checkpoint(trained, manifest)
        assert len(rows) == 4
        trained.save(str(tmp / "copy.idcnn"))
        again = m.Network.load(str(tmp / "copy.idcnn"))
        assert again.param_count == trained.param_count

    try:
        m.Image(2, 2, [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("bad image size accepted")
    try:
        m.Image.load("/nonexistent/x.png")
    except IOError:
        pass
    else:
        raise AssertionError("missing file accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
