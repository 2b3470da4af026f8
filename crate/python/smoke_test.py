"""Smoke test for the Python bindings.

Builds the extension with cargo if it is not importable, then trains a tiny
source/weak pair on synthetic data and round-trips a checkpoint.
"""

import importlib
import os
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        return importlib.import_module("cmstew_py")
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "cmstew-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "release"
    built = next(p for p in (target / "libcmstew_py.so", target / "libcmstew_py.dylib") if p.exists())
    out = Path(tempfile.mkdtemp(prefix="cmstew_py_"))
    shutil.copy(built, out / ("cmstew_py" + sysconfig.get_config_var("EXT_SUFFIX")))
    sys.path.insert(0, str(out))
    return importlib.import_module("cmstew_py")


def main():
    cm = load_module()

    assert abs(cm.ccc([1, 2, 3, 4], [2, 2, 4, 4]) - 0.8) < 1e-12
    assert abs(cm.weighted_f1([1, 1, 0, 0], [1, 0, 0, 0]) - 11 / 15) < 1e-12
    assert cm.shift_labels([float(i) for i in range(100)], 2.8)[0] == 70.0
    x = [[float(i), float(i * i % 7)] for i in range(30)]
    assert abs(cm.dcca_correlation(x, x, r1=0.0, r2=0.0) - 2.0) < 1e-6

    ds = cm.Dataset.synthetic(train_clips=12, dev_clips=4, test_clips=4, clip_len=10, seed=1).standardized()
    print(ds)
    arch = {"latent_dim": 4, "ffn_hidden": 8, "classifier_hidden": 6, "gru_layers": 1, "transformer_layers": 1}
    train = {"lr": 0.003, "batch_size": 4, "max_epochs": 2}
    source = cm.train_source(ds, "strong", arch=arch, train=train)
    weak = cm.train_weak(ds, "weak", "strong", source, arch=arch, train=train)
    print(source, weak, "best epoch", weak.best_epoch)
    assert weak.kind == "weak" and len(weak.history()) >= 1

    report = weak.evaluate(ds, "weak", "test")
    assert 0.0 <= report["acc"] <= 1.0, report

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "weak.ckpt"
        weak.save(path)
        back = cm.Model.load(path)
        clip = ds.features("test", 0, "weak")
        assert back.predict(clip) == weak.predict(clip)
        deploy = back.deployable()
        assert deploy.kind == "source" and deploy.num_params < back.num_params
        assert deploy.predict(clip) == weak.predict(clip)

    try:
        ds.num_clips("holdout")
    except ValueError as e:
        assert "available" in str(e)
    else:
        raise AssertionError("unknown split accepted")

    report = cm.verify("fast")
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert not failed, failed
    print(f"smoke test passed ({len(report['checks'])} verification checks)")


if __name__ == "__main__":
    main()
