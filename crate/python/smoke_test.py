"""Smoke test for the `nsh` extension module.

Build first:

    cargo build -p nsh-python --features extension-module

then run `python3 python/smoke_test.py`. An installed `nsh` (e.g. from
`maturin develop`) is used if present; otherwise the freshly built library
under target/ is loaded directly.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys
import tempfile


def load_nsh():
    try:
        import nsh

        return nsh
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        lib = root / "target" / profile / "libnsh.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("nsh", str(lib))
            spec = importlib.util.spec_from_file_location("nsh", lib, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("nsh extension not found; build it with cargo first")


def main():
    nsh = load_nsh()

    assert nsh.tau(0, 1000) == 1.0
    assert nsh.tau(200, 1000) == 1.0
    assert nsh.tau(1000, 1000) == 3e-5

    pts = [[math.cos(2 * math.pi * i / 40), math.sin(2 * math.pi * i / 40)] for i in range(40)]
    cloud = nsh.PointCloud(pts)
    assert cloud.dim == 2 and len(cloud) == 40
    assert nsh.chamfer_l1(cloud, cloud) == 0.0
    assert nsh.f_score(cloud, cloud, 0.01)[0] == 100.0

    net, history = nsh.fit(cloud, iters=5, hidden_layers=1, width=16, config="[train]\nbatch_size = 256\n")
    assert len(history) >= 2 and history[-1]["iteration"] == 4
    value, grad, hess = net.jet([0.1, 0.2])
    assert len(grad) == 2 and len(hess) == 2
    assert abs(hess[0][1] - hess[1][0]) < 1e-10
    assert len(net.values([[0.0, 0.0], [0.5, 0.5]])) == 2

    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "m.nsh"
        net.save(str(path))
        again = nsh.SineNetwork.load(str(path))
        assert again.values([[0.3, -0.2]]) == net.values([[0.3, -0.2]])

    contour = nsh.extract(net, resolution=32)
    assert set(contour) >= {"vertices", "segments", "components"}

    report = nsh.analyze("sphere", delta=0.05, resolution=16, shell_samples=500)
    assert report["shell"]["mean_abs_det"] < 1e-12
    assert abs(report["shell"]["mean_grad_norm"] - 1.0) < 1e-9

    try:
        nsh.PointCloud([[0.0, 0.0], [1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("ragged input accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
