"""Smoke test for the gridforge extension module.

Uses an installed `gridforge` if importable, otherwise the library built by
`cargo build -p gridforge-py --release`.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import gridforge

        return gridforge
    except ImportError:
        pass
    for name in ("libgridforge.so", "libgridforge.dylib", "gridforge.dll"):
        built = ROOT / "target" / "release" / name
        if built.exists():
            break
    else:
        sys.exit("build first: cargo build -p gridforge-py --release")
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / ("gridforge.pyd" if built.suffix == ".dll" else "gridforge.so")
    shutil.copy(built, target)
    spec = importlib.util.spec_from_file_location("gridforge", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    gf = load()
    names = gf.preset_names()
    assert len(names) == 20, names

    sc = gf.Scenario.preset("nine_bus_3ibr_fault15")
    sc.duration = 3.0
    assert sc.device_names() == ["unit1", "unit2", "unit3"]
    res = sc.simulate()
    cols = res.columns()
    assert len(res.t) == 301 and len(cols["unit1_omega_hz"]) == 301
    assert res.survival
    assert res.metrics()["max_balance_residual_pu"] < 1e-6
    assert res.to_csv().startswith("t,")

    again = gf.Scenario.from_toml(sc.to_toml())
    assert again.name == sc.name and again.duration == 3.0

    buses, devices = sc.power_flow()
    assert abs(buses[0][1] - 1.04) < 1e-9
    assert len(devices) == 3

    a, eig, stable = gf.Scenario.preset("nine_bus_3ibr_loadstep").linearize(at=0.5)
    assert len(a) == 3 and len(eig) == 3
    assert all(math.isfinite(x) for row in a for x in row)
    print("linearize: stable =", stable)

    costs = dict(sc.oracle_compare())
    assert costs["pmp"] <= costs["dynamic-vsg"] + 1e-9
    print("oracle:", {k: round(v, 6) for k, v in costs.items()})

    try:
        gf.Scenario.from_toml("name = 1")
    except ValueError as e:
        print("rejected bad scenario:", str(e).splitlines()[0])
    else:
        raise AssertionError("bad scenario accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
