"""Smoke test for the `mblb` extension module.

Build first:
    cargo build --release -p mblb-py --features extension-module
then run:
    python3 python/smoke_test.py
The script imports an installed `mblb` if there is one, otherwise the
library just built under target/.
"""

import importlib.util
import math
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import mblb  # noqa: F401

        return mblb
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libmblb.so", "libmblb.dylib", "mblb.dll"):
            built = ROOT / "target" / profile / name
            if built.exists():
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                staged = pathlib.Path(tempfile.mkdtemp()) / ("mblb" + suffix)
                shutil.copy(built, staged)
                spec = importlib.util.spec_from_file_location("mblb", staged)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("mblb extension not found; build it with "
             "`cargo build --release -p mblb-py --features extension-module`")


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    mblb = load()

    # Two states, one action: state 0 moves to the rewarding absorbing state 1.
    mdp = mblb.TabularMdp(2, 1, [0.0, 1.0, 0.0, 1.0], [0.0, 1.0], 0.9)
    pi = [1.0, 1.0]
    close(mdp.eta(pi), 0.9 / (1 - 0.9), 1e-12)
    close(sum(mdp.occupancy(pi)), 1.0, 1e-12)
    close(mdp.value(pi)[1], 10.0, 1e-12)
    again = mblb.TabularMdp.from_toml(mdp.to_toml())
    close(again.eta(pi), mdp.eta(pi), 0.0)

    leaky = mblb.TabularMdp(2, 1, [0.5, 0.5, 0.0, 1.0], [0.0, 1.0], 0.9)
    close(mdp.simulation_gap(leaky, pi), leaky.eta(pi) - mdp.eta(pi), 1e-10)

    close(mblb.lower_bound(8.1, 0.2, 0.3, 0.9)[3], 3.1, 1e-12)
    close(mblb.statistical_correction(5000, 50.0, (10, 10, 10), 0.1, 10.0),
          20.0 * math.sqrt(50.0 * math.log(20000.0) / 5000.0), 1e-12)

    close(mblb.hard_instance_gap([1.0, 0.0, 0.0, 0.0]), 6.075, 1e-8)
    grid = mblb.theta_grid(4, 3)
    assert min(mblb.hard_instance_mml_loss(t) for t in grid) >= 1.125 - 1e-6

    k, curvature, _ = mblb.riccati_optimal()
    assert -1.2 < k < -0.9 and curvature < 0.0, (k, curvature)

    out = tempfile.mkdtemp()
    files = mblb.run_experiment("experiment = spi-check\nspi_trials = 3\n", out)
    assert any(f.endswith("spi.csv") for f in files), files
    rows = open(os.path.join(out, "spi.csv")).read().strip().splitlines()[1:]
    assert len(rows) == 3 and all(r.endswith(",true") for r in rows), rows

    try:
        mblb.TabularMdp(2, 1, [0.5, 0.4, 0.0, 1.0], [0.0, 1.0], 0.9)
    except ValueError:
        pass
    else:
        raise AssertionError("non-stochastic row accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
