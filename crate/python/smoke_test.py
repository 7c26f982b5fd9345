"""Smoke test for the quadtune_py extension.

Build the module first (see README), then run `python python/smoke_test.py`.
"""

import math
import pathlib
import sys

import quadtune_py as qt

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def check_dynamics():
    mass, g = 1.0, 9.81
    hover = [0.0] * 12
    hover[2] = 2.0
    d = qt.dynamics_rhs(hover, [mass * g, 0.0, 0.0, 0.0])
    assert all(abs(v) < 1e-12 for v in d), d

    falling = qt.dynamics_rhs(hover, [0.0, 0.0, 0.0, 0.0])
    assert close(falling[8], -g, 1e-12), falling

    nxt = qt.rk4_step(hover, [mass * g, 0.0, 0.0, 0.0], 0.01)
    assert all(close(a, b, 1e-12) for a, b in zip(nxt, hover))

    w = [400.0**2, 410.0**2, 395.0**2, 405.0**2]
    back = qt.unmix(qt.mix_motors(w))
    assert all(close(a, b, 1e-9) for a, b in zip(back, w)), back


def check_gust():
    f = qt.GustFilter(rho=0.0, d0=[1.0, 1.0, 1.0])
    for k in range(1, 91):
        d = f.step(0.01)
        want = math.exp(-k * 0.01 / 0.3)
        assert abs(d[0] - want) / want < 0.01
    noisy = qt.GustFilter(seed=3)
    assert noisy.stationary_variance() > 0.0
    xs = [noisy.step(0.01)[0] for _ in range(2000)]
    assert any(x != 0.0 for x in xs)


def check_mlp():
    net = qt.Mlp(3, [(5, "sigmoid"), (2, "linear")], seed=1)
    assert net.param_count == 3 * 5 + 5 + 5 * 2 + 2
    x = [0.3, -0.2, 0.9]
    y = net.forward(x)
    grads, dx = net.backward(x, [1.0, 0.0])
    assert len(grads) == net.param_count and len(dx) == 3

    p = net.params()
    h = 1e-6
    for i in (0, 7, len(p) - 1):
        up, dn = list(p), list(p)
        up[i] += h
        dn[i] -= h
        net.set_params(up)
        f_up = net.forward(x)[0]
        net.set_params(dn)
        f_dn = net.forward(x)[0]
        fd = (f_up - f_dn) / (2 * h)
        assert abs(fd - grads[i]) < 1e-6, (i, fd, grads[i])
    net.set_params(p)
    assert qt.Mlp.from_json(net.to_json()).forward(x) == y


def check_episode():
    sc = qt.Scenario.load(str(CONFIGS / "disturbance.toml"))
    sc.duration = 3.0
    base = sc.run("baseline")
    adapt = sc.run("adaptive")
    assert base.failure is None and adapt.failure is None
    assert len(base) == len(adapt) == round(3.0 / sc.dt)
    for axis in ("roll", "pitch", "yaw", "alt"):
        assert math.isfinite(adapt.rmse(axis))
    cols = adapt.columns()
    assert list(cols) == qt.RunResult.header()
    assert cols["t"] == adapt.column("t")
    csv = adapt.to_csv()
    assert csv.startswith(qt.SCHEMA_LINE)
    assert "\r" not in csv
    again = qt.Scenario.from_toml(sc.to_toml()).run("adaptive")
    assert again.to_csv() == csv


def check_tools():
    roll = qt.zn_tune("roll")
    assert roll["kp"] > 0 and roll["ultimate_period"] > 0
    results = qt.run_gradcheck([0])
    assert results and all(r["passed"] for r in results), results


def main():
    for check in (check_dynamics, check_gust, check_mlp, check_episode, check_tools):
        check()
        print(f"{check.__name__}: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
