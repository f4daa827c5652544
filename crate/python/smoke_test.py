"""Smoke test of the kedmd extension: fit, certify, design and run a short closed loop.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/kedmd-*.whl
"""

import json
import math
import sys

import kedmd


def check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return ok


def main():
    results = []
    plant = kedmd.VanDerPol()
    x1 = plant.step([0.5, -0.2], 0.3)
    expected = [0.5 + 0.05 * -0.2, -0.2 + 0.05 * (0.1 * (1 - 0.25) * -0.2 - 0.5 + 0.3)]
    results.append(check("plant step", max(abs(a - b) for a, b in zip(x1, expected)) < 1e-15))

    results.append(check("padua count", kedmd.padua_count(50) == 1326 and len(kedmd.observation_grid(352)) == 352))
    results.append(check("kernel peak", abs(kedmd.wendland_kernel([0.0, 0.0], [0.0, 0.0], 1.0) - 0.05) < 1e-15))
    results.append(check("cbar", abs(kedmd.cbar(3, 2.0) - 7.0) < 1e-12))
    results.append(check("box-rule horizon", kedmd.max_horizon(0.05, 2.27) == 4))

    data = kedmd.ClusterDataset.generate(plant, d=352, samples=25, seed=0)
    results.append(check("dataset", len(data) == 352 and data.triplet_count == 352 * 25))

    model = kedmd.SurrogateModel.fit(data, 0.75, pi=True)
    plain = kedmd.SurrogateModel.fit(data, 0.75, pi=False)
    f0 = model.predict([0.0, 0.0], [0.0])
    results.append(check("PI origin", math.hypot(*f0) <= 1e-9, f"|f(0,0)|={math.hypot(*f0):.2e}"))
    g0 = plain.predict([0.0, 0.0], [0.0])
    results.append(check("plain origin offset", math.hypot(*g0) > 0.0, f"|f(0,0)|={math.hypot(*g0):.2e}"))

    x, u = [0.3, -0.4], [0.5]
    err = math.dist(model.predict(x, u), plant.step(x, u[0]))
    results.append(check("prediction error", err < 0.06, f"{err:.2e}"))
    a, b = model.jacobians(x, u)
    results.append(check("jacobian shapes", len(a) == 2 and len(a[0]) == 2 and len(b) == 2 and len(b[0]) == 1))

    again = kedmd.SurrogateModel.from_json(model.to_json())
    results.append(check("model json round trip", again.predict(x, u) == model.predict(x, u)))

    bounds = kedmd.CertifiedBounds.estimate(plant, model, state_steps=21, input_steps=5)
    results.append(check("bounds", bounds.eta > 0 and bounds.lbar > 1 and bounds.c_x is not None,
                         f"eta={bounds.eta:.3g} lbar={bounds.lbar:.3g}"))

    ctl = kedmd.Controller.design(plant, model, bounds, horizon=4)
    terminal = ctl.terminal()
    results.append(check("terminal level", terminal["c"] > 0, f"c={terminal['c']:.3g}"))
    u0, status, cost = ctl.feedback([0.5, 0.5])
    results.append(check("feedback", status in ("optimal", "max_iter") and abs(u0[0]) <= 2.0, status))

    run = ctl.simulate(plant, [0.5, 0.5], steps=80)
    m = run["metrics"]
    results.append(check("closed loop", m["feasibility_rate"] == 1.0 and run["norms"][-1] < 1e-3,
                         f"final={run['norms'][-1]:.2e}"))

    print(json.dumps({"passed": sum(results), "total": len(results)}))
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
