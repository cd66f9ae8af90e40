"""Smoke test for the szbov extension module."""

import math

import szbov


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert szbov.birkhoff_map(2j) == 0.75j
    assert close(szbov.conformal_weight(1j), 1.0, 1e-15)

    z = szbov.Loop.circle(64, 0j, 2.0)
    comps = szbov.eval_components(z, szbov.Fields(mu=0.5))
    assert close(comps["F"], 1.0625, 1e-12)
    assert close(comps["G"], 2 * math.pi**2, 1e-10)
    assert len(szbov.gradient(z, szbov.Fields(mu=0.5))) == 64
    assert szbov.Loop.from_json(z.to_json()).samples == z.samples

    passed, err, worst = szbov.grad_check(n=32, loops=1)
    assert passed, (err, worst)

    kepler = szbov.solve(szbov.seed("kepler:-1,0.3", 128), szbov.Fields(mu=0.0))
    expected = 1.5 * (4 * math.pi**2) ** (1 / 3)
    assert kepler.twisted and close(kepler.action, expected, 1e-6), kepler
    assert kepler.verify()["passed"]
    assert kepler.reintegration_error() < 1e-5
    again = szbov.Orbit.from_json(kepler.to_json())
    assert again.to_json() == kepler.to_json()

    euler = szbov.solve(szbov.seed("circle:0,0,1", 64), szbov.Fields(mu=0.5))
    assert euler.winding is None and len(euler.collision_times) == 2
    path = [szbov.Fields(0.5, electric="uniform_oscillating", electric_params=[0.001 * k, 1.0, 0.0]) for k in (1, 2)]
    family, failure = szbov.continue_family(euler, path)
    assert failure is None and len(family) == 3

    try:
        szbov.solve(szbov.seed("ellipse:1.6,0.8", 64), szbov.Fields(mu=0.5), max_iterations=2)
    except szbov.NoConvergenceError:
        pass
    else:
        raise AssertionError("expected NoConvergenceError")

    try:
        szbov.Fields(mu=2.0)
    except szbov.ValidationError:
        pass
    else:
        raise AssertionError("expected ValidationError")

    print(f"ok: Kepler action {kepler.action:.10f} in {kepler.iterations} iterations")


if __name__ == "__main__":
    main()
