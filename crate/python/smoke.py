"""Smoke test for the genprior_py extension.

Build first with ``python/build.sh``, then run ``python3 python/smoke.py``.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import genprior_py as gp


def main():
    gen = gp.Generator.suite()
    assert (gen.latent_dim, gen.output_dim) == (4, 64)

    model = gp.LinearModel.blur(3.0, 8, 8, 1e-6)
    x = gen.mean([0.3, -0.2, 0.5, 0.1])
    y = model.observe(x, 7)
    assert model.observe(x, 7) == y, "noise stream is not reproducible"

    lap = gp.laplace_fit(model, y, gen)
    lat = gp.latent_map(model, y, gen)
    l2 = gp.l2_oracle(model, y, x)
    for name, xhat in [("laplace", lap["mean"]), ("latent", lat["x"]), ("l2", l2["x"])]:
        print(f"{name:8s} PSNR {gp.psnr(x, xhat):6.2f} dB")
    assert gp.psnr(x, lap["mean"]) > 30.0
    assert all(s > 0 for s in lap["pixel_std"])
    assert lap["converged"]

    verdict = gp.guide(model, y, gen, seed=1)
    assert verdict["chosen"] in ("laplace", "latent")

    w = [[1.0], [2.0]]
    affine = gp.Generator.affine(w, [0.0, 0.0], 0.5)
    log_p, se = gp.mc_log_prior(affine, [0.1, -0.1], 20000, 3)
    exact = -0.5 * (math.log(4 * math.pi**2 * 0.5 * 5.5) + (0.1**2 + 0.1**2) / 0.5 - (0.1 - 0.2) ** 2 / (0.5 * 5.5))
    assert abs(log_p - exact) < 4 * se + 1e-9, (log_p, exact, se)

    try:
        gp.LinearModel([[1.0, 2.0], [3.0]], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("ragged matrix accepted")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "w.json")
        gen.save(path)
        assert gp.validate_weights(path) == (4, 64)
        out = gp.run_experiment(
            'image_count = 1\neta_list = [3.0]\nsigma_exponents = [2]\nmethods = ["l2", "laplace"]\n',
            tmp,
        )
        assert out["records"] == 2 and out["failures"] == 0
        with open(out["csv"]) as f:
            assert f.readline().startswith("image_id,eta,sigma")

    print("smoke ok")


if __name__ == "__main__":
    main()
