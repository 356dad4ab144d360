"""Smoke test for the codeval extension module.

Build and install first, e.g.

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/codeval-*.whl

then run `python3 python/smoke_test.py`.
"""

import math
import os
import tempfile

import codeval


def main():
    print("codeval", codeval.__version__)

    data, delta = codeval.simulate("m1", 10, seed=3)
    assert data.n == 10 and data.d == 1 and len(delta) == 10

    code = codeval.LinearCode.polynomial(2)
    priors = codeval.PriorConfig(a0=0.5)
    mcmc = codeval.McmcConfig(iters=3000, burn_in=300, seed=7)
    draws = codeval.fit(data, code, priors, mcmc)
    assert len(draws) == 2700
    alpha = draws.mean("alpha")
    assert 0.0 <= alpha <= 1.0
    assert len(draws.trace("theta_3")) == len(draws)

    # same seed, same chain
    again = codeval.fit(data, code, priors, mcmc)
    assert again.trace("alpha") == draws.trace("alpha")

    rep = codeval.report(draws, data, code)
    assert len(rep["bias_prob"]) == 10
    assert all(0.0 <= p <= 1.0 for p in rep["bias_prob"])

    exact = codeval.oracle(data, code, priors, resolution=16)
    print(f"alpha: sampler {alpha:.3f}, exact {exact['alpha_mean']:.3f}")
    assert math.isfinite(exact["log_marginal"])

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "draws.csv")
        draws.write_csv(path)
        back = codeval.PosteriorDraws.read_csv(path)
        assert back.trace("lambda") == draws.trace("lambda")

    surrogate, lin_code, response = codeval.linearize(
        lambda k: [1 + 2 * k[0] + k[1], k[0] - k[1], 3 * k[1] + 0.5 * k[0]],
        [0.0, 0.0],
        [2.0, 1.0],
        [3.2, 0.4, 1.6],
    )
    assert lin_code.p == 2 and len(response) == 3
    assert abs(surrogate["k_hat"][0] - 0.8757) < 1e-3

    try:
        codeval.McmcConfig(iters=0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero iterations accepted")

    table = codeval.experiment("fig1", replicates=2, iters=400, burn_in=50)
    assert len(table["rows"]) == 2

    print("smoke test passed")


if __name__ == "__main__":
    main()
