"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--n-individuals 1000] [--repeat 5] [--json out.json]

Each case is run once to warm up (this triggers JIT compilation) and then
timed ``--repeat`` times; the table reports the best run per backend.
"""

import argparse
import json
import time

import numpy as np

from lgm_cmprsk import _accel
from lgm_cmprsk.families import family_arrays
from lgm_cmprsk.inference import _ThetaContext, log_posterior_hyper
from lgm_cmprsk.models import count_competing_risks_model
from lgm_cmprsk.simulate import SimConfig, simulate_example5
from lgm_cmprsk.stacker import assemble


def family_cases(n, rng):
    eta = rng.normal(-1.0, 0.5, n)
    y = rng.poisson(np.exp(eta)).astype(float)
    lfact = np.zeros(n)
    t = rng.exponential(1.0, n)
    d = (rng.random(n) < 0.3).astype(float)
    return {
        "poisson kernel": lambda: family_arrays("poisson", eta, y=y, lfact=lfact),
        "weibull kernel": lambda: family_arrays("weibull_surv", eta, t=t, d=d, hyper=1.3),
        "gaussian kernel": lambda: family_arrays("gaussian", eta, y=y, hyper=2.0),
    }


def model_cases(n_individuals):
    data = simulate_example5(SimConfig(n_individuals=n_individuals, seed=1))
    model = assemble(count_competing_risks_model(), data)
    theta = model.hyper_layout.initial_free()
    full = model.hyper_layout.expand(theta)
    _, ap = log_posterior_hyper(theta, model)
    x = ap.mode

    def factor():
        ctx = _ThetaContext(model, full)
        _, _, d2 = ctx.evaluate(x)
        ctx.factorize(d2)

    return {
        f"precision factorisation (n={model.n_latent})": factor,
        "Laplace evaluation at one theta": lambda: log_posterior_hyper(theta, model, x_init=x),
    }


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-individuals", type=int, default=1000)
    p.add_argument("--n-rows", type=int, default=1_000_000, help="rows for the likelihood kernels")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the timings here")
    args = p.parse_args(argv)

    backends = ["numba", "numpy"] if _accel.HAS_NUMBA else ["numpy"]
    cases = {**family_cases(args.n_rows, np.random.default_rng(0)), **model_cases(args.n_individuals)}
    results = {}
    for name, fn in cases.items():
        results[name] = {}
        for b in backends:
            _accel.set_backend(b)
            results[name][b] = best_time(fn, args.repeat)
    _accel.set_backend(backends[0])

    width = max(map(len, results))
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) + "    speedup")
    for name, row in results.items():
        cols = "  ".join(f"{row[b] * 1e3:8.2f}ms" for b in backends)
        ratio = f"{row['numpy'] / row['numba']:8.1f}x" if "numba" in row else ""
        print(f"{name:<{width}}  {cols}  {ratio}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
