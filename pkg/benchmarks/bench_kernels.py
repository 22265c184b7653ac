"""Compare the compiled and pure-Python stepping kernels.

Times the raw kernel on one long segment and a full agent run with each
backend, and checks that both produce the same trajectory.

    python benchmarks/bench_kernels.py --steps 200000 --horizon 50000
"""
import argparse
import time

import numpy as np

from qucrl.agent import AgentConfig, run
from qucrl.kernels import available_backends, get_run_segment
from qucrl.mdp import Policy, make_environment


def time_kernel(backend, env, steps, repeats):
    segment = get_run_segment(backend)
    S, A = env.S, env.A
    pol_cdf = np.ascontiguousarray(np.cumsum(Policy.uniform(S, A).probs, axis=1))
    trans_cdf = np.ascontiguousarray(np.cumsum(env.P, axis=2))
    u = np.random.default_rng(0).random(2 * steps)
    best = np.inf
    for _ in range(repeats):
        nu = np.zeros((S, A), dtype=np.int64)
        N = np.full((S, A), 2 * steps, dtype=np.int64)  # never triggers
        mu = np.zeros((S, A, S), dtype=np.int64)
        outs = [np.empty(steps, dtype=np.int64) for _ in range(3)]
        t0 = time.perf_counter()
        n, _, _ = segment(pol_cdf, trans_cdf, nu, N, mu, 0, u, *outs)
        best = min(best, time.perf_counter() - t0)
        assert n == steps
    return best, outs


def time_run(backend, env, horizon, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = run(env, "quantum", horizon, 0, AgentConfig(backend=backend))
        best = min(best, time.perf_counter() - t0)
    return best, result.records


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=200_000)
    parser.add_argument("--horizon", type=int, default=50_000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args(argv)

    env = make_environment("riverswim", 6)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    kernel, runs = {}, {}
    for b in backends:
        kernel[b] = time_kernel(b, env, args.steps, args.repeats)
        runs[b] = time_run(b, env, args.horizon, args.repeats)
        print(f"{b:>9}: kernel {args.steps} steps {kernel[b][0] * 1e3:9.2f} ms"
              f" | agent run T={args.horizon} {runs[b][0] * 1e3:9.2f} ms")
    if len(backends) == 2:
        same_kernel = all(np.array_equal(x, y)
                          for x, y in zip(kernel["compiled"][1], kernel["python"][1]))
        same_run = runs["compiled"][1].equals(runs["python"][1])
        print(f"kernel speedup x{kernel['python'][0] / kernel['compiled'][0]:.1f}, "
              f"run speedup x{runs['python'][0] / runs['compiled'][0]:.1f}, "
              f"identical outputs: {same_kernel and same_run}")


if __name__ == "__main__":
    main()
