"""Independent reference implementations used only by the tests.

These deliberately use brute force or library routines rather than the
package's own algorithms, so agreement is informative.
"""

import itertools

import numpy as np


def brute_force_hmm(logem, transition, initial):
    """Exhaustive-path evaluation of the hidden Markov posterior.

    The chain has a pre-data state s0 ~ initial, then one transition into
    the state of the first observation. Returns (loglik, smoothed,
    pairwise, initial_pairwise) matching filter_smooth's conventions.
    """
    logem = np.asarray(logem, dtype=float)
    P = np.asarray(transition, dtype=float)
    init = np.asarray(initial, dtype=float)
    n, K = logem.shape

    total = 0.0
    smoothed = np.zeros((n, K))
    pairwise = np.zeros((n - 1, K, K))
    initial_pairwise = np.zeros((K, K))
    for path in itertools.product(range(K), repeat=n + 1):
        s0, rest = path[0], path[1:]
        w = init[s0]
        prev = s0
        for t, s in enumerate(rest):
            w *= P[prev, s] * np.exp(logem[t, s])
            prev = s
        total += w
        for t, s in enumerate(rest):
            smoothed[t, s] += w
        for t in range(n - 1):
            pairwise[t, rest[t], rest[t + 1]] += w
        initial_pairwise[s0, rest[0]] += w
    return (np.log(total), smoothed / total, pairwise / total,
            initial_pairwise / total)


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def random_hmm_instance(rng, n, K):
    """A random emission matrix and HMM parameters for oracle tests."""
    logem = np.log(rng.uniform(0.05, 1.0, size=(n, K)))
    P = rng.dirichlet(np.ones(K) * 2.0, size=K)
    init = rng.dirichlet(np.ones(K) * 2.0)
    return logem, P, init
