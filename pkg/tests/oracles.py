"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written as direct enumeration or direct
recursion, sharing no code path with the implementations under test.
"""

import numpy as np

from ncsmode.model import LossStrategy


def simulate_arma(arma, strategy, space, thetas, u, e):
    """Direct recursion of the input-output model with known modes.

    thetas: (N,) 1-based modes theta_0..theta_{N-1}; u: at least (N, r)
    issued inputs; e: (N+1, m) innovation noise. Zero prehistory. Returns
    outputs y_0..y_N as an (N+1, m) array. The hold strategy evaluates the
    split form: delivered-input terms plus held-input terms, with the true
    applied input maintained by the hold recursion.
    """
    n_steps = len(thetas)
    m, r = arma.m, arma.r
    y = np.zeros((n_steps + 1, m))
    uhat = np.zeros((n_steps, r))
    prev = np.zeros(r)
    for k in range(n_steps):
        alpha = space.decode(int(thetas[k]))
        if strategy is LossStrategy.HOLD:
            uhat[k] = alpha * u[k] + (1.0 - alpha) * prev
        else:
            uhat[k] = alpha * u[k]
        prev = uhat[k]
    for k in range(n_steps + 1):
        acc = np.array(e[k], dtype=float).copy()
        for i in range(1, arma.n_ar + 1):
            if k - i >= 0:
                acc -= arma.a[i - 1] * y[k - i]
        for l in range(1, arma.h + 1):
            if k - l >= 0:
                acc += arma.c[l - 1] * e[k - l]
        for j in range(1, arma.p + 1):
            kk = k - j
            if kk >= 0:
                alpha = space.decode(int(thetas[kk]))
                acc = acc + arma.b[j - 1] @ (alpha * u[kk])
                if strategy is LossStrategy.HOLD:
                    prev_applied = uhat[kk - 1] if kk >= 1 else np.zeros(r)
                    acc = acc + arma.b[j - 1] @ ((1.0 - alpha) * prev_applied)
        y[k] = acc
    return y


def simulate_state_space(aug, thetas, u, v, x0_full):
    """Propagate the mode-parameterized state-space model directly.

    Same signal conventions as :func:`simulate_arma`; v is the measurement
    noise sequence (N+1, m). Returns outputs y_0..y_N.
    """
    n_steps = len(thetas)
    state = np.array(x0_full, dtype=float)
    y = np.zeros((n_steps + 1, aug.C.shape[0]))
    y[0] = aug.C @ state + v[0]
    for k in range(n_steps):
        j = int(thetas[k])
        state = aug.A_of(j) @ state + aug.B_of(j) @ u[k]
        y[k + 1] = aug.C @ state + v[k + 1]
    return y


def bayes_posterior(post_prev, lik, P):
    """Unfactored Bayes expansion over the joint of two successive modes."""
    post_prev = np.asarray(post_prev, dtype=float)
    lik = np.asarray(lik, dtype=float)
    s = post_prev.shape[0]
    joint = np.zeros((s, s))
    for l in range(s):
        for h in range(s):
            joint[l, h] = post_prev[l] * P[l, h] * lik[h]
    return joint.sum(axis=0) / joint.sum()


def joint_chain_oracle(links, space):
    """Brute-force joint transition matrix from per-link products.

    Factors are multiplied highest link first; float multiplication is not
    associative, so matching the Kronecker accumulation order keeps the
    comparison against the composed matrix exact rather than ulp-close.
    """
    s = space.s
    P = np.zeros((s, s))
    for i in space.modes():
        ai = space.decode(i).astype(int)
        for j in space.modes():
            aj = space.decode(j).astype(int)
            prob = 1.0
            for idx in reversed(range(len(links))):
                prob *= links[idx].P2[ai[idx], aj[idx]]
            P[i - 1, j - 1] = prob
    return P
