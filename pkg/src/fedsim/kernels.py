"""Inner training loops for sequential, parallel and minibatch rounds.

These are the hot paths. They are compiled with numba when it is available
(see :mod:`fedsim._accel`) and otherwise run as ordinary Python over NumPy
arrays. Randomness is drawn up front by the caller, so a kernel is a pure
function of its array arguments and both execution paths agree float for float.

Common arguments
----------------
A, b : (M, d, d), (M, d) client curvatures and linear terms
x0 : (d,) starting point
orders : (R, S) participating client indices per round, in visiting order
noise : (M, R, K, d) per-client noise draws, or an array with ``shape[1] == 0``
clip : max gradient norm, ``<= 0`` disables clipping
clip_mode : 1 clips every stochastic gradient, 2 clips each client's summed update
threshold : any iterate whose norm exceeds this aborts the run

Each kernel returns ``(traj, rounds_done, max_applied_norm)`` where ``traj`` has
shape ``(R + 1, d)`` and only rows ``0..rounds_done`` are meaningful.
"""

import math

import numpy as np

from ._accel import jit

CLIP_STEP = 1
CLIP_UPDATE = 2


@jit
def _client_grad(A, b, m, x, g):
    d = x.shape[0]
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += A[m, i, j] * x[j]
        g[i] = acc + b[m, i]


@jit
def _norm(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return math.sqrt(s)


@jit
def _clip_inplace(g, clip):
    n = _norm(g)
    if n > clip:
        scale = clip / n
        for i in range(g.shape[0]):
            g[i] = g[i] * scale
        n = _norm(g)
        # rescaling can overshoot by an ulp or two
        while n > clip:
            for i in range(g.shape[0]):
                g[i] = g[i] * (1.0 - 2.220446049250313e-16)
            n = _norm(g)
    return n


@jit
def _bad(x, threshold):
    n = _norm(x)
    return not (n <= threshold)


@jit
def _local_steps(A, b, m, r, y, noise, has_noise, K, eta, clip, clip_mode, threshold, g, y0):
    """Run ``K`` steps of client ``m`` in place on ``y``; return (ok, max_norm)."""
    d = y.shape[0]
    max_norm = 0.0
    if clip_mode == CLIP_UPDATE:
        for i in range(d):
            y0[i] = y[i]
    for k in range(K):
        _client_grad(A, b, m, y, g)
        if has_noise:
            for i in range(d):
                g[i] = g[i] + noise[m, r, k, i]
        if clip > 0.0 and clip_mode == CLIP_STEP:
            n = _clip_inplace(g, clip)
        else:
            n = _norm(g)
        if clip_mode != CLIP_UPDATE and n > max_norm:
            max_norm = n
        for i in range(d):
            y[i] = y[i] - eta * g[i]
        if _bad(y, threshold):
            return False, max_norm
    if clip_mode == CLIP_UPDATE:
        # summed gradient of the whole local pass
        for i in range(d):
            g[i] = (y0[i] - y[i]) / eta
        if clip > 0.0:
            n = _clip_inplace(g, clip)
            for i in range(d):
                y[i] = y0[i] - eta * g[i]
        else:
            n = _norm(g)
        max_norm = n
    return True, max_norm


@jit
def sfl_kernel(A, b, x0, orders, noise, K, eta, clip, clip_mode, threshold):
    R, S = orders.shape
    d = x0.shape[0]
    traj = np.zeros((R + 1, d))
    traj[0] = x0
    x = x0.copy()
    g = np.empty(d)
    y0 = np.empty(d)
    has_noise = noise.shape[1] > 0
    max_norm = 0.0
    for r in range(R):
        for j in range(S):
            m = orders[r, j]
            ok, mn = _local_steps(A, b, m, r, x, noise, has_noise, K, eta, clip, clip_mode,
                                  threshold, g, y0)
            if mn > max_norm:
                max_norm = mn
            if not ok:
                return traj, r, max_norm
        traj[r + 1] = x
    return traj, R, max_norm


@jit
def pfl_kernel(A, b, x0, orders, noise, K, eta, clip, clip_mode, threshold):
    R, S = orders.shape
    d = x0.shape[0]
    traj = np.zeros((R + 1, d))
    traj[0] = x0
    x = x0.copy()
    y = np.empty(d)
    mean = np.empty(d)
    g = np.empty(d)
    y0 = np.empty(d)
    has_noise = noise.shape[1] > 0
    max_norm = 0.0
    for r in range(R):
        for j in range(S):
            m = orders[r, j]
            for i in range(d):
                y[i] = x[i]
            ok, mn = _local_steps(A, b, m, r, y, noise, has_noise, K, eta, clip, clip_mode,
                                  threshold, g, y0)
            if mn > max_norm:
                max_norm = mn
            if not ok:
                return traj, r, max_norm
            # running mean in fixed order: exact when all local iterates agree
            if j == 0:
                for i in range(d):
                    mean[i] = y[i]
            else:
                for i in range(d):
                    mean[i] = mean[i] + (y[i] - mean[i]) / (j + 1)
        for i in range(d):
            x[i] = mean[i]
        traj[r + 1] = x
    return traj, R, max_norm


@jit
def minibatch_kernel(A_bar, b_bar, x0, noise, R, K, eta, clip, threshold):
    """``K`` steps per round on the global objective.

    The noise of one step is the mean of the ``M`` client draws scaled by
    ``1/sqrt(K)``, so its variance is ``sigma^2 / (M K)``.
    """
    d = x0.shape[0]
    M = noise.shape[0]
    has_noise = noise.shape[1] > 0
    scale = 1.0 / (M * math.sqrt(K))
    traj = np.zeros((R + 1, d))
    traj[0] = x0
    x = x0.copy()
    g = np.empty(d)
    max_norm = 0.0
    for r in range(R):
        for k in range(K):
            _client_grad(A_bar, b_bar, 0, x, g)
            if has_noise:
                for i in range(d):
                    acc = 0.0
                    for m in range(M):
                        acc += noise[m, r, k, i]
                    g[i] = g[i] + acc * scale
            if clip > 0.0:
                n = _clip_inplace(g, clip)
            else:
                n = _norm(g)
            if n > max_norm:
                max_norm = n
            for i in range(d):
                x[i] = x[i] - eta * g[i]
            if _bad(x, threshold):
                return traj, r, max_norm
        traj[r + 1] = x
    return traj, R, max_norm
