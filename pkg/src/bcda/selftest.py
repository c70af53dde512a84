"""Quick property checks that run without a test framework.

Each check returns ``(name, ok, detail)``; ``run_selftest`` prints one line
per check and returns True when all pass.
"""

import numpy as np

from . import actor as mlp
from . import bls, envs, numerics

LAM = 2.0**-30


def _rel(a, b):
    d = np.linalg.norm(b)
    return np.linalg.norm(a - b) / (d if d > 0 else 1.0)


def check_pinv_append(rng, cases=50):
    worst = 0.0
    for i in range(cases):
        N = int(rng.integers(12, 61))
        q = int(rng.choice([1, 5]))
        p = int(rng.integers(1, min(30, N - q - 1) + 1))
        # unit spectral norm: with an absolute lambda, exact duplicate columns make the
        # ridge pseudoinverse itself sensitive at the level ||A||^2 eps / lambda
        A = rng.standard_normal((N, p))
        A /= np.linalg.norm(A, 2)
        H = A[:, rng.integers(0, p, size=q)] if i % 3 == 0 else rng.standard_normal((N, q)) / np.sqrt(N)
        upd = numerics.pinv_append_columns(A, numerics.pinv_ridge(A, LAM), H, LAM)
        worst = max(worst, _rel(upd.pinv, numerics.pinv_ridge(np.hstack([A, H]), LAM)))
    return "incremental pseudoinverse", worst < 1e-6, f"max rel err {worst:.2e}"


def check_bls_growth(rng):
    X = rng.uniform(-1, 1, (200, 3))
    Y = np.sin(X.sum(axis=1, keepdims=True))
    net = bls.bls_init(3, 1, 5, 40, 0.8, LAM, rng)
    rmse = [bls.fit_output_weights(net, X, Y).rmse]
    for plan in (bls.BlsGrowthPlan(0, 10), bls.BlsGrowthPlan(1, 5), bls.BlsGrowthPlan(2, 0)):
        rmse.append(bls.grow(net, plan, X, Y, rng).rmse)
    fresh = net.copy()
    bls.fit_output_weights(fresh, X, Y)
    err = _rel(bls.bls_forward(net, X), bls.bls_forward(fresh, X))
    monotone = all(b <= a + 1e-9 for a, b in zip(rmse, rmse[1:]))
    return "bls growth matches refit", err < 1e-5 and monotone, f"rel err {err:.2e}"


def check_gradients(rng):
    net = bls.bls_init(4, 1, 6, 30, 0.8, LAM, rng)
    net.W_out = rng.standard_normal(net.W_out.shape)
    x = rng.standard_normal(4)
    g = bls.input_gradient(net, x)[0]
    h = 1e-5
    fd = np.array([(bls.bls_forward(net, x + e)[0] - bls.bls_forward(net, x - e)[0]) / (2 * h)
                   for e in h * np.eye(4)])
    err_bls = np.max(np.abs(g - fd)) / np.max(np.abs(fd))

    actor = mlp.mlp_init(3, 2, rng, action_bound=[1.0, 2.0], hidden=(6, 5))
    S = rng.standard_normal((4, 3))
    U = rng.standard_normal((4, 2))
    grads = mlp.mlp_backward_chain(actor, S, U)
    W = actor.weights[0]
    fd_w = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        old = W[idx]
        W[idx] = old + h
        up = -np.sum(U * mlp.mlp_forward(actor, S)) / 4
        W[idx] = old - h
        down = -np.sum(U * mlp.mlp_forward(actor, S)) / 4
        W[idx] = old
        fd_w[idx] = (up - down) / (2 * h)
    err_mlp = np.max(np.abs(grads[0] - fd_w)) / np.max(np.abs(fd_w))
    worst = max(err_bls, err_mlp)
    return "gradients vs finite differences", worst < 1e-4, f"max rel err {worst:.2e}"


def check_envs(rng):
    s = np.zeros(4)
    rest = True
    for _ in range(100):
        s, _ = envs.invpen_step(s, [0.0])
        rest &= bool(np.max(np.abs(s)) <= 1e-12)
    env = envs.Reacher(rng)
    env.reset()
    steps, nonpos = 0, True
    while True:
        res = env.step(rng.uniform(-1, 1, 2))
        steps += 1
        nonpos &= res.reward <= 0
        if res.truncated:
            break
    ok = rest and nonpos and steps == 50
    return "environment invariants", ok, f"reacher episode {steps} steps"


CHECKS = (check_pinv_append, check_bls_growth, check_gradients, check_envs)


def run_selftest(seed=0, out=print):
    rng = np.random.default_rng(seed)
    all_ok = True
    for check in CHECKS:
        name, ok, detail = check(rng)
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
