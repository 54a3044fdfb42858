"""Independent reference computations used by the tests."""

import numpy as np


def jacobi_eigvals(S, tol=1e-14, max_sweeps=100):
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations."""
    S = np.array(S, dtype=np.float64)
    n = S.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(S, 1) ** 2))
        if off < tol * max(1.0, np.abs(S).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(S[p, q]) < 1e-300:
                    continue
                tau = (S[q, q] - S[p, p]) / (2 * S[p, q])
                if tau == 0:
                    t = 1.0
                elif abs(tau) > 1e150:
                    t = 1 / (2 * tau)
                else:
                    t = np.sign(tau) / (abs(tau) + np.sqrt(1 + tau * tau))
                c = 1 / np.sqrt(1 + t * t)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                S = J.T @ S @ J
    return np.sort(np.diag(S))


def prox_grid(theta, t, lam0, lo=-5.0, hi=5.0, step=1e-5):
    """Brute-force argmin of 0.5 (z - theta)^2 + t min(|z - lam0|, |z + lam0|)."""
    z = np.arange(lo, hi + step / 2, step)
    obj = 0.5 * (z - theta) ** 2 + t * np.minimum(np.abs(z - lam0), np.abs(z + lam0))
    return z[np.argmin(obj)]


def lista_reference(Ws, thetas, A, y, delta=1.0, act="soft", scale=1.0):
    """Straight-line loop over layers, one sample, no vectorization."""
    x = np.zeros(A.shape[1])
    states = [x.copy()]
    for W, th in zip(Ws, thetas):
        r = A @ x - y
        z = delta * x - (scale * W).T @ r
        out = np.zeros_like(z)
        for i, zi in enumerate(z):
            if act == "soft":
                out[i] = np.sign(zi) * max(abs(zi) - th, 0.0)
            elif act == "hard":
                out[i] = zi if abs(zi) > th else 0.0
            else:
                out[i] = zi if zi >= 0 else 0.0
        x = out
        states.append(x.copy())
    return states


def block_diag_dense(blocks):
    blocks = [np.asarray(b) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def _pattern(net, A, Y):
    from pibinn.unroll import forward_batch

    tr = forward_batch(net, A, Y)
    return [np.abs(z) > th for z, th in zip(tr.pre_activations, net.thetas)] + \
        [z > 0 for z in tr.pre_activations]


def fd_gradient_errors(net, A, Y, X, kind="squared", h=1e-5, floor=1e-6):
    """Relative errors of analytic gradients against central differences.

    A coordinate is skipped when the +h and -h perturbations see different
    activation patterns (the difference quotient straddles a kink). Returns
    ``(errors, n_checked, n_skipped)``.
    """
    from pibinn.unroll import batch_loss, loss_and_grad

    _, g = loss_and_grad(net, A, Y, X, kind)
    errs, skipped = [], 0

    def check(get, put, analytic):
        nonlocal skipped
        base = get()
        put(base + h)
        lp, pp = batch_loss(net, A, Y, X, kind), _pattern(net, A, Y)
        put(base - h)
        lm, pm = batch_loss(net, A, Y, X, kind), _pattern(net, A, Y)
        put(base)
        if any(not np.array_equal(a, b) for a, b in zip(pp, pm)):
            skipped += 1
            return
        fd = (lp - lm) / (2 * h)
        errs.append(abs(fd - analytic) / max(abs(fd), abs(analytic), floor))

    for k, W in enumerate(net.weights):
        for idx in np.ndindex(W.shape):
            def get(W=W, idx=idx):
                return W[idx]

            def put(val, W=W, idx=idx):
                W[idx] = val
            check(get, put, g.dW[k][idx])
    for k in range(net.K):
        if net.thetas[k] <= h:
            skipped += 1
            continue

        def get(k=k):
            return net.thetas[k]

        def put(val, k=k):
            net.thetas[k] = val
        check(get, put, g.dtheta[k])

    def get_s():
        return net.scale

    def put_s(val):
        net.scale = val
    if net.weight_multiplier != 1.0 or str(net.quant_mode.value) == "one_bit":
        check(get_s, put_s, g.dscale)
    return np.array(errs), len(errs), skipped
