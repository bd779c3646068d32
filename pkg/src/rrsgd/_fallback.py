"""Pure-numpy versions of the compiled kernels in ``_core.pyx``.

Replications are vectorised; iterations stay a Python loop.  The
arithmetic follows the compiled code operation for operation, so the two
backends agree up to last-ulp differences in libm.
"""
import numpy as np

from .rng import normals as _normals

KIND_ADDITIVE = 0
KIND_REGRESSION = 1


def _grad_sample(model, th, z):
    # th: (..., d), z: (R, m) broadcast over the chain axis
    d = th.shape[-1]
    if model.kind == KIND_ADDITIVE:
        out = np.zeros_like(th)
        for j in range(d):
            out = out + model.A[:, j] * (th[..., j:j + 1] - model.ref[j])
        if model.eps != 0.0:
            out = out + model.eps * np.tanh(th - model.shift)
        zz = z[..., :d]
        if th.ndim == 3:
            zz = zz[:, None, :]
        for j in range(d):
            out = out + model.S[:, j] * zz[..., j:j + 1]
        return out
    a = np.zeros(z.shape[:-1] + (d,))
    for j in range(d):
        a = a + model.S[:, j] * z[..., j:j + 1]
    if th.ndim == 3:
        a = a[:, None, :]
        e = z[:, None, d]
    else:
        e = z[..., d]
    r = np.zeros(th.shape[:-1])
    for i in range(d):
        r = r + a[..., i] * (th[..., i] - model.ref[i])
    r = r - model.label_sd * e
    return a * r[..., None]


def _noise_at_opt(model, z):
    d = model.S.shape[0]
    a = z[..., :d] @ model.S.T
    if model.kind == KIND_ADDITIVE:
        return a
    return -model.label_sd * z[..., d:d + 1] * a


def run_chains(model, theta0, gammas, n, seed, streams, counter0=0, record_stride=0):
    theta0 = np.asarray(theta0, dtype=np.float64)
    gammas = np.asarray(gammas, dtype=np.float64)
    streams = np.asarray(streams, dtype=np.uint64)
    R, nc, d = len(streams), len(gammas), len(theta0)
    npath = (2 * n) // record_stride + 1 if record_stride > 0 else 0
    th = np.broadcast_to(theta0, (R, nc, d)).copy()
    tail = np.zeros((R, nc, d))
    first = np.full((R, nc, d), np.nan)
    last = np.full((R, nc, d), np.nan)
    div = np.full((R, nc), -1, dtype=np.int64)
    path = np.full((R, nc, npath, d), np.nan) if npath else None
    if npath:
        path[:, :, 0, :] = theta0
    gam = gammas[None, :, None]
    wbar = np.zeros((R, d))
    for k in range(2 * n):
        z = _normals(seed, streams, np.uint64(counter0 + k), model.draw_size)
        alive = div < 0
        if not alive.any():
            break
        if k + 1 > n:
            wbar = wbar + _noise_at_opt(model, z)
        with np.errstate(over="ignore", invalid="ignore"):
            new = th - gam * _grad_sample(model, th, z)
        bad = alive & ~np.isfinite(new).all(axis=-1)
        div[bad] = k + 1
        alive = div < 0
        th = np.where(alive[..., None], new, th)
        if k + 1 > n:
            tail = np.where(alive[..., None], tail + th, tail)
        if k + 1 == n + 1:
            first = np.where(alive[..., None], th, first)
        if k + 1 == 2 * n:
            last = np.where(alive[..., None], th, last)
        if npath and (k + 1) % record_stride == 0:
            path[:, :, (k + 1) // record_stride, :] = np.where(alive[..., None], th, np.nan)
    tail = tail / n
    tail[div >= 0] = np.nan
    wbar = wbar / n
    wbar[(div >= 0).any(axis=1)] = np.nan
    out = {"tail": tail, "first": first, "last": last, "diverged": div, "noise_tail": wbar}
    if npath:
        out["path"] = path
    return out


def stationary_accumulate(model, theta0, gamma, burn_in, samples, nbatches, p,
                          theta_star, seed, stream, counter0=0, chunk=4096):
    th = np.asarray(theta0, dtype=np.float64)[None, :].copy()
    theta_star = np.asarray(theta_star, dtype=np.float64)
    d = th.shape[1]
    streams = np.array([stream], dtype=np.uint64)
    total = burn_in + samples
    bounds = (np.arange(nbatches + 1) * samples) // nbatches
    mom = np.zeros(nbatches)
    mean = np.zeros((nbatches, d))
    cov = np.zeros((nbatches, d, d))
    diverged = -1
    # draws are generated in chunks to amortise the vectorised cipher
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        zs = _normals(seed, stream, np.arange(counter0 + start, counter0 + stop,
                                                dtype=np.uint64), model.draw_size)
        for j, k in enumerate(range(start, stop)):
            th = th - gamma * _grad_sample(model, th, zs[j:j + 1])
            if not np.isfinite(th).all():
                diverged = k + 1
                break
            if k + 1 <= burn_in:
                continue
            s = k - burn_in
            b = np.searchsorted(bounds, s, side="right") - 1
            u = th[0] - theta_star
            mean[b] += u
            cov[b] += u[:, None] * u[None, :]
            mom[b] += np.power(np.dot(u, u), 0.5 * p)
        if diverged >= 0:
            break
    sizes = np.diff(bounds).astype(np.float64)
    return {"moment": mom / sizes, "mean": mean / sizes[:, None],
            "cov": cov / sizes[:, None, None], "sizes": sizes, "diverged": diverged}


def coupled_distances(model, theta_a, theta_b, gamma, ks, theta_star, seed, streams):
    streams = np.asarray(streams, dtype=np.uint64)
    ks = np.asarray(ks, dtype=np.intp)
    theta_star = np.asarray(theta_star, dtype=np.float64)
    R, K = len(streams), len(ks)
    d = len(theta_star)
    pair = np.empty((R, 2, d))
    pair[:, 0] = theta_a
    pair[:, 1] = theta_b
    out = np.full((R, K, 3), np.nan)
    ok = np.ones(R, dtype=bool)
    kmax = int(ks[-1]) if K else 0
    q = 0
    for k in range(kmax + 1):
        if k > 0:
            z = _normals(seed, streams, np.uint64(k - 1), model.draw_size)
            new = pair - gamma * _grad_sample(model, pair, z)
            ok &= np.isfinite(new).all(axis=(1, 2))
            pair = np.where(ok[:, None, None], new, np.nan)
        while q < K and ks[q] == k:
            a, b = pair[:, 0], pair[:, 1]
            out[:, q, 0] = np.sqrt(((a - b) ** 2).sum(-1))
            out[:, q, 1] = np.sqrt(((a - theta_star) ** 2).sum(-1))
            out[:, q, 2] = np.sqrt(((b - theta_star) ** 2).sum(-1))
            q += 1
    return out


def normals(seed, stream, counter, m):
    return _normals(seed, stream, counter, m)
