# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled SGD kernels (thin wrappers over ``_kernels.h``).

Mirrors ``rrsgd._fallback`` function for function.
"""
import numpy as np
from libc.stdint cimport uint64_t, int64_t

cdef extern from "_kernels.h" nogil:
    ctypedef struct rrsgd_model:
        int kind
        int d
        int m
        const double *A
        const double *ref
        double eps
        const double *shift
        const double *S
        double label_sd
    int RRSGD_MAXM
    void rrsgd_normals(uint64_t k0, uint64_t k1, uint64_t counter, int m, double *z)
    int rrsgd_run_chains(const rrsgd_model *md, const double *theta0,
                         const double *gammas, int nc, int64_t n, uint64_t seed,
                         const uint64_t *streams, int64_t R, uint64_t counter0,
                         int64_t stride, int64_t npath, double *tail, double *first,
                         double *last, int64_t *div, double *path, double *wbar)
    int64_t rrsgd_stationary(const rrsgd_model *md, const double *theta0, double gamma,
                             int64_t burn_in, int64_t samples, int nbatches, double p,
                             const double *theta_star, uint64_t seed, uint64_t stream,
                             uint64_t counter0, double *mom, double *mean, double *cov)
    void rrsgd_coupled(const rrsgd_model *md, const double *theta_a,
                       const double *theta_b, double gamma, const int64_t *ks,
                       int64_t K, const double *theta_star, uint64_t seed,
                       const uint64_t *streams, int64_t R, double *out)


cdef class _Model:
    # keeps the arrays referenced by the C struct alive
    cdef rrsgd_model md
    cdef double[:, ::1] A
    cdef double[::1] ref
    cdef double[::1] shift
    cdef double[:, ::1] S

    def __init__(self, model):
        self.A = np.ascontiguousarray(model.A, dtype=np.float64)
        self.ref = np.ascontiguousarray(model.ref, dtype=np.float64)
        self.shift = np.ascontiguousarray(model.shift, dtype=np.float64)
        self.S = np.ascontiguousarray(model.S, dtype=np.float64)
        self.md.kind = model.kind
        self.md.d = self.A.shape[0]
        self.md.m = model.draw_size
        if self.md.m > RRSGD_MAXM:
            raise ValueError(f"dimension too large for compiled kernels (max {RRSGD_MAXM - 1})")
        self.md.A = &self.A[0, 0]
        self.md.ref = &self.ref[0]
        self.md.eps = model.eps
        self.md.shift = &self.shift[0]
        self.md.S = &self.S[0, 0]
        self.md.label_sd = model.label_sd


def run_chains(model, theta0, gammas, Py_ssize_t n, uint64_t seed, streams,
               uint64_t counter0=0, Py_ssize_t record_stride=0):
    """Run ``len(gammas)`` synchronously coupled chains per replication.

    Chain ``c`` of replication ``r`` iterates ``theta <- theta - gammas[c] *
    grad_F(theta, z_k)`` for ``k = 0 .. 2n-1``, ``z_k`` being draw
    ``counter0 + k`` of stream ``(seed, streams[r])``.  ``noise_tail`` is the
    average of the gradient noise at the optimum over the draws feeding the
    tail iterates (``k = n .. 2n-1``).
    """
    cdef _Model m = _Model(model)
    cdef double[::1] th0 = np.ascontiguousarray(theta0, dtype=np.float64)
    cdef double[::1] gam = np.ascontiguousarray(gammas, dtype=np.float64)
    cdef uint64_t[::1] st = np.ascontiguousarray(streams, dtype=np.uint64)
    cdef int d = m.md.d
    cdef int nc = gam.shape[0]
    cdef Py_ssize_t R = st.shape[0]
    cdef Py_ssize_t npath = (2 * n) // record_stride + 1 if record_stride > 0 else 0
    if n < 1 or nc < 1:
        raise ValueError("need n >= 1 and at least one step size")
    if th0.shape[0] != d:
        raise ValueError("theta0 has wrong dimension")
    tail_np = np.empty((R, nc, d))
    first_np = np.full((R, nc, d), np.nan)
    last_np = np.full((R, nc, d), np.nan)
    div_np = np.empty((R, nc), dtype=np.int64)
    wbar_np = np.empty((R, d))
    cdef double[:, ::1] wbar = wbar_np
    path_np = np.full((R, nc, npath, d), np.nan) if npath else np.full((1, 1, 1, 1), np.nan)
    cdef double[:, :, ::1] tail = tail_np
    cdef double[:, :, ::1] first = first_np
    cdef double[:, :, ::1] last = last_np
    cdef int64_t[:, ::1] div = div_np
    cdef double[:, :, :, ::1] path = path_np
    cdef int rc
    if R == 0:
        return {"tail": tail_np, "first": first_np, "last": last_np, "diverged": div_np,
                "noise_tail": wbar_np}
    with nogil:
        rc = rrsgd_run_chains(&m.md, &th0[0], &gam[0], nc, n, seed, &st[0], R, counter0,
                              record_stride, npath, &tail[0, 0, 0], &first[0, 0, 0],
                              &last[0, 0, 0], &div[0, 0],
                              &path[0, 0, 0, 0] if npath else NULL, &wbar[0, 0])
    if rc != 0:
        raise MemoryError()
    out = {"tail": tail_np, "first": first_np, "last": last_np, "diverged": div_np,
           "noise_tail": wbar_np}
    if npath:
        out["path"] = path_np
    return out


def stationary_accumulate(model, theta0, double gamma, Py_ssize_t burn_in,
                          Py_ssize_t samples, int nbatches, double p, theta_star,
                          uint64_t seed, uint64_t stream, uint64_t counter0=0):
    """Batch means of ``|theta - theta*|^p``, ``theta - theta*`` and its outer
    product over the ``samples`` iterates following ``burn_in`` steps."""
    cdef _Model m = _Model(model)
    cdef double[::1] th0 = np.ascontiguousarray(theta0, dtype=np.float64)
    cdef double[::1] ts = np.ascontiguousarray(theta_star, dtype=np.float64)
    cdef int d = m.md.d
    if nbatches < 1 or samples < nbatches:
        raise ValueError("need samples >= nbatches >= 1")
    mom_np = np.zeros(nbatches)
    mean_np = np.zeros((nbatches, d))
    cov_np = np.zeros((nbatches, d, d))
    cdef double[::1] mom = mom_np
    cdef double[:, ::1] mean = mean_np
    cdef double[:, :, ::1] cov = cov_np
    cdef int64_t diverged
    with nogil:
        diverged = rrsgd_stationary(&m.md, &th0[0], gamma, burn_in, samples, nbatches, p,
                                    &ts[0], seed, stream, counter0, &mom[0], &mean[0, 0],
                                    &cov[0, 0, 0])
    sizes = np.diff((np.arange(nbatches + 1) * samples) // nbatches).astype(np.float64)
    return {"moment": mom_np / sizes, "mean": mean_np / sizes[:, None],
            "cov": cov_np / sizes[:, None, None], "sizes": sizes,
            "diverged": int(diverged)}


def coupled_distances(model, theta_a, theta_b, double gamma, ks, theta_star,
                      uint64_t seed, streams):
    """``|a_k - b_k|, |a_k - theta*|, |b_k - theta*|`` at each ``k`` in ``ks``
    (sorted) for synchronously coupled chains started at ``theta_a``, ``theta_b``."""
    cdef _Model m = _Model(model)
    cdef double[::1] ta = np.ascontiguousarray(theta_a, dtype=np.float64)
    cdef double[::1] tb = np.ascontiguousarray(theta_b, dtype=np.float64)
    cdef double[::1] ts = np.ascontiguousarray(theta_star, dtype=np.float64)
    cdef int64_t[::1] kk = np.ascontiguousarray(ks, dtype=np.int64)
    cdef uint64_t[::1] st = np.ascontiguousarray(streams, dtype=np.uint64)
    cdef Py_ssize_t R = st.shape[0], K = kk.shape[0]
    out_np = np.full((R, K, 3), np.nan)
    cdef double[:, :, ::1] out = out_np
    if R == 0 or K == 0:
        return out_np
    with nogil:
        rrsgd_coupled(&m.md, &ta[0], &tb[0], gamma, &kk[0], K, &ts[0], seed, &st[0], R,
                      &out[0, 0, 0])
    return out_np


def normals(uint64_t seed, uint64_t stream, uint64_t counter, int m):
    """One logical draw, for cross-checking against ``rrsgd.rng.normals``."""
    if m > RRSGD_MAXM:
        raise ValueError("too many normals per draw")
    out_np = np.empty(m)
    cdef double[::1] out = out_np
    rrsgd_normals(seed, stream, counter, m, &out[0])
    return out_np
