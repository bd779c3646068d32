/* Hot loops for constant step-size SGD.  Every replication is independent
 * scalar code, so results do not depend on batching or thread count. */
#ifndef RRSGD_KERNELS_H
#define RRSGD_KERNELS_H

#include <math.h>
#include <stdint.h>
#include <stdlib.h>
#include <string.h>

#include "_philox.h"

#define RRSGD_ADDITIVE 0
#define RRSGD_REGRESSION 1
#define RRSGD_MAXM 64

typedef struct {
    int kind;
    int d;
    int m;            /* normals per logical draw */
    const double *A;  /* d x d, row major */
    const double *ref;
    double eps;
    const double *shift;
    const double *S;  /* d x d noise / covariate factor */
    double label_sd;
} rrsgd_model;

/* gradient sample: additive  A (th - ref) + eps tanh(th - shift) + S z
 *                  regression a (a^T (th - ref) - label_sd z[d]), a = S z */
static inline void rrsgd_grad(const rrsgd_model *md, const double *th,
                              const double *z, double *out)
{
    const int d = md->d;
    if (md->kind == RRSGD_ADDITIVE) {
        if (d == 1) {
            double acc = md->A[0] * (th[0] - md->ref[0]);
            if (md->eps != 0.0) acc = acc + md->eps * tanh(th[0] - md->shift[0]);
            out[0] = acc + md->S[0] * z[0];
            return;
        }
        for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc = acc + md->A[i * d + j] * (th[j] - md->ref[j]);
            if (md->eps != 0.0) acc = acc + md->eps * tanh(th[i] - md->shift[i]);
            for (int j = 0; j < d; ++j) acc = acc + md->S[i * d + j] * z[j];
            out[i] = acc;
        }
    } else {
        double r = 0.0;
        for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc = acc + md->S[i * d + j] * z[j];
            out[i] = acc;
            r = r + acc * (th[i] - md->ref[i]);
        }
        r = r - md->label_sd * z[d];
        for (int i = 0; i < d; ++i) out[i] = out[i] * r;
    }
}

/* gradient noise at the optimum, grad F(theta*, z) - grad f(theta*):
 * additive S z, regression -label_sd z[d] a (ref is theta* there) */
static inline void rrsgd_noise_at_opt(const rrsgd_model *md, const double *z, double *out)
{
    const int d = md->d;
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc = acc + md->S[i * d + j] * z[j];
        out[i] = md->kind == RRSGD_ADDITIVE ? acc : -md->label_sd * z[d] * acc;
    }
}

/* nc synchronously coupled chains per replication, 2n steps each.
 * Outputs are (R, nc, d) arrays; path is (R, nc, npath, d) or NULL. */
static inline int rrsgd_run_chains(const rrsgd_model *md, const double *theta0,
                                   const double *gammas, int nc, int64_t n,
                                   uint64_t seed, const uint64_t *streams, int64_t R,
                                   uint64_t counter0, int64_t stride, int64_t npath,
                                   double *tail, double *first, double *last,
                                   int64_t *div, double *path, double *wbar)
{
    const int d = md->d;
    double *th = malloc(sizeof(double) * nc * d);
    double *g = malloc(sizeof(double) * d);
    double z[RRSGD_MAXM + 4], w[RRSGD_MAXM];
    rrsgd_stream st;
    if (!th || !g) { free(th); free(g); return -1; }
    for (int64_t r = 0; r < R; ++r) {
        double *tl = tail + r * nc * d;
        double *wb = wbar + r * d;
        rrsgd_stream_init(&st, seed, streams[r]);
        for (int i = 0; i < d; ++i) wb[i] = 0.0;
        int64_t *dv = div + r * nc;
        for (int c = 0; c < nc; ++c) {
            dv[c] = -1;
            for (int i = 0; i < d; ++i) {
                th[c * d + i] = theta0[i];
                tl[c * d + i] = 0.0;
                if (path) path[((r * nc + c) * npath) * d + i] = theta0[i];
            }
        }
        int alive = nc;
        for (int64_t k = 0; k < 2 * n && alive > 0; ++k) {
            rrsgd_stream_draw(&st, counter0 + (uint64_t)k, md->m, z);
            const int64_t kk = k + 1;
            if (kk > n) {
                rrsgd_noise_at_opt(md, z, w);
                for (int i = 0; i < d; ++i) wb[i] = wb[i] + w[i];
            }
            for (int c = 0; c < nc; ++c) {
                if (dv[c] >= 0) continue;
                double *x = th + c * d;
                const double gam = gammas[c];
                int ok = 1;
                rrsgd_grad(md, x, z, g);
                for (int i = 0; i < d; ++i) {
                    x[i] = x[i] - gam * g[i];
                    ok &= isfinite(x[i]) != 0;
                }
                if (!ok) { dv[c] = kk; --alive; continue; }
                if (kk > n)
                    for (int i = 0; i < d; ++i) tl[c * d + i] = tl[c * d + i] + x[i];
                if (kk == n + 1)
                    for (int i = 0; i < d; ++i) first[(r * nc + c) * d + i] = x[i];
                if (kk == 2 * n)
                    for (int i = 0; i < d; ++i) last[(r * nc + c) * d + i] = x[i];
                if (path && kk % stride == 0)
                    for (int i = 0; i < d; ++i)
                        path[((r * nc + c) * npath + kk / stride) * d + i] = x[i];
            }
        }
        for (int c = 0; c < nc; ++c)
            for (int i = 0; i < d; ++i)
                tl[c * d + i] = dv[c] >= 0 ? NAN : tl[c * d + i] / (double)n;
        for (int i = 0; i < d; ++i) wb[i] = alive == nc ? wb[i] / (double)n : NAN;
    }
    free(th);
    free(g);
    return 0;
}

/* One chain; after burn_in steps, accumulates per-batch sums of |u|^p, u and
 * u u^T with u = theta - theta_star.  Returns the diverging step or -1. */
static inline int64_t rrsgd_stationary(const rrsgd_model *md, const double *theta0,
                                       double gamma, int64_t burn_in, int64_t samples,
                                       int nbatches, double p, const double *theta_star,
                                       uint64_t seed, uint64_t stream, uint64_t counter0,
                                       double *mom, double *mean, double *cov)
{
    const int d = md->d;
    double th[RRSGD_MAXM], u[RRSGD_MAXM], g[RRSGD_MAXM], z[RRSGD_MAXM + 4];
    const double half_p = 0.5 * p;
    /* even integer p: |u|^p by repeated multiplication */
    const int ip = (p == floor(p) && fmod(p, 2.0) == 0.0 && p <= 64.0) ? (int)p / 2 : -1;
    rrsgd_stream st;
    rrsgd_stream_init(&st, seed, stream);
    memcpy(th, theta0, sizeof(double) * d);
    int64_t b = 0, bend = samples / nbatches;
    for (int64_t k = 0; k < burn_in + samples; ++k) {
        rrsgd_stream_draw(&st, counter0 + (uint64_t)k, md->m, z);
        rrsgd_grad(md, th, z, g);
        int ok = 1;
        for (int i = 0; i < d; ++i) {
            th[i] = th[i] - gamma * g[i];
            ok &= isfinite(th[i]) != 0;
        }
        if (!ok) return k + 1;
        if (k + 1 <= burn_in) continue;
        const int64_t s = k - burn_in;
        while (s >= bend) { ++b; bend = ((b + 1) * samples) / nbatches; }
        double nrm2 = 0.0;
        for (int i = 0; i < d; ++i) {
            u[i] = th[i] - theta_star[i];
            nrm2 = nrm2 + u[i] * u[i];
            mean[b * d + i] = mean[b * d + i] + u[i];
        }
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                cov[(b * d + i) * d + j] = cov[(b * d + i) * d + j] + u[i] * u[j];
        double v;
        if (ip >= 0) {
            v = 1.0;
            for (int q = 0; q < ip; ++q) v = v * nrm2;
        } else {
            v = pow(nrm2, half_p);
        }
        mom[b] = mom[b] + v;
    }
    return -1;
}

/* Two chains from different starts driven by the same draws.  At each
 * recorded step ks[q] stores |a-b|, |a-theta*|, |b-theta*| in out[r, q]. */
static inline void rrsgd_coupled(const rrsgd_model *md, const double *theta_a,
                                 const double *theta_b, double gamma, const int64_t *ks,
                                 int64_t K, const double *theta_star, uint64_t seed,
                                 const uint64_t *streams, int64_t R, double *out)
{
    const int d = md->d;
    double a[RRSGD_MAXM], b[RRSGD_MAXM], g[RRSGD_MAXM], z[RRSGD_MAXM + 4];
    const int64_t kmax = K ? ks[K - 1] : 0;
    rrsgd_stream st;
    for (int64_t r = 0; r < R; ++r) {
        rrsgd_stream_init(&st, seed, streams[r]);
        memcpy(a, theta_a, sizeof(double) * d);
        memcpy(b, theta_b, sizeof(double) * d);
        int64_t q = 0;
        for (int64_t k = 0; k <= kmax; ++k) {
            if (k > 0) {
                int ok = 1;
                rrsgd_stream_draw(&st, (uint64_t)(k - 1), md->m, z);
                rrsgd_grad(md, a, z, g);
                for (int i = 0; i < d; ++i) a[i] = a[i] - gamma * g[i];
                rrsgd_grad(md, b, z, g);
                for (int i = 0; i < d; ++i) {
                    b[i] = b[i] - gamma * g[i];
                    ok &= (isfinite(a[i]) && isfinite(b[i])) != 0;
                }
                if (!ok) break;
            }
            while (q < K && ks[q] == k) {
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, t;
                for (int i = 0; i < d; ++i) {
                    t = a[i] - b[i]; s0 = s0 + t * t;
                    t = a[i] - theta_star[i]; s1 = s1 + t * t;
                    t = b[i] - theta_star[i]; s2 = s2 + t * t;
                }
                out[(r * K + q) * 3 + 0] = sqrt(s0);
                out[(r * K + q) * 3 + 1] = sqrt(s1);
                out[(r * K + q) * 3 + 2] = sqrt(s2);
                ++q;
            }
        }
    }
}

#endif
