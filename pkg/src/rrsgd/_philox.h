/* Philox4x64-10 and Box-Muller normals, matching rrsgd/rng.py bit for bit
 * on the integer side. */
#ifndef RRSGD_PHILOX_H
#define RRSGD_PHILOX_H

#include <math.h>
#include <stdint.h>

#define RRSGD_M0 0xD2E7470EE14C6C93ULL
#define RRSGD_M1 0xCA5A826395121157ULL
#define RRSGD_W0 0x9E3779B97F4A7C15ULL
#define RRSGD_W1 0xBB67AE8584CAA73BULL

static inline void rrsgd_philox(uint64_t c0, uint64_t c1, uint64_t k0, uint64_t k1,
                                uint64_t out[4])
{
    uint64_t x0 = c0, x1 = c1, x2 = 0, x3 = 0;
    for (int r = 0; r < 10; ++r) {
        if (r) { k0 += RRSGD_W0; k1 += RRSGD_W1; }
        __uint128_t p0 = (__uint128_t)RRSGD_M0 * x0;
        __uint128_t p1 = (__uint128_t)RRSGD_M1 * x2;
        uint64_t hi0 = (uint64_t)(p0 >> 64), lo0 = (uint64_t)p0;
        uint64_t hi1 = (uint64_t)(p1 >> 64), lo1 = (uint64_t)p1;
        x0 = hi1 ^ x1 ^ k0;
        x1 = lo1;
        x2 = hi0 ^ x3 ^ k1;
        x3 = lo0;
    }
    out[0] = x0; out[1] = x1; out[2] = x2; out[3] = x3;
}

/* The stream is a flat sequence of normals: normal j is lane j % 4 of the
 * block with counter (j / 4, 0).  A cursor caches the current block so that
 * small draws cost a fraction of a Philox call. */
typedef struct {
    uint64_t k0, k1;
    uint64_t block;
    int valid;
    double v[4];
} rrsgd_stream;

static inline void rrsgd_stream_init(rrsgd_stream *st, uint64_t k0, uint64_t k1)
{
    st->k0 = k0; st->k1 = k1; st->block = 0; st->valid = 0;
}

static inline void rrsgd_box_muller(uint64_t a, uint64_t b, double *z)
{
    const double two_m53 = 1.1102230246251565e-16;
    const double two_pi = 6.283185307179586;
    double u1 = ((double)(a >> 11) + 1.0) * two_m53;
    double u2 = (double)(b >> 11) * two_m53;
    double r = sqrt(-2.0 * log(u1));
    double t = two_pi * u2;
    z[0] = r * cos(t);
    z[1] = r * sin(t);
}

static inline void rrsgd_stream_fill(rrsgd_stream *st, uint64_t block)
{
    uint64_t w[4];
    rrsgd_philox(block, 0, st->k0, st->k1, w);
    rrsgd_box_muller(w[0], w[1], st->v);
    rrsgd_box_muller(w[2], w[3], st->v + 2);
    st->block = block;
    st->valid = 1;
}

/* m normals of logical draw `counter`. */
static inline void rrsgd_stream_draw(rrsgd_stream *st, uint64_t counter, int m, double *z)
{
    uint64_t j = counter * (uint64_t)m;
    for (int i = 0; i < m; ++i, ++j) {
        uint64_t b = j >> 2;
        if (!st->valid || b != st->block) rrsgd_stream_fill(st, b);
        z[i] = st->v[j & 3];
    }
}

static inline void rrsgd_normals(uint64_t k0, uint64_t k1, uint64_t counter,
                                 int m, double *z)
{
    rrsgd_stream st;
    rrsgd_stream_init(&st, k0, k1);
    rrsgd_stream_draw(&st, counter, m, z);
}

#endif
