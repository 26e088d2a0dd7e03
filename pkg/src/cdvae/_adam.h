/* Lazy Adam: lanes with an exactly zero gradient keep value and moments.
 * The keep/update choice is a bit select followed by a plain store; a
 * conditional store gets vectorized into masked stores, which are very
 * slow on untouched (copy-on-write zero) pages such as fresh moment buffers. */
#include <math.h>
#include <stddef.h>
#include <stdint.h>
#include <string.h>

static inline double select_bits(uint64_t mask, double a, double b)
{
    uint64_t ua, ub, r;
    memcpy(&ua, &a, 8);
    memcpy(&ub, &b, 8);
    r = (ua & mask) | (ub & ~mask);
    memcpy(&a, &r, 8);
    return a;
}

static inline void cdvae_adam(double *restrict p, const double *restrict g,
                              double *restrict m, double *restrict v, size_t n,
                              double beta1, double beta2, double step,
                              double rbc2, double eps)
{
    const double c1 = 1.0 - beta1, c2 = 1.0 - beta2;
    for (size_t i = 0; i < n; i++) {
        const double gi = g[i];
        const double mi = beta1 * m[i] + c1 * gi;
        const double vi = beta2 * v[i] + c2 * gi * gi;
        const double upd = step * mi / (sqrt(vi) * rbc2 + eps);
        const uint64_t live = -(uint64_t)(gi != 0.0);
        m[i] = select_bits(live, mi, m[i]);
        v[i] = select_bits(live, vi, v[i]);
        p[i] = select_bits(live, p[i] - upd, p[i]);
    }
}
