/* Direct 2-D convolution micro-kernels for one sample in (c, h, w) layout.
 *
 * Every output element is bias + taps summed in (ci, ky, kx) order, whichever
 * path computes it, so results do not depend on tiling or image width.
 */
#ifndef EDN_CONV_KERNELS_H
#define EDN_CONV_KERNELS_H

#include <stdlib.h>
#include <string.h>

typedef float v8f __attribute__((vector_size(32)));

static inline v8f v8_load(const float *p) { v8f v; memcpy(&v, p, sizeof v); return v; }
static inline void v8_store(float *p, v8f v) { memcpy(p, &v, sizeof v); }
static inline v8f v8_splat(float a) { v8f v = {a, a, a, a, a, a, a, a}; return v; }

/* pixels per packed 1x1 tile: about PW_BUDGET floats of packed input, kept
 * within [PW_TILE_MIN, PW_TILE_MAX] */
#ifndef PW_BUDGET
#define PW_BUDGET 32768
#endif
#define PW_TILE_MIN 256
#define PW_TILE_MAX 4096

#define EDN_INLINE static inline __attribute__((always_inline))

/* nb output channels x 16 pixels; called with literal nb so the
 * accumulators are unrolled into registers */
EDN_INLINE void edn_pw_block(const float *restrict xg, const float *restrict w, const float *restrict bias,
                             float *restrict out, int o, const int nb, int cig, long in_stride, long plane, long p)
{
    v8f lo[8], hi[8];
    for (int j = 0; j < nb; j++) { lo[j] = v8_splat(bias[o + j]); hi[j] = lo[j]; }
    for (int ci = 0; ci < cig; ci++) {
        const float *s = xg + (long)ci * in_stride + p;
        v8f a = v8_load(s), b = v8_load(s + 8);
        for (int j = 0; j < nb; j++) {
            v8f wv = v8_splat(w[(long)(o + j) * cig + ci]);
            lo[j] += wv * a;
            hi[j] += wv * b;
        }
    }
    for (int j = 0; j < nb; j++) {
        v8_store(out + (long)(o + j) * plane + p, lo[j]);
        v8_store(out + (long)(o + j) * plane + p + 8, hi[j]);
    }
}

/* 1x1, stride 1, no padding: out[o, p] = bias[o] + sum_ci w[o, ci] * x[g*cig + ci, p].
 * Each pixel tile of the group's input is first packed into a contiguous
 * buffer so the inner loops read from cache instead of cig strided streams. */
static int edn_pointwise(const float *restrict x, const float *restrict w, const float *restrict bias,
                         float *restrict out, int O, int cig, int cog, long plane)
{
    long body = plane - plane % 16;
    long tile = PW_BUDGET / cig;
    tile -= tile % 16;
    tile = tile < PW_TILE_MIN ? PW_TILE_MIN : tile > PW_TILE_MAX ? PW_TILE_MAX : tile;
    float *pack = NULL;
    if (body > 0) {
        pack = malloc((size_t)cig * tile * sizeof(float));
        if (!pack) return -1;
    }
    for (long t0 = 0; t0 < body; t0 += tile) {
        long t1 = t0 + tile < body ? t0 + tile : body;
        long len = t1 - t0;
        int packed_group = -1;
        for (int o = 0; o < O;) {
            int g = o / cog;
            int nb = cog - (o - g * cog);
            if (g != packed_group) {
                const float *xg = x + (long)g * cig * plane + t0;
                for (int ci = 0; ci < cig; ci++) memcpy(pack + (long)ci * len, xg + (long)ci * plane, len * sizeof(float));
                packed_group = g;
            }
            float *ot = out + t0;
            if (nb >= 8) {
                nb = 8;
                for (long p = 0; p < len; p += 16) edn_pw_block(pack, w, bias, ot, o, 8, cig, len, plane, p);
            } else if (nb >= 4) {
                nb = 4;
                for (long p = 0; p < len; p += 16) edn_pw_block(pack, w, bias, ot, o, 4, cig, len, plane, p);
            } else {
                nb = 1;
                for (long p = 0; p < len; p += 16) edn_pw_block(pack, w, bias, ot, o, 1, cig, len, plane, p);
            }
            o += nb;
        }
    }
    free(pack);
    for (long p = body; p < plane; p++) {
        for (int o = 0; o < O; o++) {
            const float *xg = x + (long)(o / cog) * cig * plane;
            float s = bias[o];
            for (int ci = 0; ci < cig; ci++) s += w[(long)o * cig + ci] * xg[(long)ci * plane + p];
            out[(long)o * plane + p] = s;
        }
    }
    return 0;
}

typedef struct {
    int H, W, OH, OW, K, stride, pad, dil, cig;
} edn_geom;

/* one output element with bounds checks on every tap */
static inline float edn_conv_point(const float *restrict xg, const float *restrict wo, float b,
                                   const edn_geom *g, int oy, int ox)
{
    float s = b;
    for (int ci = 0; ci < g->cig; ci++) {
        const float *xc = xg + (long)ci * g->H * g->W;
        const float *wc = wo + (long)ci * g->K * g->K;
        for (int ky = 0; ky < g->K; ky++) {
            int iy = oy * g->stride - g->pad + ky * g->dil;
            if (iy < 0 || iy >= g->H) continue;
            for (int kx = 0; kx < g->K; kx++) {
                int ix = ox * g->stride - g->pad + kx * g->dil;
                if (ix < 0 || ix >= g->W) continue;
                s += wc[ky * g->K + kx] * xc[(long)iy * g->W + ix];
            }
        }
    }
    return s;
}

/* Stride-1 convolution of nb (1..4) consecutive output channels over a
 * zero-padded copy xp of the group's input: rows H + 2*pad, row stride WP,
 * with at least 16 extra zero columns on the right so every 16-wide load is
 * in bounds. Zero taps add +0 and leave the tap order unchanged. */
EDN_INLINE void edn_conv_block_padded(const float *restrict xp, long WP, long HP, const float *restrict w,
                                  const float *restrict bias, float *restrict out, int o, const int nb,
                                  const edn_geom *g)
{
    const int K = g->K, KK = g->K * g->K;
    const long plane_in = HP * WP, plane_out = (long)g->OH * g->OW;
    float tail[4][16];
    for (int oy = 0; oy < g->OH; oy++) {
        for (int ox = 0; ox < g->OW; ox += 16) {
            v8f lo[4], hi[4];
            for (int j = 0; j < nb; j++) { lo[j] = v8_splat(bias[o + j]); hi[j] = lo[j]; }
            for (int ci = 0; ci < g->cig; ci++) {
                const float *xc = xp + (long)ci * plane_in;
                const float *wc = w + ((long)o * g->cig + ci) * KK;
                for (int ky = 0; ky < K; ky++) {
                    const float *src = xc + (long)(oy + ky * g->dil) * WP + ox;
                    for (int kx = 0; kx < K; kx++) {
                        v8f a = v8_load(src + kx * g->dil), b = v8_load(src + kx * g->dil + 8);
                        for (int j = 0; j < nb; j++) {
                            v8f wv = v8_splat(wc[(long)j * g->cig * KK + ky * K + kx]);
                            lo[j] += wv * a;
                            hi[j] += wv * b;
                        }
                    }
                }
            }
            int cnt = g->OW - ox < 16 ? g->OW - ox : 16;
            for (int j = 0; j < nb; j++) {
                float *row = out + (long)(o + j) * plane_out + (long)oy * g->OW + ox;
                if (cnt == 16) {
                    v8_store(row, lo[j]);
                    v8_store(row + 8, hi[j]);
                } else {
                    v8_store(tail[j], lo[j]);
                    v8_store(tail[j] + 8, hi[j]);
                    memcpy(row, tail[j], cnt * sizeof(float));
                }
            }
        }
    }
}

/* any stride: per-element path with bounds checks */
static void edn_conv_block_generic(const float *restrict xg, const float *restrict w,
                                   const float *restrict bias, float *restrict out, int o, int nb,
                                   const edn_geom *g)
{
    const int KK = g->K * g->K;
    const long plane_out = (long)g->OH * g->OW;
    for (int j = 0; j < nb; j++) {
        const float *wo = w + (long)(o + j) * g->cig * KK;
        for (int oy = 0; oy < g->OH; oy++) {
            float *row = out + (long)(o + j) * plane_out + (long)oy * g->OW;
            for (int ox = 0; ox < g->OW; ox++) row[ox] = edn_conv_point(xg, wo, bias[o + j], g, oy, ox);
        }
    }
}

/* returns 0 on success, -1 if the scratch buffer could not be allocated */
static int edn_conv2d_sample(const float *restrict x, const float *restrict w, const float *restrict bias,
                             float *restrict out, int C, int H, int W, int O, int cig, int K,
                             int OH, int OW, int stride, int pad, int dil, int groups)
{
    int cog = O / groups;
    if (K == 1 && stride == 1 && pad == 0) {
        return edn_pointwise(x, w, bias, out, O, cig, cog, (long)H * W);
    }
    edn_geom g = {H, W, OH, OW, K, stride, pad, dil, cig};
    if (stride != 1) {
        for (int o = 0; o < O;) {
            int gi = o / cog;
            int nb = cog - (o - gi * cog);
            if (nb > 4) nb = 4;
            edn_conv_block_generic(x + (long)gi * cig * H * W, w, bias, out, o, nb, &g);
            o += nb;
        }
        return 0;
    }
    long HP = H + 2L * pad;
    /* the widest load starts at column OW-1 + (K-1)*dil and spans 16 floats */
    long WP = (long)OW + (long)(K - 1) * dil + 16;
    if (WP < W + 2L * pad) WP = W + 2L * pad;
    float *xp = calloc((size_t)C * HP * WP, sizeof(float));
    if (!xp) return -1;
    for (int c = 0; c < C; c++)
        for (int y = 0; y < H; y++)
            memcpy(xp + ((long)c * HP + y + pad) * WP + pad, x + ((long)c * H + y) * W, W * sizeof(float));
    for (int o = 0; o < O;) {
        int gi = o / cog;
        const float *xg = xp + (long)gi * cig * HP * WP;
        if (cog - (o - gi * cog) >= 4) {
            edn_conv_block_padded(xg, WP, HP, w, bias, out, o, 4, &g);
            o += 4;
        } else {
            edn_conv_block_padded(xg, WP, HP, w, bias, out, o, 1, &g);
            o += 1;
        }
    }
    free(xp);
    return 0;
}

#endif
