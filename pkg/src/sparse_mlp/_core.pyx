# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel set.

Mirrors sparse_mlp.backend.pure loop-for-loop; both backends must produce
bitwise-identical results (same accumulation order, same libm, and the build
disables FP contraction).  Any change here must be made in pure.py too.
"""

from libc.math cimport cos, erf, exp, isfinite, log, pow, sin, sqrt
from libc.stdlib cimport free, malloc

cdef double _TWO_PI = 6.283185307179586
cdef double _INV_SQRT2 = 0.7071067811865476
cdef double _INV_SQRT_2PI = 0.3989422804014327
cdef double _U53 = 1.0 / 9007199254740992.0


# --- matmul family ---------------------------------------------------------

def mm_nn(Py_ssize_t m, Py_ssize_t k, Py_ssize_t n,
          const double[::1] a, const double[::1] b, double[::1] out, bint acc):
    cdef Py_ssize_t i, j, t
    cdef double s
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i * k + t] * b[t * n + j]
            if acc:
                out[i * n + j] += s
            else:
                out[i * n + j] = s


def mm_nt(Py_ssize_t m, Py_ssize_t k, Py_ssize_t n,
          const double[::1] a, const double[::1] b, double[::1] out, bint acc):
    cdef Py_ssize_t i, j, t
    cdef double s
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i * k + t] * b[j * k + t]
            if acc:
                out[i * n + j] += s
            else:
                out[i * n + j] = s


def mm_tn(Py_ssize_t m, Py_ssize_t k, Py_ssize_t n,
          const double[::1] a, const double[::1] b, double[::1] out, bint acc):
    cdef Py_ssize_t i, j, t
    cdef double s
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[t * m + i] * b[t * n + j]
            if acc:
                out[i * n + j] += s
            else:
                out[i * n + j] = s


# --- data movement ---------------------------------------------------------

def transpose_batch(Py_ssize_t nb, Py_ssize_t r, Py_ssize_t c,
                    const double[::1] x, double[::1] out, bint acc):
    cdef Py_ssize_t b, i, j, base
    for b in range(nb):
        base = b * r * c
        for i in range(r):
            for j in range(c):
                if acc:
                    out[base + j * r + i] += x[base + i * c + j]
                else:
                    out[base + j * r + i] = x[base + i * c + j]


def gather_rows(Py_ssize_t ni, Py_ssize_t n,
                const double[::1] x, const long long[::1] idx, double[::1] out):
    cdef Py_ssize_t i, j, src, dst
    for i in range(ni):
        src = idx[i] * n
        dst = i * n
        for j in range(n):
            out[dst + j] = x[src + j]


def scatter_add_rows(Py_ssize_t ni, Py_ssize_t n,
                     const double[::1] src, const long long[::1] idx, double[::1] out):
    cdef Py_ssize_t i, j, dst, s
    for i in range(ni):
        dst = idx[i] * n
        s = i * n
        for j in range(n):
            out[dst + j] += src[s + j]


def take_pairs(Py_ssize_t np_, Py_ssize_t ncol, const double[::1] x,
               const long long[::1] ridx, const long long[::1] cidx, double[::1] out):
    cdef Py_ssize_t i
    for i in range(np_):
        out[i] = x[ridx[i] * ncol + cidx[i]]


def scatter_add_pairs(Py_ssize_t np_, Py_ssize_t ncol, const double[::1] src,
                      const long long[::1] ridx, const long long[::1] cidx, double[::1] out):
    cdef Py_ssize_t i
    for i in range(np_):
        out[ridx[i] * ncol + cidx[i]] += src[i]


def extract_patches(Py_ssize_t bsz, Py_ssize_t h, Py_ssize_t w, Py_ssize_t ch,
                    Py_ssize_t p, const double[::1] img, double[::1] out):
    cdef Py_ssize_t sh = h // p
    cdef Py_ssize_t sw = w // p
    cdef Py_ssize_t cols = p * p * ch
    cdef Py_ssize_t b, ph, pw, r, c, k, row, src, dst
    for b in range(bsz):
        for ph in range(sh):
            for pw in range(sw):
                row = (b * sh * sw + ph * sw + pw) * cols
                for r in range(p):
                    for c in range(p):
                        src = ((b * h + ph * p + r) * w + pw * p + c) * ch
                        dst = row + (r * p + c) * ch
                        for k in range(ch):
                            out[dst + k] = img[src + k]


# --- elementwise -----------------------------------------------------------

def ew_add(Py_ssize_t n, const double[::1] a, const double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(Py_ssize_t n, const double[::1] a, const double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(Py_ssize_t n, const double[::1] a, const double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_div(Py_ssize_t n, const double[::1] a, const double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] / b[i]


def axpy(Py_ssize_t n, double alpha, const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] += alpha * x[i]


def scale(Py_ssize_t n, double alpha, const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = alpha * x[i]


def sadd(Py_ssize_t n, const double[::1] x, double s, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = x[i] + s


def fill(Py_ssize_t n, double v, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = v


# --- row/column reductions -------------------------------------------------

def col_sum(Py_ssize_t rows, Py_ssize_t n, const double[::1] x, double[::1] out, bint acc):
    cdef Py_ssize_t r, j
    cdef double s
    for j in range(n):
        s = 0.0
        for r in range(rows):
            s += x[r * n + j]
        if acc:
            out[j] += s
        else:
            out[j] = s


def total_sum(Py_ssize_t n, const double[::1] x):
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += x[i]
    return s


def row_dot(Py_ssize_t rows, Py_ssize_t n, const double[::1] a, const double[::1] b,
            double[::1] out, bint acc):
    cdef Py_ssize_t r, j, base
    cdef double s
    for r in range(rows):
        s = 0.0
        base = r * n
        for j in range(n):
            s += a[base + j] * b[base + j]
        if acc:
            out[r] += s
        else:
            out[r] = s


def scale_rows(Py_ssize_t rows, Py_ssize_t n, const double[::1] x, const double[::1] s,
               double[::1] out, bint acc):
    cdef Py_ssize_t r, j, base
    cdef double v
    for r in range(rows):
        v = s[r]
        base = r * n
        for j in range(n):
            if acc:
                out[base + j] += x[base + j] * v
            else:
                out[base + j] = x[base + j] * v


def broadcast_rows(Py_ssize_t rows, Py_ssize_t n, const double[::1] v,
                   double[::1] out, bint acc):
    cdef Py_ssize_t r, j, base
    for r in range(rows):
        base = r * n
        for j in range(n):
            if acc:
                out[base + j] += v[j]
            else:
                out[base + j] = v[j]


def add_bias(Py_ssize_t rows, Py_ssize_t n, const double[::1] x, const double[::1] b,
             double[::1] out):
    cdef Py_ssize_t r, j, base
    for r in range(rows):
        base = r * n
        for j in range(n):
            out[base + j] = x[base + j] + b[j]


def pool_mean(Py_ssize_t b, Py_ssize_t s, Py_ssize_t c, const double[::1] x, double[::1] out):
    cdef Py_ssize_t bi, si, ci
    cdef double acc
    for bi in range(b):
        for ci in range(c):
            acc = 0.0
            for si in range(s):
                acc += x[(bi * s + si) * c + ci]
            out[bi * c + ci] = acc / s


def pool_mean_bwd(Py_ssize_t b, Py_ssize_t s, Py_ssize_t c, const double[::1] dy,
                  double[::1] dx):
    cdef Py_ssize_t bi, si, ci
    cdef double g
    for bi in range(b):
        for ci in range(c):
            g = dy[bi * c + ci] / s
            for si in range(s):
                dx[(bi * s + si) * c + ci] += g


# --- nonlinearities --------------------------------------------------------

def gelu_fwd(Py_ssize_t n, const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        out[i] = v * (0.5 * (1.0 + erf(v * _INV_SQRT2)))


def gelu_bwd(Py_ssize_t n, const double[::1] x, const double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i
    cdef double v, phi, cdf
    for i in range(n):
        v = x[i]
        phi = _INV_SQRT_2PI * exp(-0.5 * v * v)
        cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
        dx[i] += (cdf + v * phi) * dy[i]


def normcdf_fwd(Py_ssize_t n, const double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = 0.5 * (1.0 + erf(x[i] * _INV_SQRT2))


def normcdf_bwd(Py_ssize_t n, const double[::1] x, const double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i
    for i in range(n):
        dx[i] += _INV_SQRT_2PI * exp(-0.5 * x[i] * x[i]) * dy[i]


def softmax_rows(Py_ssize_t rows, Py_ssize_t n, const double[::1] x, double[::1] out):
    cdef Py_ssize_t r, j, base
    cdef double m, s, e
    for r in range(rows):
        base = r * n
        m = x[base]
        for j in range(1, n):
            if x[base + j] > m:
                m = x[base + j]
        s = 0.0
        for j in range(n):
            e = exp(x[base + j] - m)
            out[base + j] = e
            s += e
        for j in range(n):
            out[base + j] /= s


def softmax_rows_bwd(Py_ssize_t rows, Py_ssize_t n, const double[::1] y,
                     const double[::1] dy, double[::1] dx):
    cdef Py_ssize_t r, j, base
    cdef double dot
    for r in range(rows):
        base = r * n
        dot = 0.0
        for j in range(n):
            dot += dy[base + j] * y[base + j]
        for j in range(n):
            dx[base + j] += y[base + j] * (dy[base + j] - dot)


def logsumexp_rows(Py_ssize_t rows, Py_ssize_t n, const double[::1] x, double[::1] out):
    cdef Py_ssize_t r, j, base
    cdef double m, s
    for r in range(rows):
        base = r * n
        m = x[base]
        for j in range(1, n):
            if x[base + j] > m:
                m = x[base + j]
        s = 0.0
        for j in range(n):
            s += exp(x[base + j] - m)
        out[r] = m + log(s)


def logsumexp_rows_bwd(Py_ssize_t rows, Py_ssize_t n, const double[::1] x,
                       const double[::1] lse, const double[::1] dy, double[::1] dx):
    cdef Py_ssize_t r, j, base
    cdef double g, l
    for r in range(rows):
        base = r * n
        g = dy[r]
        l = lse[r]
        for j in range(n):
            dx[base + j] += exp(x[base + j] - l) * g


def layernorm_fwd(Py_ssize_t rows, Py_ssize_t c, const double[::1] x,
                  const double[::1] gamma, const double[::1] beta, double eps,
                  double[::1] out, double[::1] mean, double[::1] rstd):
    cdef Py_ssize_t r, j, base
    cdef double mu, var, d, rs
    for r in range(rows):
        base = r * c
        mu = 0.0
        for j in range(c):
            mu += x[base + j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[base + j] - mu
            var += d * d
        var /= c
        rs = 1.0 / sqrt(var + eps)
        mean[r] = mu
        rstd[r] = rs
        for j in range(c):
            out[base + j] = (x[base + j] - mu) * rs * gamma[j] + beta[j]


def layernorm_bwd(Py_ssize_t rows, Py_ssize_t c, const double[::1] x,
                  const double[::1] gamma, const double[::1] mean, const double[::1] rstd,
                  const double[::1] dy, double[::1] dx, double[::1] dgamma, double[::1] dbeta):
    cdef Py_ssize_t r, j, base
    cdef double mu, rs, g_mean, gx_mean, xh, g
    for r in range(rows):
        base = r * c
        mu = mean[r]
        rs = rstd[r]
        g_mean = 0.0
        gx_mean = 0.0
        for j in range(c):
            xh = (x[base + j] - mu) * rs
            g = dy[base + j] * gamma[j]
            g_mean += g
            gx_mean += g * xh
            dgamma[j] += dy[base + j] * xh
            dbeta[j] += dy[base + j]
        g_mean /= c
        gx_mean /= c
        for j in range(c):
            xh = (x[base + j] - mu) * rs
            g = dy[base + j] * gamma[j]
            dx[base + j] += rs * (g - g_mean - xh * gx_mean)


# --- randomness ------------------------------------------------------------

cdef inline unsigned long long _mix(unsigned long long state, unsigned long long* out) nogil:
    cdef unsigned long long z
    state = state + <unsigned long long>0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * <unsigned long long>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <unsigned long long>0x94D049BB133111EB
    out[0] = z ^ (z >> 31)
    return state


def fill_uniform(state, Py_ssize_t n, double[::1] out):
    cdef unsigned long long st = state
    cdef unsigned long long z
    cdef Py_ssize_t i
    for i in range(n):
        st = _mix(st, &z)
        out[i] = <double>(z >> 11) * _U53
    return st


def fill_gaussian(state, Py_ssize_t n, double[::1] out):
    cdef unsigned long long st = state
    cdef unsigned long long za, zb
    cdef Py_ssize_t i = 0
    cdef double u1, u2, r, t
    while i < n:
        st = _mix(st, &za)
        st = _mix(st, &zb)
        u1 = <double>((za >> 11) + 1) * _U53
        u2 = <double>(zb >> 11) * _U53
        r = sqrt(-2.0 * log(u1))
        t = _TWO_PI * u2
        out[i] = r * cos(t)
        if i + 1 < n:
            out[i + 1] = r * sin(t)
        i += 2
    return st


def mc_load_counts(Py_ssize_t m, Py_ssize_t n, Py_ssize_t kk, double sigma,
                   long long trials, state, const double[::1] clean,
                   const double[::1] noisy, double[::1] counts):
    cdef unsigned long long st = state
    cdef unsigned long long za, zb
    cdef Py_ssize_t i, j, t, pos
    cdef long long hits, done
    cdef double thr, cut, u1, u2, r, tt
    cdef double* others = <double*>malloc((n if n > 1 else 1) * sizeof(double))
    if others == NULL:
        raise MemoryError()
    try:
        for i in range(m):
            for j in range(n):
                if n == 1:
                    counts[i * n + j] = <double>trials
                    continue
                pos = 0
                for t in range(n):
                    if t == j:
                        continue
                    others[pos] = noisy[i * n + t]
                    pos += 1
                _sort_desc(others, n - 1)
                thr = others[(kk if kk < n - 1 else n - 1) - 1]
                cut = (thr - clean[i * n + j]) / sigma
                hits = 0
                done = 0
                while done < trials:
                    st = _mix(st, &za)
                    st = _mix(st, &zb)
                    u1 = <double>((za >> 11) + 1) * _U53
                    u2 = <double>(zb >> 11) * _U53
                    r = sqrt(-2.0 * log(u1))
                    tt = _TWO_PI * u2
                    if r * cos(tt) >= cut:
                        hits += 1
                    done += 1
                    if done < trials:
                        if r * sin(tt) >= cut:
                            hits += 1
                        done += 1
                counts[i * n + j] = <double>hits
    finally:
        free(others)
    return st


cdef void _sort_desc(double* a, Py_ssize_t n) nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] < v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


def adam_update(Py_ssize_t n, double lr, double b1, double b2, double eps,
                long long t, const double[::1] g, double[::1] m, double[::1] v,
                double[::1] theta):
    cdef double bc1 = 1.0 - pow(b1, <double>t)
    cdef double bc2 = 1.0 - pow(b2, <double>t)
    cdef Py_ssize_t i
    for i in range(n):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        theta[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)


# --- validation ------------------------------------------------------------

def all_finite(Py_ssize_t n, const double[::1] x):
    cdef Py_ssize_t i
    for i in range(n):
        if not isfinite(x[i]):
            return False
    return True
