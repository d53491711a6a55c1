"""Pure-Python kernel set.

Reference implementation of every numeric kernel; the compiled backend
(`sparse_mlp._core`) mirrors these loops operation-for-operation so the two
backends produce bitwise-identical results (Python's math functions call the
same libm the extension links).  Buffers are flat row-major float64 arrays
(`array('d')`); index buffers are `array('q')`.

Accumulation order is fixed: every reduction runs in ascending index order.
Changing a loop order here is a breaking change for reproducibility.
"""

import math
from array import array

_TWO_PI = 6.283185307179586
_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327
_U53 = 1.0 / 9007199254740992.0  # 2^-53
_MASK64 = (1 << 64) - 1


# --- matmul family ---------------------------------------------------------

def mm_nn(m, k, n, a, b, out, acc):
    """out (+)= A[m,k] @ B[k,n]."""
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i * k + t] * b[t * n + j]
            if acc:
                out[i * n + j] += s
            else:
                out[i * n + j] = s


def mm_nt(m, k, n, a, b, out, acc):
    """out (+)= A[m,k] @ B[n,k]^T."""
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i * k + t] * b[j * k + t]
            if acc:
                out[i * n + j] += s
            else:
                out[i * n + j] = s


def mm_tn(m, k, n, a, b, out, acc):
    """out (+)= A[k,m]^T @ B[k,n]."""
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

def transpose_batch(nb, r, c, x, out, acc):
    """out[b,j,i] (+)= x[b,i,j] for nb stacked r-by-c matrices."""
    for b in range(nb):
        base = b * r * c
        for i in range(r):
            for j in range(c):
                v = x[base + i * c + j]
                if acc:
                    out[base + j * r + i] += v
                else:
                    out[base + j * r + i] = v


def gather_rows(ni, n, x, idx, out):
    for i in range(ni):
        src = idx[i] * n
        dst = i * n
        for j in range(n):
            out[dst + j] = x[src + j]


def scatter_add_rows(ni, n, src, idx, out):
    for i in range(ni):
        dst = idx[i] * n
        s = i * n
        for j in range(n):
            out[dst + j] += src[s + j]


def take_pairs(np_, ncol, x, ridx, cidx, out):
    for i in range(np_):
        out[i] = x[ridx[i] * ncol + cidx[i]]


def scatter_add_pairs(np_, ncol, src, ridx, cidx, out):
    for i in range(np_):
        out[ridx[i] * ncol + cidx[i]] += src[i]


def extract_patches(bsz, h, w, ch, p, img, out):
    """Non-overlapping p*p patches flattened (row, col, channel) row-major.

    Patches are ordered row-major over the patch grid; output row b*S + patch.
    """
    sh = h // p
    sw = w // p
    cols = p * p * ch
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

def ew_add(n, a, b, out):
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(n, a, b, out):
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(n, a, b, out):
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_div(n, a, b, out):
    for i in range(n):
        out[i] = a[i] / b[i]


def axpy(n, alpha, x, out):
    """out += alpha * x."""
    for i in range(n):
        out[i] += alpha * x[i]


def scale(n, alpha, x, out):
    for i in range(n):
        out[i] = alpha * x[i]


def sadd(n, x, s, out):
    for i in range(n):
        out[i] = x[i] + s


def fill(n, v, out):
    for i in range(n):
        out[i] = v


# --- row/column reductions -------------------------------------------------

def col_sum(rows, n, x, out, acc):
    """out[j] (+)= sum_r x[r,j]; reduction runs over rows in ascending order."""
    for j in range(n):
        s = 0.0
        for r in range(rows):
            s += x[r * n + j]
        if acc:
            out[j] += s
        else:
            out[j] = s


def total_sum(n, x):
    s = 0.0
    for i in range(n):
        s += x[i]
    return s


def row_dot(rows, n, a, b, out, acc):
    """out[r] (+)= dot(a[r,:], b[r,:])."""
    for r in range(rows):
        s = 0.0
        base = r * n
        for j in range(n):
            s += a[base + j] * b[base + j]
        if acc:
            out[r] += s
        else:
            out[r] = s


def scale_rows(rows, n, x, s, out, acc):
    """out[r,:] (+)= x[r,:] * s[r]."""
    for r in range(rows):
        v = s[r]
        base = r * n
        for j in range(n):
            if acc:
                out[base + j] += x[base + j] * v
            else:
                out[base + j] = x[base + j] * v


def broadcast_rows(rows, n, v, out, acc):
    """out[r,:] (+)= v[:]."""
    for r in range(rows):
        base = r * n
        for j in range(n):
            if acc:
                out[base + j] += v[j]
            else:
                out[base + j] = v[j]


def add_bias(rows, n, x, b, out):
    for r in range(rows):
        base = r * n
        for j in range(n):
            out[base + j] = x[base + j] + b[j]


def pool_mean(b, s, c, x, out):
    """out[bi,ci] = mean over s of x[bi,:,ci]."""
    for bi in range(b):
        for ci in range(c):
            acc = 0.0
            for si in range(s):
                acc += x[(bi * s + si) * c + ci]
            out[bi * c + ci] = acc / s


def pool_mean_bwd(b, s, c, dy, dx):
    """dx[bi,si,ci] += dy[bi,ci] / s."""
    for bi in range(b):
        for ci in range(c):
            g = dy[bi * c + ci] / s
            for si in range(s):
                dx[(bi * s + si) * c + ci] += g


# --- nonlinearities --------------------------------------------------------

def gelu_fwd(n, x, out):
    """x * Phi(x) with the exact erf-based normal CDF."""
    for i in range(n):
        v = x[i]
        out[i] = v * (0.5 * (1.0 + math.erf(v * _INV_SQRT2)))


def gelu_bwd(n, x, dy, dx):
    """dx += (Phi(x) + x * phi(x)) * dy."""
    for i in range(n):
        v = x[i]
        phi = _INV_SQRT_2PI * math.exp(-0.5 * v * v)
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        dx[i] += (cdf + v * phi) * dy[i]


def normcdf_fwd(n, x, out):
    for i in range(n):
        out[i] = 0.5 * (1.0 + math.erf(x[i] * _INV_SQRT2))


def normcdf_bwd(n, x, dy, dx):
    for i in range(n):
        dx[i] += _INV_SQRT_2PI * math.exp(-0.5 * x[i] * x[i]) * dy[i]


def softmax_rows(rows, n, x, out):
    """Row softmax with max-subtraction."""
    for r in range(rows):
        base = r * n
        m = x[base]
        for j in range(1, n):
            if x[base + j] > m:
                m = x[base + j]
        s = 0.0
        for j in range(n):
            e = math.exp(x[base + j] - m)
            out[base + j] = e
            s += e
        for j in range(n):
            out[base + j] /= s


def softmax_rows_bwd(rows, n, y, dy, dx):
    """dx += y * (dy - sum_j dy_j y_j)."""
    for r in range(rows):
        base = r * n
        dot = 0.0
        for j in range(n):
            dot += dy[base + j] * y[base + j]
        for j in range(n):
            dx[base + j] += y[base + j] * (dy[base + j] - dot)


def logsumexp_rows(rows, n, x, out):
    for r in range(rows):
        base = r * n
        m = x[base]
        for j in range(1, n):
            if x[base + j] > m:
                m = x[base + j]
        s = 0.0
        for j in range(n):
            s += math.exp(x[base + j] - m)
        out[r] = m + math.log(s)


def logsumexp_rows_bwd(rows, n, x, lse, dy, dx):
    """dx[r,j] += softmax(x)[r,j] * dy[r]."""
    for r in range(rows):
        base = r * n
        g = dy[r]
        l = lse[r]
        for j in range(n):
            dx[base + j] += math.exp(x[base + j] - l) * g


def layernorm_fwd(rows, c, x, gamma, beta, eps, out, mean, rstd):
    """Per-row normalization over the last axis, population variance."""
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
        rs = 1.0 / math.sqrt(var + eps)
        mean[r] = mu
        rstd[r] = rs
        for j in range(c):
            out[base + j] = (x[base + j] - mu) * rs * gamma[j] + beta[j]


def layernorm_bwd(rows, c, x, gamma, mean, rstd, dy, dx, dgamma, dbeta):
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

def _next64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def fill_uniform(state, n, out):
    """Uniforms in [0,1); returns the advanced state."""
    for i in range(n):
        state, z = _next64(state)
        out[i] = (z >> 11) * _U53
    return state


def fill_gaussian(state, n, out):
    """Box-Muller pairs; odd n discards the trailing sine sample."""
    i = 0
    while i < n:
        state, za = _next64(state)
        state, zb = _next64(state)
        u1 = ((za >> 11) + 1) * _U53  # (0,1]: log stays finite
        u2 = (zb >> 11) * _U53
        r = math.sqrt(-2.0 * math.log(u1))
        t = _TWO_PI * u2
        out[i] = r * math.cos(t)
        if i + 1 < n:
            out[i + 1] = r * math.sin(t)
        i += 2
    return state


def mc_load_counts(m, n, kk, sigma, trials, state, clean, noisy, counts):
    """Selection-frequency counts for the load oracle.

    For every (item, expert) pair: threshold = min(kk, n-1)-th largest noisy
    logit among the *other* experts; a trial redraws only this expert's noise
    and counts clean + sigma*eps >= threshold.  n == 1 always selects.
    Returns the advanced rng state.
    """
    for i in range(m):
        for j in range(n):
            if n == 1:
                counts[i * n + j] = float(trials)
                continue
            others = sorted(
                (noisy[i * n + t] for t in range(n) if t != j), reverse=True
            )
            thr = others[min(kk, n - 1) - 1]
            cut = (thr - clean[i * n + j]) / sigma
            hits = 0
            done = 0
            while done < trials:
                state, za = _next64(state)
                state, zb = _next64(state)
                u1 = ((za >> 11) + 1) * _U53
                u2 = (zb >> 11) * _U53
                r = math.sqrt(-2.0 * math.log(u1))
                t = _TWO_PI * u2
                if r * math.cos(t) >= cut:
                    hits += 1
                done += 1
                if done < trials:
                    if r * math.sin(t) >= cut:
                        hits += 1
                    done += 1
            counts[i * n + j] = float(hits)
    return state


def adam_update(n, lr, b1, b2, eps, t, g, m, v, theta):
    """Bias-corrected Adam step in place over one parameter buffer."""
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i in range(n):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        theta[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)


# --- validation ------------------------------------------------------------

def all_finite(n, x):
    for i in range(n):
        if not math.isfinite(x[i]):
            return False
    return True
