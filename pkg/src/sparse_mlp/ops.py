"""Differentiable tensor operations.

Each op computes its value through the active kernel backend and, when any
input requires grad, records a backward closure on the output.  Backward
closures receive (gout, gbuf) where gbuf(t) returns the transient gradient
buffer for tensor t; they accumulate (never overwrite).
"""

from array import array

from . import backend
from .errors import ShapeError
from .tensor import Shape, Tensor, _zeros_buf

IDX = "q"  # int64 index buffers


def _k():
    return backend.active


def _result(shape: Shape, data: array, parents: tuple, bwd) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(shape, data, requires_grad=req)
    if not _k().all_finite(out.size, data):
        raise ValueError(f"operation produced non-finite values (shape {shape})")
    if req:
        out._parents = parents
        out._bwd = bwd
    return out


def _idx(values) -> array:
    return array(IDX, values)


# --- shape ------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    size = 1
    for d in shape:
        size *= d
    if size != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().axpy(x.size, 1.0, gout, gbuf(x))

    return _result(shape, x.data, (x,), bwd)


def transpose_last_two(x: Tensor) -> Tensor:
    if x.rank < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {x.shape}")
    *lead, a, b = x.shape
    nb = 1
    for d in lead:
        nb *= d
    out = _zeros_buf(x.size)
    _k().transpose_batch(nb, a, b, x.data, out, False)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().transpose_batch(nb, b, a, gout, gbuf(x), True)

    return _result((*lead, b, a), out, (x,), bwd)


# --- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    out = _zeros_buf(m * n)
    _k().mm_nn(m, k, n, a.data, b.data, out, False)

    def bwd(gout, gbuf):
        if a.requires_grad:
            _k().mm_nt(m, n, k, gout, b.data, gbuf(a), True)  # dA = dC @ B^T
        if b.requires_grad:
            _k().mm_tn(k, m, n, a.data, gout, gbuf(b), True)  # dB = A^T @ dC

    return _result((m, n), out, (a, b), bwd)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    if bias.rank != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias {bias.shape} does not match last dim of {x.shape}")
    n = bias.shape[0]
    rows = x.size // n
    out = _zeros_buf(x.size)
    _k().add_bias(rows, n, x.data, bias.data, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().axpy(x.size, 1.0, gout, gbuf(x))
        if bias.requires_grad:
            _k().col_sum(rows, n, gout, gbuf(bias), True)

    return _result(x.shape, out, (x, bias), bwd)


# --- elementwise binary (same shape, or one side a 1-element scalar) ---------

def _binary(a: Tensor, b: Tensor, op: str) -> Tensor:
    k = _k()
    if a.shape == b.shape:
        n = a.size
        out = _zeros_buf(n)
        getattr(k, f"ew_{op}")(n, a.data, b.data, out)

        def bwd(gout, gbuf):
            if op == "add":
                if a.requires_grad:
                    k.axpy(n, 1.0, gout, gbuf(a))
                if b.requires_grad:
                    k.axpy(n, 1.0, gout, gbuf(b))
            elif op == "sub":
                if a.requires_grad:
                    k.axpy(n, 1.0, gout, gbuf(a))
                if b.requires_grad:
                    k.axpy(n, -1.0, gout, gbuf(b))
            elif op == "mul":
                if a.requires_grad:
                    tmp = _zeros_buf(n)
                    k.ew_mul(n, gout, b.data, tmp)
                    k.axpy(n, 1.0, tmp, gbuf(a))
                if b.requires_grad:
                    tmp = _zeros_buf(n)
                    k.ew_mul(n, gout, a.data, tmp)
                    k.axpy(n, 1.0, tmp, gbuf(b))
            else:  # div
                if a.requires_grad:
                    tmp = _zeros_buf(n)
                    k.ew_div(n, gout, b.data, tmp)
                    k.axpy(n, 1.0, tmp, gbuf(a))
                if b.requires_grad:
                    tmp = _zeros_buf(n)
                    k.ew_mul(n, gout, out, tmp)  # g * (a/b)
                    k.ew_div(n, tmp, b.data, tmp)
                    k.axpy(n, -1.0, tmp, gbuf(b))

        return _result(a.shape, out, (a, b), bwd)

    if b.size == 1:
        return _binary_scalar(a, b, op, scalar_on_left=False)
    if a.size == 1:
        return _binary_scalar(b, a, op, scalar_on_left=True)
    raise ShapeError(f"incompatible shapes for {op}: {a.shape} vs {b.shape}")


def _binary_scalar(x: Tensor, s: Tensor, op: str, scalar_on_left: bool) -> Tensor:
    """x (tensor) combined with s (1-element tensor) broadcast over x."""
    k = _k()
    n = x.size
    sv = s.data[0]
    out = _zeros_buf(n)
    if op == "add":
        k.sadd(n, x.data, sv, out)
    elif op == "sub" and not scalar_on_left:  # x - s
        k.sadd(n, x.data, -sv, out)
    elif op == "sub":  # s - x
        k.scale(n, -1.0, x.data, out)
        k.sadd(n, out, sv, out)
    elif op == "mul":
        k.scale(n, sv, x.data, out)
    elif op == "div" and not scalar_on_left:  # x / s
        for i in range(n):
            out[i] = x.data[i] / sv
    else:  # s / x
        for i in range(n):
            out[i] = sv / x.data[i]

    def bwd(gout, gbuf):
        if x.requires_grad:
            gx = gbuf(x)
            if op == "add":
                k.axpy(n, 1.0, gout, gx)
            elif op == "sub":
                k.axpy(n, -1.0 if scalar_on_left else 1.0, gout, gx)
            elif op == "mul":
                k.axpy(n, sv, gout, gx)
            elif op == "div" and not scalar_on_left:
                for i in range(n):
                    gx[i] += gout[i] / sv
            else:  # d(s/x)/dx = -s/x^2
                for i in range(n):
                    gx[i] += gout[i] * (-sv / (x.data[i] * x.data[i]))
        if s.requires_grad:
            acc = 0.0
            if op == "add":
                acc = k.total_sum(n, gout)
            elif op == "sub":
                acc = (1.0 if scalar_on_left else -1.0) * k.total_sum(n, gout)
            elif op == "mul":
                for i in range(n):
                    acc += gout[i] * x.data[i]
            elif op == "div" and not scalar_on_left:  # d(x/s)/ds = -x/s^2
                for i in range(n):
                    acc += gout[i] * x.data[i]
                acc = -acc / (sv * sv)
            else:  # d(s/x)/ds = 1/x
                for i in range(n):
                    acc += gout[i] / x.data[i]
            gbuf(s)[0] += acc

    parents = (s, x) if scalar_on_left else (x, s)
    return _result(x.shape, out, parents, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "div")


def scale(x: Tensor, c: float) -> Tensor:
    out = _zeros_buf(x.size)
    _k().scale(x.size, float(c), x.data, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().axpy(x.size, float(c), gout, gbuf(x))

    return _result(x.shape, out, (x,), bwd)


def add_const(x: Tensor, c: float) -> Tensor:
    out = _zeros_buf(x.size)
    _k().sadd(x.size, x.data, float(c), out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().axpy(x.size, 1.0, gout, gbuf(x))

    return _result(x.shape, out, (x,), bwd)


# --- nonlinear --------------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    out = _zeros_buf(x.size)
    _k().gelu_fwd(x.size, x.data, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().gelu_bwd(x.size, x.data, gout, gbuf(x))

    return _result(x.shape, out, (x,), bwd)


def normal_cdf(x: Tensor) -> Tensor:
    out = _zeros_buf(x.size)
    _k().normcdf_fwd(x.size, x.data, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().normcdf_bwd(x.size, x.data, gout, gbuf(x))

    return _result(x.shape, out, (x,), bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    n = x.shape[-1]
    rows = x.size // n
    out = _zeros_buf(x.size)
    _k().softmax_rows(rows, n, x.data, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().softmax_rows_bwd(rows, n, out, gout, gbuf(x))

    return _result(x.shape, out, (x,), bwd)


def logsumexp_lastdim(x: Tensor) -> Tensor:
    if x.rank < 2:
        raise ShapeError("logsumexp_lastdim needs rank >= 2 so the result keeps rank >= 1")
    n = x.shape[-1]
    rows = x.size // n
    out = _zeros_buf(rows)
    _k().logsumexp_rows(rows, n, x.data, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().logsumexp_rows_bwd(rows, n, x.data, out, gout, gbuf(x))

    return _result(x.shape[:-1], out, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm params must be ({c},), got {gamma.shape}/{beta.shape}")
    rows = x.size // c
    out = _zeros_buf(x.size)
    mean = _zeros_buf(rows)
    rstd = _zeros_buf(rows)
    _k().layernorm_fwd(rows, c, x.data, gamma.data, beta.data, eps, out, mean, rstd)

    def bwd(gout, gbuf):
        gx = gbuf(x) if x.requires_grad else _zeros_buf(x.size)
        gg = gbuf(gamma) if gamma.requires_grad else _zeros_buf(c)
        gb = gbuf(beta) if beta.requires_grad else _zeros_buf(c)
        _k().layernorm_bwd(rows, c, x.data, gamma.data, mean, rstd, gout, gx, gg, gb)

    return _result(x.shape, out, (x, gamma, beta), bwd)


# --- reductions --------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = array("d", [_k().total_sum(x.size, x.data)])

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().axpy(x.size, gout[0], _ones_cache(x.size), gbuf(x))

    return _result((1,), out, (x,), bwd)


_ONES: dict[int, array] = {}


def _ones_cache(n: int) -> array:
    buf = _ONES.get(n)
    if buf is None:
        buf = array("d", bytes(8 * n))
        _k().fill(n, 1.0, buf)
        _ONES[n] = buf
    return buf


def sum_axis0(x: Tensor) -> Tensor:
    if x.rank != 2:
        raise ShapeError(f"sum_axis0 needs rank 2, got {x.shape}")
    m, n = x.shape
    out = _zeros_buf(n)
    _k().col_sum(m, n, x.data, out, False)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().broadcast_rows(m, n, gout, gbuf(x), True)

    return _result((n,), out, (x,), bwd)


def pool_mean(x: Tensor) -> Tensor:
    """(B, S, C) -> (B, C) average over the middle axis."""
    if x.rank != 3:
        raise ShapeError(f"pool_mean needs rank 3, got {x.shape}")
    b, s, c = x.shape
    out = _zeros_buf(b * c)
    _k().pool_mean(b, s, c, x.data, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().pool_mean_bwd(b, s, c, gout, gbuf(x))

    return _result((b, c), out, (x,), bwd)


# --- indexing ----------------------------------------------------------------

def gather_rows(x: Tensor, rows) -> Tensor:
    if x.rank != 2:
        raise ShapeError(f"gather_rows needs rank 2, got {x.shape}")
    m, n = x.shape
    idx = _idx(rows)
    for r in idx:
        if not 0 <= r < m:
            raise ShapeError(f"row index {r} out of range for {x.shape}")
    ni = len(idx)
    out = _zeros_buf(ni * n)
    _k().gather_rows(ni, n, x.data, idx, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().scatter_add_rows(ni, n, gout, idx, gbuf(x))

    return _result((ni, n), out, (x,), bwd)


def scatter_rows(src: Tensor, rows, nrows: int) -> Tensor:
    """Rows of src placed at the given indices of an otherwise-zero (nrows, n)."""
    if src.rank != 2:
        raise ShapeError(f"scatter_rows needs rank 2, got {src.shape}")
    ni, n = src.shape
    idx = _idx(rows)
    if len(idx) != ni:
        raise ShapeError("index count must match src rows")
    for r in idx:
        if not 0 <= r < nrows:
            raise ShapeError(f"row index {r} out of range for {nrows} rows")
    out = _zeros_buf(nrows * n)
    _k().scatter_add_rows(ni, n, src.data, idx, out)

    def bwd(gout, gbuf):
        if src.requires_grad:
            _k().gather_rows(ni, n, gout, idx, gbuf(src))

    return _result((nrows, n), out, (src,), bwd)


def take_pairs(x: Tensor, rows, cols) -> Tensor:
    if x.rank != 2:
        raise ShapeError(f"take_pairs needs rank 2, got {x.shape}")
    m, n = x.shape
    ridx, cidx = _idx(rows), _idx(cols)
    if len(ridx) != len(cidx) or not ridx:
        raise ShapeError("row/col index lists must be equal length and non-empty")
    for r, c in zip(ridx, cidx):
        if not (0 <= r < m and 0 <= c < n):
            raise ShapeError(f"pair ({r},{c}) out of range for {x.shape}")
    np_ = len(ridx)
    out = _zeros_buf(np_)
    _k().take_pairs(np_, n, x.data, ridx, cidx, out)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().scatter_add_pairs(np_, n, gout, ridx, cidx, gbuf(x))

    return _result((np_,), out, (x,), bwd)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """x[r,:] * s[r] with gradients to both."""
    if x.rank != 2 or s.shape != (x.shape[0],):
        raise ShapeError(f"scale_rows shapes incompatible: {x.shape} vs {s.shape}")
    m, n = x.shape
    out = _zeros_buf(x.size)
    _k().scale_rows(m, n, x.data, s.data, out, False)

    def bwd(gout, gbuf):
        if x.requires_grad:
            _k().scale_rows(m, n, gout, s.data, gbuf(x), True)
        if s.requires_grad:
            _k().row_dot(m, n, gout, x.data, gbuf(s), True)

    return _result(x.shape, out, (x, s), bwd)
