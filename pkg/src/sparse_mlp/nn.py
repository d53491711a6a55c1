"""Dense building blocks: GELU MLP, layer norm, mixer block, patch embedding, head.

All forwards are pure functions of immutable parameter structs; gradients flow
through the ops tape.  Weight init is truncated normal (std 0.02, resample
outside two sigma), biases zero -- recorded here so runs are reproducible.
"""

from dataclasses import dataclass, field

from . import ops
from .errors import ShapeError
from .rng import Rng
from .tensor import Tensor, tensor, zeros

LN_EPS = 1e-6


def trunc_normal(rng: Rng, shape, std: float = 0.02, requires_grad: bool = True) -> Tensor:
    """Gaussian clipped by resampling outside two sigma; one draw per attempt."""
    size = 1
    for d in shape:
        size *= d
    vals = rng.gaussian(size)
    for i in range(size):
        v = vals[i]
        while abs(v) > 2.0:
            v = rng.gaussian(1)[0]
        vals[i] = v * std
    return Tensor(tuple(shape), vals, requires_grad=requires_grad)


@dataclass
class MlpParams:
    """Two affine layers around a GELU; maps R^d -> R^d through hidden width."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: Rng, d: int, hidden: int) -> "MlpParams":
        return cls(
            w1=trunc_normal(rng, (d, hidden)),
            b1=zeros((hidden,), requires_grad=True),
            w2=trunc_normal(rng, (hidden, d)),
            b2=zeros((d,), requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = LN_EPS

    @classmethod
    def init(cls, c: int) -> "LayerNormParams":
        return cls(
            gamma=tensor([1.0] * c, (c,), requires_grad=True),
            beta=zeros((c,), requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}


@dataclass
class AffineParams:
    """Single affine projection R^d_in -> R^d_out."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: Rng, d_in: int, d_out: int) -> "AffineParams":
        return cls(
            weight=trunc_normal(rng, (d_in, d_out)),
            bias=zeros((d_out,), requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def gelu(x: Tensor) -> Tensor:
    return ops.gelu(x)


def layer_norm_channels(x: Tensor, p: LayerNormParams) -> Tensor:
    if x.shape[-1] != p.gamma.shape[0]:
        raise ShapeError(f"layer_norm over {p.gamma.shape[0]} channels, input {x.shape}")
    return ops.layer_norm(x, p.gamma, p.beta, p.eps)


def affine_lastdim(x: Tensor, p: AffineParams) -> Tensor:
    """x @ weight + bias along the last axis, any leading shape."""
    d_in, d_out = p.weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"affine expects last dim {d_in}, input {x.shape}")
    rows = x.size // d_in
    flat = ops.reshape(x, (rows, d_in))
    out = ops.add_bias(ops.matmul(flat, p.weight), p.bias)
    return ops.reshape(out, (*x.shape[:-1], d_out))


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    d, hidden = p.w1.shape
    if x.shape[-1] != d:
        raise ShapeError(f"mlp expects last dim {d}, input {x.shape}")
    rows = x.size // d
    flat = ops.reshape(x, (rows, d))
    h = ops.gelu(ops.add_bias(ops.matmul(flat, p.w1), p.b1))
    out = ops.add_bias(ops.matmul(h, p.w2), p.b2)
    return ops.reshape(out, x.shape)


def dense_block_forward(x: Tensor, token_mlp: MlpParams, channel_mlp: MlpParams,
                        ln1: LayerNormParams, ln2: LayerNormParams) -> Tensor:
    """Mixer layer: token-mixing MLP across patches, then channel-mixing MLP."""
    if x.rank != 3:
        raise ShapeError(f"dense block expects (B, S, C), got {x.shape}")
    s = x.shape[1]
    if token_mlp.w1.shape[0] != s:
        raise ShapeError(f"token MLP is over R^{token_mlp.w1.shape[0]}, input has S={s}")
    if channel_mlp.w1.shape[0] != x.shape[2]:
        raise ShapeError(
            f"channel MLP is over R^{channel_mlp.w1.shape[0]}, input has C={x.shape[2]}")
    t = ops.transpose_last_two(layer_norm_channels(x, ln1))
    y1 = ops.add(x, ops.transpose_last_two(mlp_forward(t, token_mlp)))
    return ops.add(y1, mlp_forward(layer_norm_channels(y1, ln2), channel_mlp))


def patch_embed(images: Tensor, patch: int, proj: AffineParams) -> Tensor:
    """Split (B,H,W,Ch) into P*P patches, flatten (row, col, channel), project."""
    if images.rank != 4:
        raise ShapeError(f"patch_embed expects (B, H, W, Ch), got {images.shape}")
    b, h, w, ch = images.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {patch}")
    s = (h // patch) * (w // patch)
    cols = patch * patch * ch
    if proj.weight.shape[0] != cols:
        raise ShapeError(f"embedding expects {proj.weight.shape[0]} inputs, patches have {cols}")
    from . import backend
    from .tensor import _zeros_buf

    buf = _zeros_buf(b * s * cols)
    backend.active.extract_patches(b, h, w, ch, patch, images.data, buf)
    patches = Tensor((b * s, cols), buf)  # image pixels carry no gradient
    out = ops.add_bias(ops.matmul(patches, proj.weight), proj.bias)
    return ops.reshape(out, (b, s, proj.weight.shape[1]))


def classifier_head(x: Tensor, proj: AffineParams) -> Tensor:
    """Global average over patches, then affine projection to class logits."""
    if x.rank != 3:
        raise ShapeError(f"classifier head expects (B, S, C), got {x.shape}")
    pooled = ops.pool_mean(x)
    return ops.add_bias(ops.matmul(pooled, proj.weight), proj.bias)
