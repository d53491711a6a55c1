"""Model assembly: re-represent layers, sparse blocks, full model, param count.

A sparse block rescales (S, C) -> (S1, C1) = (2S, C/2), runs a token-mixing
MoE over the B*C1 channel rows (items of length S1) and a channel-mixing MoE
over the B*S1 patch rows (items of length C1), both with residuals, then
rescales back.  The channel stage degrades to a dense MLP when the config
ships zero channel experts.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

from . import ops
from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .moe import GateOutcome, GatingParams, MoeParams, aux_loss, moe_forward
from .nn import (AffineParams, LayerNormParams, MlpParams, classifier_head,
                 dense_block_forward, layer_norm_channels, mlp_forward, patch_embed)
from .rng import Rng
from .tensor import Tensor, scalar


@dataclass
class RescaleParams:
    """One re-represent layer; direction 'forward' maps (S,C)->(S1,C1)."""

    ln_a: LayerNormParams
    ln_b: LayerNormParams
    token_proj: AffineParams
    channel_proj: AffineParams
    direction: str  # forward | backward


def re_represent_1(x: Tensor, p: RescaleParams) -> Tensor:
    """norm -> transpose -> token proj -> gelu -> transpose -> norm -> channel proj -> gelu."""
    if p.direction != "forward":
        raise ConfigError("re_represent_1 needs a forward-direction rescale")
    h = layer_norm_channels(x, p.ln_a)
    h = ops.transpose_last_two(h)
    h = ops.gelu(_affine(h, p.token_proj))
    h = ops.transpose_last_two(h)
    h = layer_norm_channels(h, p.ln_b)
    return ops.gelu(_affine(h, p.channel_proj))


def re_represent_2(x: Tensor, p: RescaleParams) -> Tensor:
    """norm -> channel proj -> gelu -> norm -> transpose -> token proj -> gelu -> transpose."""
    if p.direction != "backward":
        raise ConfigError("re_represent_2 needs a backward-direction rescale")
    h = layer_norm_channels(x, p.ln_a)
    h = ops.gelu(_affine(h, p.channel_proj))
    h = layer_norm_channels(h, p.ln_b)
    h = ops.transpose_last_two(h)
    h = ops.gelu(_affine(h, p.token_proj))
    return ops.transpose_last_two(h)


def _affine(x: Tensor, p: AffineParams) -> Tensor:
    from .nn import affine_lastdim

    return affine_lastdim(x, p)


@dataclass
class DenseBlockParams:
    ln1: LayerNormParams
    token_mlp: MlpParams
    ln2: LayerNormParams
    channel_mlp: MlpParams
    kind: str = "dense"


@dataclass
class SparseBlockParams:
    rr1: Optional[RescaleParams]
    ln1: LayerNormParams
    moe_token: MoeParams
    ln2: LayerNormParams
    channel_stage: Union[MoeParams, MlpParams]  # MlpParams when experts_channel == 0
    rr2: Optional[RescaleParams]
    kind: str = "sparse"


def sparse_block_forward(x: Tensor, p: SparseBlockParams, rng, training: bool
                         ) -> tuple[Tensor, list[tuple[str, GateOutcome]]]:
    """Returns the block output and the gate outcomes of its MoE stages."""
    if x.rank != 3:
        raise ShapeError(f"sparse block expects (B, S, C), got {x.shape}")
    b = x.shape[0]
    h = re_represent_1(x, p.rr1) if p.rr1 is not None else x
    s1, c1 = h.shape[1], h.shape[2]

    outcomes = []
    # token mixing: items are the B*C1 channel rows, each of length S1
    z = ops.transpose_last_two(layer_norm_channels(h, p.ln1))
    items = ops.reshape(z, (b * c1, s1))
    y_items, out_tok = moe_forward(items, p.moe_token, rng, training)
    outcomes.append(("token", out_tok))
    mixed = ops.transpose_last_two(ops.reshape(y_items, (b, c1, s1)))
    h = ops.add(h, mixed)

    # channel mixing: items are the B*S1 patch rows, each of length C1
    z = layer_norm_channels(h, p.ln2)
    if isinstance(p.channel_stage, MoeParams):
        items = ops.reshape(z, (b * s1, c1))
        y_items, out_ch = moe_forward(items, p.channel_stage, rng, training)
        outcomes.append(("channel", out_ch))
        h = ops.add(h, ops.reshape(y_items, (b, s1, c1)))
    else:
        h = ops.add(h, mlp_forward(z, p.channel_stage))

    y = re_represent_2(h, p.rr2) if p.rr2 is not None else h
    return y, outcomes


@dataclass
class Model:
    cfg: ModelConfig
    embed: AffineParams
    blocks: list
    head: AffineParams
    params: dict[str, Tensor] = field(default_factory=dict)  # canonical dotted names, ordered

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())


@dataclass
class ForwardResult:
    logits: Tensor
    aux_total: Tensor  # scalar; sum of per-MoE-stage aux losses
    outcomes: list    # (layer_name, GateOutcome) in execution order


def _register(params: dict, prefix: str, struct) -> None:
    for name, t in struct.tensors().items():
        params[f"{prefix}.{name}"] = t


def _init_rescale(rng: Rng, cfg: ModelConfig, direction: str, params: dict, prefix: str
                  ) -> RescaleParams:
    s, c = cfg.n_patches, cfg.hidden
    s1, c1 = cfg.new_patches, cfg.new_hidden
    if direction == "forward":
        p = RescaleParams(
            ln_a=LayerNormParams.init(c),
            ln_b=LayerNormParams.init(c),
            token_proj=AffineParams.init(rng, s, s1),
            channel_proj=AffineParams.init(rng, c, c1),
            direction="forward",
        )
    else:
        p = RescaleParams(
            ln_a=LayerNormParams.init(c1),
            ln_b=LayerNormParams.init(c),
            token_proj=AffineParams.init(rng, s1, s),
            channel_proj=AffineParams.init(rng, c1, c),
            direction="backward",
        )
    # registration order mirrors execution order within the layer
    if direction == "forward":
        _register(params, f"{prefix}.ln_a", p.ln_a)
        _register(params, f"{prefix}.token_proj", p.token_proj)
        _register(params, f"{prefix}.ln_b", p.ln_b)
        _register(params, f"{prefix}.channel_proj", p.channel_proj)
    else:
        _register(params, f"{prefix}.ln_a", p.ln_a)
        _register(params, f"{prefix}.channel_proj", p.channel_proj)
        _register(params, f"{prefix}.ln_b", p.ln_b)
        _register(params, f"{prefix}.token_proj", p.token_proj)
    return p


def _init_moe(rng: Rng, d: int, hidden: int, n: int, k: int, fraction: float,
              mode: str, params: dict, prefix: str) -> MoeParams:
    gating = GatingParams.init(rng, d, n, k)
    params[f"{prefix}.gate.w_g"] = gating.w_g
    experts = []
    for e in range(n):
        mlp = MlpParams.init(rng, d, hidden)
        _register(params, f"{prefix}.expert{e}", mlp)
        experts.append(mlp)
    return MoeParams(gating=gating, experts=experts, mode=mode,
                     elimination_fraction=fraction)


def build_model(cfg: ModelConfig, rng: Rng) -> Model:
    """Construct and initialize every parameter in canonical (file) order."""
    cfg.validate()
    params: dict[str, Tensor] = {}
    s, c = cfg.n_patches, cfg.hidden

    embed = AffineParams.init(rng, cfg.patch * cfg.patch * cfg.image_ch, c)
    _register(params, "embed", embed)

    blocks = []
    for i, kind in enumerate(cfg.block_kinds()):
        prefix = f"block{i}"
        if kind == "d":
            blk = DenseBlockParams(
                ln1=LayerNormParams.init(c),
                token_mlp=MlpParams.init(rng, s, cfg.dense_token_dim),
                ln2=LayerNormParams.init(c),
                channel_mlp=MlpParams.init(rng, c, cfg.dense_channel_dim),
            )
            _register(params, f"{prefix}.ln1", blk.ln1)
            _register(params, f"{prefix}.token_mlp", blk.token_mlp)
            _register(params, f"{prefix}.ln2", blk.ln2)
            _register(params, f"{prefix}.channel_mlp", blk.channel_mlp)
        else:
            s1, c1 = cfg.new_patches, cfg.new_hidden
            rr1 = rr2 = None
            if cfg.rescale:
                rr1 = _init_rescale(rng, cfg, "forward", params, f"{prefix}.rr1")
            ln1 = LayerNormParams.init(c1)
            _register(params, f"{prefix}.ln1", ln1)
            moe_token = _init_moe(rng, s1, cfg.moe_token_dim, cfg.experts_token,
                                  cfg.token_top_k, cfg.elimination_fraction,
                                  "token", params, f"{prefix}.moe_token")
            ln2 = LayerNormParams.init(c1)
            _register(params, f"{prefix}.ln2", ln2)
            if cfg.experts_channel > 0:
                channel_stage: Union[MoeParams, MlpParams] = _init_moe(
                    rng, c1, cfg.moe_channel_dim, cfg.experts_channel,
                    cfg.channel_top_k, cfg.elimination_fraction,
                    "channel", params, f"{prefix}.moe_channel")
            else:
                channel_stage = MlpParams.init(rng, c1, cfg.moe_channel_dim)
                _register(params, f"{prefix}.channel_mlp", channel_stage)
            if cfg.rescale:
                rr2 = _init_rescale(rng, cfg, "backward", params, f"{prefix}.rr2")
            blk = SparseBlockParams(rr1=rr1, ln1=ln1, moe_token=moe_token,
                                    ln2=ln2, channel_stage=channel_stage, rr2=rr2)
        blocks.append(blk)

    head = AffineParams.init(rng, c, cfg.classes)
    _register(params, "head", head)
    return Model(cfg=cfg, embed=embed, blocks=blocks, head=head, params=params)


def model_forward(model: Model, images: Tensor, rng, training: bool) -> ForwardResult:
    cfg = model.cfg
    if images.rank != 4 or images.shape[1:] != (cfg.image_h, cfg.image_w, cfg.image_ch):
        raise ShapeError(
            f"expected (B, {cfg.image_h}, {cfg.image_w}, {cfg.image_ch}), got {images.shape}")
    h = patch_embed(images, cfg.patch, model.embed)
    aux_total = scalar(0.0)
    outcomes = []
    for i, blk in enumerate(model.blocks):
        if blk.kind == "dense":
            h = dense_block_forward(h, blk.token_mlp, blk.channel_mlp, blk.ln1, blk.ln2)
        else:
            h, outs = sparse_block_forward(h, blk, rng, training)
            for stage, out in outs:
                outcomes.append((f"block{i}.{stage}", out))
                aux_total = ops.add(aux_total, aux_loss(out.importance_loss, out.load_loss))
    logits = classifier_head(h, model.head)
    return ForwardResult(logits=logits, aux_total=aux_total, outcomes=outcomes)


# --- analytic parameter count -----------------------------------------------

def _affine_count(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def _mlp_count(d: int, hidden: int) -> int:
    return d * hidden + hidden + hidden * d + d


def _ln_count(c: int) -> int:
    return 2 * c


def count_params(cfg: ModelConfig) -> int:
    """Trainable scalar count; matches the constructed model exactly."""
    cfg.validate()
    s, c = cfg.n_patches, cfg.hidden
    total = _affine_count(cfg.patch * cfg.patch * cfg.image_ch, c)

    dense = (2 * _ln_count(c)
             + _mlp_count(s, cfg.dense_token_dim)
             + _mlp_count(c, cfg.dense_channel_dim))
    total += cfg.dense_blocks * dense

    if cfg.sparse_blocks > 0:
        s1, c1 = cfg.new_patches, cfg.new_hidden
        sparse = 0
        if cfg.rescale:
            sparse += (_ln_count(c) + _affine_count(s, s1)
                       + _ln_count(c) + _affine_count(c, c1))       # rr1
            sparse += (_ln_count(c1) + _affine_count(c1, c)
                       + _ln_count(c) + _affine_count(s1, s))       # rr2
        sparse += _ln_count(c1)
        sparse += s1 * cfg.experts_token                            # token gate
        sparse += cfg.experts_token * _mlp_count(s1, cfg.moe_token_dim)
        sparse += _ln_count(c1)
        if cfg.experts_channel > 0:
            sparse += c1 * cfg.experts_channel                      # channel gate
            sparse += cfg.experts_channel * _mlp_count(c1, cfg.moe_channel_dim)
        else:
            sparse += _mlp_count(c1, cfg.moe_channel_dim)
        total += cfg.sparse_blocks * sparse

    total += _affine_count(c, cfg.classes)
    return total
