"""Sparse expert routing: noisy top-k gating, balance losses, score elimination.

Routed items are rows of a (M, D) matrix; the gate scores them against N
experts, keeps the top-k softmax probabilities untouched (no renormalization),
and two coefficient-of-variation losses push the assignment toward balance.
The optional importance-score filter drops the lowest-scoring fraction of
items before dispatch; dropped rows pass through unchanged and the residual
connection around the layer carries them.

Conventions fixed here (determinism over unspecified behavior):
- selection ties break toward the lower expert index,
- elimination ties drop the higher item index first,
- gate noise is drawn only in training mode; scores at eval use the
  noise-free probabilities,
- importance uses the clean-logit softmax, routing weights the noisy one.
"""

import math
from dataclasses import dataclass, field

from . import ops
from .errors import ConfigError, ShapeError
from .nn import MlpParams, mlp_forward
from .tensor import Tensor, scalar, zeros

AUX_WEIGHT = 0.01  # balance-loss coefficient; performance is insensitive to it


@dataclass
class GatingParams:
    w_g: Tensor  # (D, N)
    k: int

    def __post_init__(self):
        if self.w_g.rank != 2:
            raise ConfigError(f"gate matrix must be rank 2, got {self.w_g.shape}")
        if not 1 <= self.k <= self.num_experts:
            raise ConfigError(f"k={self.k} outside 1..{self.num_experts}")

    @property
    def num_experts(self) -> int:
        return self.w_g.shape[1]

    @property
    def noise_scale(self) -> float:
        # noise is N(0, 1/N^2): standard deviation 1/N
        return 1.0 / self.num_experts

    @classmethod
    def init(cls, rng, d: int, n: int, k: int) -> "GatingParams":
        from .nn import trunc_normal

        return cls(w_g=trunc_normal(rng, (d, n)), k=k)


@dataclass
class GateOutcome:
    """Everything one gating invocation produced."""

    weights: Tensor                 # (M, N), exactly min(k, N) nonzeros per routed row
    selected: list                  # (item, expert) pairs, item-major order
    clean_logits: Tensor
    noisy_logits: Tensor
    probs: Tensor                   # softmax of noisy logits (routing weights source)
    importance_loss: Tensor         # scalar tensors so training can differentiate them
    load_loss: Tensor
    kept: list = field(default_factory=list)        # surviving item indices
    eliminated: list = field(default_factory=list)  # dropped item indices
    stability_margin: float = math.inf  # min gap between k-th and (k+1)-th prob
    max_item_norm: float = 0.0
    expert_evals: int = 0           # filled by moe_forward

    def histogram(self) -> list[int]:
        counts = [0] * self.probs.shape[1]
        for _, e in self.selected:
            counts[e] += 1
        return counts


@dataclass
class MoeParams:
    gating: GatingParams
    experts: list  # of MlpParams, identical dims
    mode: str = "token"  # token-mixing or channel-mixing; informational
    elimination_fraction: float = 0.0

    def __post_init__(self):
        if len(self.experts) != self.gating.num_experts:
            raise ConfigError(
                f"{len(self.experts)} experts but gate scores {self.gating.num_experts}")
        dims = {(e.w1.shape, e.w2.shape) for e in self.experts}
        if len(dims) > 1:
            raise ConfigError("experts must share identical dimensions")
        if not 0.0 <= self.elimination_fraction < 1.0:
            raise ConfigError("elimination_fraction must be in [0, 1)")


def cv_squared(v: Tensor) -> Tensor:
    """(population std / mean)^2 of a vector, as a differentiable scalar."""
    n = v.size
    if n == 1:
        return scalar(0.0)
    mean = ops.scale(ops.sum_all(v), 1.0 / n)
    diff = ops.sub(v, mean)
    var = ops.scale(ops.sum_all(ops.mul(diff, diff)), 1.0 / n)
    return ops.div(var, ops.mul(mean, mean))


def importance_loss(probs: Tensor) -> Tensor:
    """CV^2 of per-expert summed routing probabilities (full softmax rows)."""
    return cv_squared(ops.sum_axis0(probs))


def load_loss(clean_logits: Tensor, noisy_logits: Tensor, p: GatingParams) -> Tensor:
    """CV^2 of the smooth per-expert load estimate.

    p_i(x) = Phi((clean_i - T_i) / noise_std) where T_i is the min(k, N-1)-th
    largest *noisy* logit among the other experts; with a single expert the
    load is constant so the loss is 0.
    """
    m, n = clean_logits.shape
    if n < 2:
        return scalar(0.0)
    kk = min(p.k, n - 1)
    rows, cols = [], []
    nd = noisy_logits.data
    for i in range(m):
        order = sorted(range(n), key=lambda j: (-nd[i * n + j], j))
        for j in range(n):
            others = [t for t in order if t != j]
            rows.append(i)
            cols.append(others[kk - 1])
    thresholds = ops.take_pairs(noisy_logits, rows, cols)
    own = ops.take_pairs(clean_logits, [r for r in rows], [j for i in range(m) for j in range(n)])
    z = ops.scale(ops.sub(own, thresholds), 1.0 / p.noise_scale)
    probs = ops.reshape(ops.normal_cdf(z), (m, n))
    return cv_squared(ops.sum_axis0(probs))


def aux_loss(imp: Tensor, load: Tensor) -> Tensor:
    """lambda * (imp/2 + load/2) with lambda = 0.01."""
    return ops.scale(ops.add(ops.scale(imp, 0.5), ops.scale(load, 0.5)), AUX_WEIGHT)


def importance_score_filter(probs: Tensor, fraction: float) -> list[int]:
    """Indices surviving elimination, in original order.

    Score of an item is its highest routing probability; the floor(fraction*M)
    lowest-scoring items are dropped, ties dropping the higher index first.
    """
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"fraction must be in [0, 1), got {fraction}")
    m, n = probs.shape
    ndrop = int(math.floor(fraction * m))
    if ndrop == 0:
        return list(range(m))
    scores = []
    for i in range(m):
        scores.append(max(probs.data[i * n + j] for j in range(n)))
    order = sorted(range(m), key=lambda i: (scores[i], -i))
    dropped = set(order[:ndrop])
    return [i for i in range(m) if i not in dropped]


def _top_k_rows(probs: Tensor, rows: list[int], k: int) -> list:
    """(item, expert) pairs for the k largest probs of each listed row."""
    m, n = probs.shape
    kk = min(k, n)
    pairs = []
    for i in rows:
        order = sorted(range(n), key=lambda j: (-probs.data[i * n + j], j))
        for j in order[:kk]:
            pairs.append((i, j))
    return pairs


def _margin(probs: Tensor, rows: list[int], k: int) -> float:
    """Min over rows of the gap between the k-th and (k+1)-th probability."""
    m, n = probs.shape
    if k >= n:
        return math.inf
    worst = math.inf
    for i in rows:
        vals = sorted((probs.data[i * n + j] for j in range(n)), reverse=True)
        worst = min(worst, vals[k - 1] - vals[k])
    return worst


def _max_row_norm(items: Tensor) -> float:
    m, d = items.shape
    best = 0.0
    for i in range(m):
        acc = 0.0
        for j in range(d):
            v = items.data[i * d + j]
            acc += v * v
        best = max(best, acc)
    return math.sqrt(best)


def _gate_pipeline(items: Tensor, p: GatingParams, rng, training: bool,
                   elimination_fraction: float) -> GateOutcome:
    if items.rank != 2:
        raise ShapeError(f"gate expects (M, D), got {items.shape}")
    m, d = items.shape
    n = p.num_experts
    if p.w_g.shape[0] != d:
        raise ShapeError(f"gate matrix expects items of size {p.w_g.shape[0]}, got {d}")

    clean = ops.matmul(items, p.w_g)
    if training:
        noise = rng.gaussian(m * n)
        for i in range(m * n):
            noise[i] *= p.noise_scale
        noisy = ops.add(clean, Tensor((m, n), noise))
        probs = ops.softmax_lastdim(noisy)
        clean_probs = ops.softmax_lastdim(clean)
    else:
        noisy = clean
        probs = ops.softmax_lastdim(noisy)
        clean_probs = probs

    if elimination_fraction > 0.0:
        kept = importance_score_filter(probs, elimination_fraction)
    else:
        kept = list(range(m))
    eliminated = sorted(set(range(m)) - set(kept))

    if len(kept) < m:
        sub_clean = ops.gather_rows(clean, kept)
        sub_noisy = ops.gather_rows(noisy, kept) if training else sub_clean
        sub_clean_probs = ops.gather_rows(clean_probs, kept)
        imp = importance_loss(sub_clean_probs)
        load = load_loss(sub_clean, sub_noisy, p)
    else:
        imp = importance_loss(clean_probs)
        load = load_loss(clean, noisy, p)

    selected = _top_k_rows(probs, kept, p.k)
    weights = zeros((m, n))
    for i, j in selected:
        weights.data[i * n + j] = probs.data[i * n + j]

    return GateOutcome(
        weights=weights,
        selected=selected,
        clean_logits=clean,
        noisy_logits=noisy,
        probs=probs,
        importance_loss=imp,
        load_loss=load,
        kept=kept,
        eliminated=eliminated,
        stability_margin=_margin(probs, kept, p.k),
        max_item_norm=_max_row_norm(items),
    )


def gate(items: Tensor, p: GatingParams, rng, training: bool) -> GateOutcome:
    """Noisy top-k gating of item rows; no elimination."""
    return _gate_pipeline(items, p, rng, training, 0.0)


def moe_forward(x_items: Tensor, p: MoeParams, rng, training: bool) -> tuple[Tensor, GateOutcome]:
    """Route items to their selected experts and combine weighted outputs.

    Eliminated items (importance-score filter) pass through unchanged.  Only
    the selected (item, expert) pairs are evaluated; the per-item sum reduces
    in ascending expert order.
    """
    m, d = x_items.shape
    if p.experts and p.experts[0].w1.shape[0] != d:
        raise ShapeError(
            f"experts map R^{p.experts[0].w1.shape[0]}, items have size {d}")
    outcome = _gate_pipeline(x_items, p.gating, rng, training, p.elimination_fraction)

    y = zeros((m, d))
    evals = 0
    for e in range(p.gating.num_experts):
        rows = [i for i, j in outcome.selected if j == e]
        if not rows:
            continue
        evals += len(rows)
        out_e = mlp_forward(ops.gather_rows(x_items, rows), p.experts[e])
        w = ops.take_pairs(outcome.probs, rows, [e] * len(rows))
        y = ops.add(y, ops.scatter_rows(ops.scale_rows(out_e, w), rows, m))
    if outcome.eliminated:
        passthrough = ops.gather_rows(x_items, outcome.eliminated)
        y = ops.add(y, ops.scatter_rows(passthrough, outcome.eliminated, m))
    outcome.expert_evals = evals
    return y, outcome
