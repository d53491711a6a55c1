"""Supervised training: objective, Adam, epoch loop, evaluation, reports."""

import warnings
from array import array
from dataclasses import dataclass, field

from . import backend, ops
from .arch import Model, model_forward
from .errors import InputError, StateError
from .rng import Rng
from .storage import Dataset
from .tensor import Tensor, backward, _zeros_buf


def cross_entropy(logits: Tensor, labels: list[int]) -> Tensor:
    """Mean negative log softmax probability of the labeled class."""
    b, k = logits.shape
    if len(labels) != b:
        raise InputError(f"{b} logit rows but {len(labels)} labels")
    for i, lab in enumerate(labels):
        if not 0 <= lab < k:
            raise InputError(f"label {lab} at index {i} outside 0..{k - 1}")
    lse = ops.logsumexp_lastdim(logits)
    own = ops.take_pairs(logits, list(range(b)), labels)
    return ops.scale(ops.sum_all(ops.sub(lse, own)), 1.0 / b)


def total_loss(task: Tensor, aux_total: Tensor) -> Tensor:
    """Task plus already-weighted balance losses."""
    return ops.add(task, aux_total)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, array] = field(default_factory=dict)
    v: dict[str, array] = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, Tensor], lr: float = 1e-3) -> "AdamState":
        st = cls(lr=lr)
        for name, t in params.items():
            st.m[name] = _zeros_buf(t.size)
            st.v[name] = _zeros_buf(t.size)
        return st


def adam_step(params: dict[str, Tensor], st: AdamState) -> None:
    """Bias-corrected Adam update in place; grads are consumed (zeroed).

    Parameters whose grad buffer is absent this step (e.g. experts that saw
    no items) keep their value and moments.
    """
    if all(t.grad is None for t in params.values()):
        raise StateError("adam_step before backward: no parameter has a gradient")
    st.step += 1
    k = backend.active
    for name, t in params.items():
        if t.grad is None:
            continue
        k.adam_update(t.size, st.lr, st.beta1, st.beta2, st.eps, st.step,
                      t.grad, st.m[name], st.v[name], t.data)
        t.grad = None


@dataclass
class EpochStats:
    epoch: int
    task_loss: float
    aux_loss: float
    accuracy: float
    histograms: dict[str, list[int]] = field(default_factory=dict)

    def tsv(self) -> str:
        return f"{self.epoch}\t{self.task_loss!r}\t{self.aux_loss!r}\t{self.accuracy!r}"


TSV_HEADER = "epoch\ttask_loss\taux_loss\taccuracy"


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)


def _argmax_row(data, base, k) -> int:
    best, best_j = data[base], 0
    for j in range(1, k):
        if data[base + j] > best:  # ties resolve toward the lower index
            best, best_j = data[base + j], j
    return best_j


def batch_tensors(ds: Dataset, rows: list[int]) -> tuple[Tensor, list[int]]:
    n, h, w, ch = ds.images.shape
    cols = h * w * ch
    buf = _zeros_buf(len(rows) * cols)
    backend.active.gather_rows(len(rows), cols, ds.images.data, array("q", rows), buf)
    return Tensor((len(rows), h, w, ch), buf), [ds.labels[i] for i in rows]


def train_epoch(model: Model, ds: Dataset, batch: int, st: AdamState, rng: Rng,
                report: TrainReport, aux_scale: float = 1.0) -> EpochStats:
    """One pass: seeded shuffle, forward (training mode), backward, Adam."""
    n = len(ds)
    if n == 0:
        raise InputError("dataset is empty")
    if batch > n:
        warnings.warn(f"batch {batch} larger than dataset ({n}); clipping")
        batch = n
    order = list(range(n))
    rng.shuffle(order)

    task_sum = aux_sum = 0.0
    correct = 0
    hists: dict[str, list[int]] = {}
    for start in range(0, n, batch):
        sel = order[start:start + batch]
        images, labels = batch_tensors(ds, sel)
        res = model_forward(model, images, rng, training=True)
        task = cross_entropy(res.logits, labels)
        loss = total_loss(task, ops.scale(res.aux_total, aux_scale))
        backward(loss)
        adam_step(model.params, st)

        bsz = len(sel)
        task_sum += task.item() * bsz
        aux_sum += res.aux_total.item() * bsz
        k = model.cfg.classes
        for i, lab in enumerate(labels):
            if _argmax_row(res.logits.data, i * k, k) == lab:
                correct += 1
        for layer, out in res.outcomes:
            h = out.histogram()
            if layer in hists:
                hists[layer] = [a + b for a, b in zip(hists[layer], h)]
            else:
                hists[layer] = h

    stats = EpochStats(
        epoch=len(report.epochs) + 1,
        task_loss=task_sum / n,
        aux_loss=aux_sum / n,
        accuracy=correct / n,
        histograms=hists,
    )
    report.epochs.append(stats)
    return stats


def evaluate(model: Model, ds: Dataset, batch: int) -> tuple[float, float]:
    """Eval mode (no noise); returns (argmax accuracy, mean task loss)."""
    n = len(ds)
    if n == 0:
        raise InputError("dataset is empty")
    batch = min(batch, n)
    correct = 0
    loss_sum = 0.0
    k = model.cfg.classes
    for start in range(0, n, batch):
        rows = list(range(start, min(start + batch, n)))
        images, labels = batch_tensors(ds, rows)
        res = model_forward(model, images, None, training=False)
        loss_sum += cross_entropy(res.logits, labels).item() * len(rows)
        for i, lab in enumerate(labels):
            if _argmax_row(res.logits.data, i * k, k) == lab:
                correct += 1
    return correct / n, loss_sum / n
