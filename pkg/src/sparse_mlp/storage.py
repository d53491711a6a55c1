"""Bit-exact file formats: tensor container, dataset directory, checkpoint.

TensorFile layout (little-endian throughout):
    magic   4 bytes  ASCII "TNS1"
    rank    uint32   1..4
    dims    rank * uint32
    payload product(dims) * IEEE-754 binary32, row-major

In-memory values are float64; writes round to nearest-even binary32, reads
widen exactly.  A checkpoint directory holds one TensorFile per parameter and
per Adam moment plus manifest.txt; saving also rounds the live parameters
through binary32 so an uninterrupted run stays bitwise-identical to a
save/resume run.
"""

import struct
from pathlib import Path

from .config import ModelConfig, parse_config, serialize_config
from .errors import CheckpointError, FormatError, InputError
from .rng import Rng
from .tensor import Tensor

MAGIC = b"TNS1"
MANIFEST_HEADER = "sparse-mlp-checkpoint 1"


def write_tensor(t: Tensor, path) -> None:
    payload = struct.pack(f"<{t.size}f", *t.data)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", t.rank))
        fh.write(struct.pack(f"<{t.rank}I", *t.shape))
        fh.write(payload)


def read_tensor(path) -> Tensor:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (expected {MAGIC!r})")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if not 1 <= rank <= 4:
        raise FormatError(f"{path}: rank {rank} out of range 1..4 at byte 4")
    head = 8 + 4 * rank
    if len(blob) < head:
        raise FormatError(f"{path}: truncated dims at byte {len(blob)}")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero dimension at byte 8")
    count = 1
    for d in dims:
        count *= d
    expected = head + 4 * count
    if len(blob) < expected:
        raise FormatError(f"{path}: truncated payload at byte {len(blob)} (need {expected})")
    if len(blob) > expected:
        raise FormatError(f"{path}: trailing data at byte {expected}")
    values = struct.unpack_from(f"<{count}f", blob, head)
    from array import array

    return Tensor(dims, array("d", values))


def quantize_f32(t: Tensor) -> None:
    """Round the buffer through binary32 in place (round-to-nearest-even)."""
    packed = struct.pack(f"<{t.size}f", *t.data)
    for i, v in enumerate(struct.unpack(f"<{t.size}f", packed)):
        t.data[i] = v


# --- dataset directory -------------------------------------------------------

class Dataset:
    """Images (N,H,W,Ch) in [0,1] plus integer labels below `classes`."""

    def __init__(self, images: Tensor, labels: list[int], classes: int):
        if images.rank != 4:
            raise InputError(f"images must be (N,H,W,Ch), got {images.shape}")
        if len(labels) != images.shape[0]:
            raise InputError(
                f"{images.shape[0]} images but {len(labels)} labels")
        for i, lab in enumerate(labels):
            if not 0 <= lab < classes:
                raise InputError(f"label {lab} at index {i} outside 0..{classes - 1}")
        self.images = images
        self.labels = labels
        self.classes = classes

    def __len__(self) -> int:
        return self.images.shape[0]


def write_dataset(ds: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(ds.images, directory / "images.tns")
    from array import array

    labels = Tensor((len(ds.labels),), array("d", (float(v) for v in ds.labels)))
    write_tensor(labels, directory / "labels.tns")


def read_dataset(directory, classes: int) -> Dataset:
    directory = Path(directory)
    images = read_tensor(directory / "images.tns")
    labels_t = read_tensor(directory / "labels.tns")
    if labels_t.rank != 1 or labels_t.shape[0] != images.shape[0]:
        raise FormatError(
            f"labels shape {labels_t.shape} does not match {images.shape[0]} images")
    labels = []
    for v in labels_t.data:
        if v != int(v):
            raise FormatError(f"non-integral label {v}")
        labels.append(int(v))
    return Dataset(images, labels, classes)


# --- checkpoint ---------------------------------------------------------------

def save_checkpoint(model, optim, rng: Rng, directory) -> None:
    """Write params/moments/manifest; the live model is rounded to match disk."""
    from .train import AdamState

    assert isinstance(optim, AdamState)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(model.params)
    for name in names:
        t = model.params[name]
        quantize_f32(t)
        write_tensor(t, directory / f"{name}.tns")
        for tag, buf in (("m", optim.m[name]), ("v", optim.v[name])):
            mt = Tensor(t.shape, buf)
            quantize_f32(mt)
            write_tensor(mt, directory / f"{name}.{tag}.tns")
    lines = [MANIFEST_HEADER,
             f"step {optim.step}",
             f"rng_state {rng.state}",
             "[config]"]
    lines.extend(serialize_config(model.cfg).splitlines())
    lines.append("[params]")
    lines.extend(names)
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(directory):
    """Returns (model, AdamState, Rng); fails without partial effects."""
    from .arch import build_model
    from .train import AdamState

    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise CheckpointError(f"{directory}: missing manifest.txt")
    lines = manifest.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise CheckpointError(f"{directory}: unrecognized manifest header")
    try:
        step = int(lines[1].split()[1])
        rng_state = int(lines[2].split()[1])
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{directory}: malformed manifest") from exc
    try:
        cfg_at = lines.index("[config]")
        par_at = lines.index("[params]")
    except ValueError as exc:
        raise CheckpointError(f"{directory}: manifest sections missing") from exc
    cfg: ModelConfig = parse_config("\n".join(lines[cfg_at + 1:par_at]))
    names = [ln for ln in lines[par_at + 1:] if ln]

    model = build_model(cfg, Rng(0))
    expected = list(model.params)
    if names != expected:
        raise CheckpointError(
            f"{directory}: manifest parameter list does not match the config's model")

    # stage everything before touching the model: no partial loads
    staged = {}
    for name in names:
        t = model.params[name]
        loaded = read_tensor(directory / f"{name}.tns")
        if loaded.shape != t.shape:
            raise CheckpointError(
                f"{directory}: {name} has shape {loaded.shape}, expected {t.shape}")
        mom = {}
        for tag in ("m", "v"):
            mt = read_tensor(directory / f"{name}.{tag}.tns")
            if mt.shape != t.shape:
                raise CheckpointError(
                    f"{directory}: {name}.{tag} has shape {mt.shape}, expected {t.shape}")
            mom[tag] = mt.data
        staged[name] = (loaded.data, mom)

    optim = AdamState.init(model.params, lr=cfg.lr)
    optim.step = step
    for name, (data, mom) in staged.items():
        model.params[name].data[:] = data
        optim.m[name][:] = mom["m"]
        optim.v[name][:] = mom["v"]
    return model, optim, Rng(rng_state)
