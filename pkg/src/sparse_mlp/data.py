"""Dataset loading and the built-in synthetic classification task.

Synthetic recipe (seeded, fully documented): class c of K gets the fixed
grating

    pattern_c(i, j) = sin(2*pi*f*(i*cos(theta_c) + j*sin(theta_c)) / hw)

with theta_c = pi*c/K and f = 2.0; a pixel is clip(0.5 + 0.35*pattern +
noise*eps, 0, 1) with per-pixel standard gaussian eps.  Labels are round-robin
(i mod K) unless ``skew`` is set, in which case each label is drawn with
P(class 0) = skew and the rest uniform -- the skewed stream used to study
load balance.  RNG consumption order: all labels first (skewed mode only),
then per-sample pixel noise in sample order.

A data spec is either a dataset directory (images.tns + labels.tns) or a URI
like ``synth:K=4,n=512,hw=8`` with optional ``ch=``, ``noise=``, ``skew=``.
"""

import math
from array import array

from .errors import InputError
from .rng import Rng
from .storage import Dataset, read_dataset
from .tensor import Tensor

SYNTH_DEFAULTS = {"K": 4, "n": 512, "hw": 8, "ch": 1, "noise": 0.05, "skew": 0.0}


def parse_synth_uri(uri: str) -> dict:
    body = uri[len("synth:"):]
    params = dict(SYNTH_DEFAULTS)
    if body:
        for part in body.split(","):
            key, eq, value = part.partition("=")
            key = key.strip()
            if not eq or key not in params:
                raise InputError(f"bad synth parameter {part!r} "
                                 f"(known: {', '.join(SYNTH_DEFAULTS)})")
            params[key] = float(value) if key in ("noise", "skew") else int(value)
    if params["K"] < 1 or params["n"] < 1 or params["hw"] < 1 or params["ch"] < 1:
        raise InputError("synth K, n, hw, ch must be positive")
    if not 0.0 <= params["skew"] <= 1.0:
        raise InputError("synth skew must be in [0, 1]")
    return params


def synth_dataset(rng: Rng, k: int, n: int, hw: int, ch: int = 1,
                  noise: float = 0.05, skew: float = 0.0) -> Dataset:
    if skew > 0.0:
        labels = []
        for _ in range(n):
            u = rng.uniform(1)[0]
            if u < skew or k == 1:
                labels.append(0)
            else:
                rest = (u - skew) / (1.0 - skew)
                labels.append(1 + min(k - 2, int(rest * (k - 1))))
    else:
        labels = [i % k for i in range(n)]

    pixels = array("d", bytes(8 * n * hw * hw * ch))
    freq = 2.0
    pos = 0
    for s in range(n):
        theta = math.pi * labels[s] / k
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        eps = rng.gaussian(hw * hw * ch)
        e = 0
        for i in range(hw):
            for j in range(hw):
                base = math.sin(2.0 * math.pi * freq * (i * cos_t + j * sin_t) / hw)
                for _ in range(ch):
                    v = 0.5 + 0.35 * base + noise * eps[e]
                    pixels[pos] = min(1.0, max(0.0, v))
                    pos += 1
                    e += 1
    images = Tensor((n, hw, hw, ch), pixels)
    return Dataset(images, labels, k)


def load_data_spec(spec: str, classes: int, rng: Rng) -> Dataset:
    """Dataset directory path, or a synth: URI generated with `rng`."""
    if spec.startswith("synth:") or spec == "synth":
        params = parse_synth_uri(spec if spec.startswith("synth:") else "synth:")
        if params["K"] != classes:
            raise InputError(
                f"synth K={params['K']} but the model has {classes} classes")
        return synth_dataset(rng, params["K"], params["n"], params["hw"],
                             params["ch"], params["noise"], params["skew"])
    return read_dataset(spec, classes)
