"""Shallow CNN classifiers for single-modality and fused feature maps.

Both kinds share one layout::

    conv (c filters of 1x1, or 1x1x2 over the modality axis)
    -> batch norm -> leaky ReLU -> 2x2 max pool, stride 1
    -> flatten -> fc1 (256) -> leaky ReLU -> dropout
    -> fc2 (128) -> leaky ReLU -> dropout -> linear (2) -> softmax

Inputs are batched as (N, W, H, C) for ``single_modality`` and
(N, W, H, 2, C) for ``dual_modality``. Everything is plain numpy with
hand-written backward passes.
"""

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _backend, tensorio
from .dataprep import balanced_batches
from .errors import FormatError, InvalidInput, InvalidState, NumericalFailure

KINDS = ("single_modality", "dual_modality")
PARAM_NAMES = (
    "conv_w", "bn_gamma", "bn_beta",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b", "out_w", "out_b",
)
BUFFER_NAMES = ("bn_mean", "bn_var")


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    input_shape: tuple
    fc1: int = 256
    fc2: int = 128
    n_classes: int = 2
    dropout: float = 0.5
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.kind not in KINDS:
            raise InvalidInput(f"kind must be one of {KINDS}, got {self.kind!r}")
        want = 3 if self.kind == "single_modality" else 4
        if len(self.input_shape) != want:
            raise InvalidInput(f"{self.kind} expects a rank-{want} input shape, got {self.input_shape}")
        if self.kind == "dual_modality" and self.input_shape[2] != 2:
            raise InvalidInput(f"dual_modality input must have 2 modalities, got {self.input_shape}")
        w, h = self.input_shape[:2]
        if w < 2 or h < 2:
            raise InvalidInput(f"spatial size {w}x{h} is too small for a 2x2 pool")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInput("dropout must lie in [0, 1)")

    @classmethod
    def for_input(cls, input_shape, **kw):
        kind = "dual_modality" if len(input_shape) == 4 else "single_modality"
        return cls(kind, tuple(input_shape), **kw)

    @property
    def channels(self):
        return self.input_shape[-1]

    @property
    def pooled_shape(self):
        w, h = self.input_shape[:2]
        return (w - 1, h - 1, self.channels)

    @property
    def flat_dim(self):
        return int(np.prod(self.pooled_shape))

    def param_shapes(self):
        c = self.channels
        conv = (c, c) if self.kind == "single_modality" else (2, c, c)
        return {
            "conv_w": conv,
            "bn_gamma": (c,),
            "bn_beta": (c,),
            "fc1_w": (self.flat_dim, self.fc1),
            "fc1_b": (self.fc1,),
            "fc2_w": (self.fc1, self.fc2),
            "fc2_b": (self.fc2,),
            "out_w": (self.fc2, self.n_classes),
            "out_b": (self.n_classes,),
        }


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidInput("learning rate must be non-negative")
        if self.epochs < 1:
            raise InvalidInput("epochs must be >= 1")


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    predicted_class: int
    confidence: float

    @classmethod
    def from_probs(cls, probs):
        probs = np.asarray(probs, dtype=np.float64)
        k = int(np.argmax(probs))
        return cls(probs, k, float(probs[k]))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, labels):
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


class ShallowCNN:
    """One classifier instance: parameters, batch-norm buffers and the last train cache."""

    def __init__(self, spec, params=None, buffers=None, seed=0):
        self.spec = spec
        shapes = spec.param_shapes()
        if params is None:
            params = self._init_params(shapes, np.random.default_rng(seed))
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise InvalidInput(f"missing parameters {sorted(missing)}")
        self.params = {}
        for name in PARAM_NAMES:
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise InvalidInput(f"{name} has shape {arr.shape}, expected {shapes[name]}")
            self.params[name] = arr
        c = spec.channels
        buffers = buffers or {"bn_mean": np.zeros(c), "bn_var": np.ones(c)}
        self.buffers = {k: np.array(buffers[k], dtype=np.float64) for k in BUFFER_NAMES}
        self._cache = None

    @staticmethod
    def _init_params(shapes, rng):
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); batch norm starts as identity
        params = {"bn_gamma": np.ones(shapes["bn_gamma"]), "bn_beta": np.zeros(shapes["bn_beta"])}
        for name in ("conv_w", "fc1_w", "fc2_w", "out_w"):
            shape = shapes[name]
            bound = 1.0 / np.sqrt(np.prod(shape[:-1]))
            params[name] = rng.uniform(-bound, bound, shape)
            bias = name.replace("_w", "_b")
            if bias in shapes:
                params[bias] = rng.uniform(-bound, bound, shapes[bias])
        return params

    def copy(self):
        return ShallowCNN(
            self.spec,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] == self.spec.input_shape:
            return x
        if x.shape == self.spec.input_shape:
            return x[None]
        raise InvalidInput(
            f"input shape {x.shape} does not match {self.spec.kind} classifier "
            f"expecting (N,) + {self.spec.input_shape}"
        )

    def _conv(self, x):
        n = x.shape[0]
        w, h = self.spec.input_shape[:2]
        c = self.spec.channels
        flat = x.reshape(n * w * h, -1)
        return (flat @ self.params["conv_w"].reshape(-1, c)).reshape(n, w, h, c)

    def _leaky(self, x):
        return np.where(x > 0, x, self.spec.leaky_slope * x)

    def _leaky_grad(self, x):
        return np.where(x > 0, 1.0, self.spec.leaky_slope)

    def forward(self, x, mode="eval", rng=None, dropout=True, freeze_bn=False,
                bn_stats=None, update_stats=True):
        """Class probabilities for a batch, shape (N, n_classes).

        ``mode="train"`` caches activations for :meth:`backward`, applies
        dropout (unless ``dropout=False``) and normalises with batch
        statistics (unless ``freeze_bn``), updating the running estimates
        when ``update_stats``. ``bn_stats=(mean, var)`` overrides the
        statistics used for normalisation in either mode.
        """
        if mode not in ("train", "eval"):
            raise InvalidInput(f"mode must be 'train' or 'eval', got {mode!r}")
        x = self._check_input(x)
        p, s = self.params, self.spec
        train = mode == "train"
        self._cache = None

        z = self._conv(x)
        batch_stats = train and not freeze_bn and bn_stats is None
        if bn_stats is not None:
            mean, var = bn_stats
        elif batch_stats:
            mean = z.mean(axis=(0, 1, 2))
            var = z.var(axis=(0, 1, 2))
            if update_stats:
                m = z.size // z.shape[-1]
                unbiased = var * m / max(m - 1, 1)
                mom = s.bn_momentum
                self.buffers["bn_mean"] = (1 - mom) * self.buffers["bn_mean"] + mom * mean
                self.buffers["bn_var"] = (1 - mom) * self.buffers["bn_var"] + mom * unbiased
        else:
            mean, var = self.buffers["bn_mean"], self.buffers["bn_var"]
        inv_std = 1.0 / np.sqrt(var + s.bn_eps)
        xhat = (z - mean) * inv_std
        y = p["bn_gamma"] * xhat + p["bn_beta"]
        a = self._leaky(y)
        pooled, pool_idx = _backend.maxpool2x2_forward(np.ascontiguousarray(a))
        f = pooled.reshape(len(x), -1)

        h1 = f @ p["fc1_w"] + p["fc1_b"]
        g1 = self._leaky(h1)
        h2_in, m1 = self._dropout(g1, train and dropout, rng)
        h2 = h2_in @ p["fc2_w"] + p["fc2_b"]
        g2 = self._leaky(h2)
        out_in, m2 = self._dropout(g2, train and dropout, rng)
        logits = out_in @ p["out_w"] + p["out_b"]
        probs = softmax(logits)

        if train:
            self._cache = dict(
                x=x, xhat=xhat, inv_std=inv_std, batch_stats=batch_stats, y=y,
                pool_idx=pool_idx, f=f, h1=h1, h2_in=h2_in, m1=m1, h2=h2,
                out_in=out_in, m2=m2, probs=probs,
            )
        return probs

    def _dropout(self, a, active, rng):
        rate = self.spec.dropout
        if not active or rate == 0.0:
            return a, None
        if rng is None:
            raise InvalidInput("train-mode dropout needs an rng")
        mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
        return a * mask, mask

    def backward(self, labels):
        """Gradients of the mean cross-entropy for the batch cached by the last train forward."""
        cache = self._cache
        if cache is None:
            raise InvalidState("no cached activations: run forward(mode='train') on this batch first")
        labels = np.asarray(labels, dtype=np.int64)
        n = cache["x"].shape[0]
        if labels.shape != (n,):
            raise InvalidInput(f"expected {n} labels, got shape {labels.shape}")
        self._cache = None
        p, s = self.params, self.spec
        grads = {}

        d_logits = cache["probs"].copy()
        d_logits[np.arange(n), labels] -= 1.0
        d_logits /= n
        grads["out_w"] = cache["out_in"].T @ d_logits
        grads["out_b"] = d_logits.sum(axis=0)

        d = d_logits @ p["out_w"].T
        if cache["m2"] is not None:
            d = d * cache["m2"]
        d = d * self._leaky_grad(cache["h2"])
        grads["fc2_w"] = cache["h2_in"].T @ d
        grads["fc2_b"] = d.sum(axis=0)

        d = d @ p["fc2_w"].T
        if cache["m1"] is not None:
            d = d * cache["m1"]
        d = d * self._leaky_grad(cache["h1"])
        grads["fc1_w"] = cache["f"].T @ d
        grads["fc1_b"] = d.sum(axis=0)

        d = (d @ p["fc1_w"].T).reshape((n,) + s.pooled_shape)
        d = _backend.maxpool2x2_backward(np.ascontiguousarray(d), cache["pool_idx"])
        d = d * self._leaky_grad(cache["y"])
        xhat = cache["xhat"]
        grads["bn_gamma"] = (d * xhat).sum(axis=(0, 1, 2))
        grads["bn_beta"] = d.sum(axis=(0, 1, 2))

        dxhat = d * p["bn_gamma"]
        if cache["batch_stats"]:
            m = dxhat.size // dxhat.shape[-1]
            dz = cache["inv_std"] / m * (
                m * dxhat
                - dxhat.sum(axis=(0, 1, 2))
                - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
            )
        else:
            dz = dxhat * cache["inv_std"]
        c = s.channels
        x_flat = cache["x"].reshape(dz.size // c, -1)
        grads["conv_w"] = (x_flat.T @ dz.reshape(-1, c)).reshape(p["conv_w"].shape)
        return grads

    # -- inference ------------------------------------------------------------

    def predict_proba(self, x, chunk=512):
        x = self._check_input(x)
        out = [self.forward(x[i:i + chunk], mode="eval") for i in range(0, len(x), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.spec.n_classes))

    def predict(self, x):
        """Eval-mode predictions, one :class:`Prediction` per sample."""
        return [Prediction.from_probs(row) for row in self.predict_proba(x)]

    def dataset_stats(self, x, chunk=256):
        """Mean and (biased) variance of the conv outputs over a whole dataset, in chunks."""
        x = self._check_input(x)
        c = self.spec.channels
        total = np.zeros(c)
        total_sq = np.zeros(c)
        count = 0
        for i in range(0, len(x), chunk):
            z = self._conv(x[i:i + chunk])
            total += z.sum(axis=(0, 1, 2))
            total_sq += (z * z).sum(axis=(0, 1, 2))
            count += z.size // c
        mean = total / count
        return mean, np.maximum(total_sq / count - mean * mean, 0.0)

    def dataset_loss(self, x, labels, chunk=256):
        """Training objective over a full dataset: no dropout, batch norm with full-set statistics."""
        x = self._check_input(x)
        labels = np.asarray(labels, dtype=np.int64)
        stats = self.dataset_stats(x, chunk)
        total = 0.0
        for i in range(0, len(x), chunk):
            probs = self.forward(x[i:i + chunk], mode="eval", bn_stats=stats)
            total += cross_entropy(probs, labels[i:i + chunk]) * len(probs)
        return total / len(x)

    # -- persistence --------------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, arr in {**self.params, **self.buffers}.items():
            tensorio.write(directory / f"{name}.tnsr", arr)
        desc = asdict(self.spec)
        desc["input_shape"] = list(self.spec.input_shape)
        desc["tensors"] = list(PARAM_NAMES + BUFFER_NAMES)
        (directory / "spec.json").write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            desc = json.loads((directory / "spec.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"{directory}: unreadable spec.json ({exc})") from exc
        desc.pop("tensors", None)
        spec = ClassifierSpec(**desc)
        tensors = {n: tensorio.read(directory / f"{n}.tnsr") for n in PARAM_NAMES + BUFFER_NAMES}
        params = {n: tensors[n] for n in PARAM_NAMES}
        buffers = {n: tensors[n] for n in BUFFER_NAMES}
        return cls(spec, params, buffers)


class Adam:
    def __init__(self, cfg):
        self.cfg = cfg
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.get(name, 0.0) * c.beta1 + (1 - c.beta1) * g
            v = self.v.get(name, 0.0) * c.beta2 + (1 - c.beta2) * g * g
            self.m[name], self.v[name] = m, v
            params[name] -= c.lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)


def train(spec, inputs, labels, cfg=None, model=None):
    """Fit a classifier with Adam on balanced mini-batches.

    Returns ``(model, trace)`` where ``trace[e]`` is the full-dataset
    training loss (see :meth:`ShallowCNN.dataset_loss`) after epoch ``e``.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise InvalidInput("empty training set")
    if len(x) != len(y):
        raise InvalidInput(f"{len(x)} inputs but {len(y)} labels")
    if set(np.unique(y)) != {0, 1}:
        raise InvalidInput("training needs both classes present")
    model = model or ShallowCNN(spec, seed=cfg.seed)
    model._check_input(x[:1])
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(cfg)
    trace = []
    for epoch in range(cfg.epochs):
        for idx in balanced_batches(y, cfg.batch_size, seed=cfg.seed, epoch=epoch):
            probs = model.forward(x[idx], mode="train", rng=rng)
            loss = cross_entropy(probs, y[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(probs)):
                raise NumericalFailure(f"non-finite training loss in epoch {epoch + 1}")
            grads = model.backward(y[idx])
            opt.step(model.params, grads)
        epoch_loss = model.dataset_loss(x, y)
        if not np.isfinite(epoch_loss):
            raise NumericalFailure(f"non-finite training loss in epoch {epoch + 1}")
        trace.append(epoch_loss)
    return model, trace


def write_loss_trace(path, trace):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(trace, start=1):
            w.writerow([i, repr(float(loss))])
