"""Crack-image classifier: one convolution, max pooling, ReLU and a softmax readout.

The layer chain for the default architecture is::

    64x64x1 -conv(F=11, K=100, S=3)-> 18x18x100 -pool(3)-> 6x6x100 -relu-> 3600 -linear-> 12
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data.dataset import TEST, TRAIN, VALIDATION, Dataset
from .errors import ConfigError, InputError, ParameterError, ShapeError
from .tensor import Adam, Tensor, checkpoint, conv2d, conv2d_shape, cross_entropy, flatten, linear, maxpool, \
    no_grad, relu, softmax

N_MODES = 12


@dataclass(frozen=True)
class CnnArchitecture:
    input_size: int = 64
    filter_size: int = 11
    n_filters: int = 100
    stride: int = 3
    padding: int = 0
    pool: int = 3
    n_classes: int = N_MODES

    def shape_chain(self) -> list[tuple[str, tuple]]:
        """``(layer, output shape)`` pairs, channels last, starting from the input."""
        n = self.input_size
        try:
            w2, h2, d2 = conv2d_shape(n, n, 1, self.filter_size, self.stride, self.padding, self.n_filters)
        except ParameterError as exc:
            raise ShapeError(f"layer 'conv': {exc}") from None
        if self.pool < 1 or self.pool > w2:
            raise ShapeError(f"layer 'maxpool': window {self.pool} does not fit the {w2}x{h2} conv output")
        p = (w2 - self.pool) // self.pool + 1
        if self.n_classes < 2:
            raise ShapeError(f"layer 'linear': need at least 2 classes, got {self.n_classes}")
        return [("input", (n, n, 1)), ("conv", (h2, w2, d2)), ("maxpool", (p, p, d2)), ("relu", (p, p, d2)),
                ("flatten", (p * p * d2,)), ("linear", (self.n_classes,))]

    def tag(self) -> str:
        return ("cnn-v1:in{input_size}:f{filter_size}:k{n_filters}:s{stride}:p{padding}:pool{pool}:"
                "out{n_classes}").format(**asdict(self))


@dataclass(frozen=True)
class CnnTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 50
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.batch_size < 1 or self.epochs < 0:
            raise ParameterError(f"invalid CNN training config {self}")


@dataclass
class CnnModel:
    arch: CnnArchitecture
    params: dict
    chain: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.chain is None:
            self.chain = self.arch.shape_chain()

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def forward(self, images) -> Tensor:
        """Logits ``(B, n_classes)`` for images ``(B, H, W)``."""
        x = np.asarray(images)
        if x.ndim == 2:
            x = x[None]
        n = self.arch.input_size
        if x.shape[1:] != (n, n):
            raise ShapeError(f"expected {n}x{n} images, got shape {x.shape[1:]}")
        dtype = self.params["conv_w"].data.dtype
        x = Tensor(x[:, None].astype(dtype, copy=False))
        p = self.params
        h = conv2d(x, p["conv_w"], p["conv_b"], stride=self.arch.stride, padding=self.arch.padding)
        self._check(h, 1, "conv")
        h = maxpool(h, self.arch.pool)
        self._check(h, 2, "maxpool")
        h = relu(h)
        self._check(h, 3, "relu")
        h = flatten(h)
        self._check(h, 4, "flatten")
        out = linear(h, p["fc_w"], p["fc_b"])
        self._check(out, 5, "linear")
        return out

    def _check(self, t: Tensor, k: int, name: str):
        want = self.chain[k][1]
        got = t.shape[1:]
        if t.ndim == 4:
            got = (got[1], got[2], got[0])
        if got != want:
            raise ShapeError(f"layer '{name}' produced {got}, expected {want}")

    def probabilities(self, images) -> np.ndarray:
        with no_grad():
            return softmax(self.forward(images)).data

    def state_dict(self) -> dict:
        return {k: v.data for k, v in self.params.items()}


def build_network(arch: CnnArchitecture = CnnArchitecture(), seed: int = 0, dtype=np.float32) -> CnnModel:
    """He-initialised convolution; the readout starts near zero so initial predictions are close to uniform."""
    chain = arch.shape_chain()
    rng = np.random.default_rng(seed)
    f = arch.filter_size
    flat = chain[4][1][0]
    params = {
        "conv_w": rng.standard_normal((arch.n_filters, 1, f, f)) * np.sqrt(2.0 / (f * f)),
        "conv_b": np.zeros(arch.n_filters),
        "fc_w": rng.standard_normal((arch.n_classes, flat)) * 0.01 * np.sqrt(2.0 / flat),
        "fc_b": np.zeros(arch.n_classes),
    }
    params = {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in params.items()}
    return CnnModel(arch, params, chain)


@dataclass
class ObjectiveCurves:
    epoch: list = field(default_factory=list)
    train_error: list = field(default_factory=list)
    val_error: list = field(default_factory=list)

    def append(self, epoch, train, val):
        self.epoch.append(int(epoch))
        self.train_error.append(float(train))
        self.val_error.append(float(val))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_error", "val_error"])
            for row in zip(self.epoch, self.train_error, self.val_error):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def _targets(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.int64) - 1


def objective(model: CnnModel, images, labels, batch_size: int = 200) -> float:
    """Mean cross-entropy over a set, evaluated without building a graph."""
    if len(labels) == 0:
        return float("nan")
    total = 0.0
    with no_grad():
        for start in range(0, len(labels), batch_size):
            sl = slice(start, start + batch_size)
            loss = cross_entropy(model.forward(images[sl]), _targets(labels[sl]))
            total += float(loss.data) * len(labels[sl])
    return total / len(labels)


def train(model: CnnModel, dataset: Dataset, config: CnnTrainConfig = CnnTrainConfig(),
          callback=None) -> tuple[CnnModel, ObjectiveCurves]:
    """Minimise softmax cross-entropy on the training split with ADAM.

    Curves hold the train/validation objective before training (epoch 0) and
    after every epoch. ``callback(epoch, train_error, val_error)`` is called
    with the same values.
    """
    tr, va = dataset.subset(TRAIN), dataset.subset(VALIDATION)
    if len(tr) == 0 or len(va) == 0:
        raise InputError(f"training needs non-empty train and validation splits (got {len(tr)}, {len(va)})")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.learning_rate)
    curves = ObjectiveCurves()

    def record(epoch):
        t, v = objective(model, tr.images, tr.labels), objective(model, va.images, va.labels)
        curves.append(epoch, t, v)
        if callback is not None:
            callback(epoch, t, v)

    record(0)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(tr))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            loss = cross_entropy(model.forward(tr.images[idx]), _targets(tr.labels[idx]))
            loss.backward()
            opt.step()
        record(epoch)
    return model, curves


def predict(model: CnnModel, images, batch_size: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Modes (1-based, lowest index wins ties) and probability rows."""
    probs = np.concatenate([model.probabilities(images[s:s + batch_size])
                            for s in range(0, len(images), batch_size)]) if len(images) else np.zeros((0, 12))
    return np.argmax(probs, axis=1) + 1, probs


def evaluate(model: CnnModel, dataset: Dataset) -> float:
    """Success rate in percent over every item of ``dataset``."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty set")
    modes, _ = predict(model, dataset.images)
    return 100.0 * np.count_nonzero(modes == dataset.labels) / len(dataset)


def evaluate_test(model: CnnModel, dataset: Dataset) -> float:
    return evaluate(model, dataset.subset(TEST))


def predict_mode(model: CnnModel, image) -> tuple[int, np.ndarray]:
    image = np.asarray(image)
    n = model.arch.input_size
    if image.shape != (n, n):
        raise ShapeError(f"expected a {n}x{n} image, got {image.shape}")
    modes, probs = predict(model, image[None])
    return int(modes[0]), probs[0]


def save_model(model: CnnModel, path) -> None:
    checkpoint.save(path, model.state_dict(), model.arch.tag())


def load_model(path, arch: CnnArchitecture = CnnArchitecture()) -> CnnModel:
    tag, arrays = checkpoint.load(path)
    if tag != arch.tag():
        raise ConfigError(f"checkpoint architecture {tag!r} does not match expected {arch.tag()!r}")
    return CnnModel(arch, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()})


def read_curves(path) -> ObjectiveCurves:
    curves = ObjectiveCurves()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            curves.append(row["epoch"], float(row["train_error"]), float(row["val_error"]))
    return curves


def write_probabilities(path, probs) -> None:
    Path(path).write_text("mode,probability\n" + "".join(f"{k + 1},{p!r}\n" for k, p in enumerate(probs)))
