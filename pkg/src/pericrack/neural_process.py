"""Latent-variable Neural Process for completing crack images from a subset of pixels.

A pixel is a point ``(x1, x2, y)``: column and row scaled to [0, 1] and the
intensity. The encoder maps every point to a 128-d representation, the mean
over a set is the set representation ``r``, and ``r`` parameterises a diagonal
Gaussian over the latent ``z``. The decoder maps ``[z; x*]`` to a Bernoulli
mean for each queried pixel.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, InputError, ParameterError, ShapeError
from .tensor import (Adam, Tensor, add_relu, bce_with_logits, checkpoint, gather_points, gaussian_kl, linear,
                     linear_relu, no_grad, reparam_sample, sigmoid)
from .tensor import ops

BENCHMARK_CONTEXTS = (10, 100, 300, 784)
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class NpArchitecture:
    image_size: int = 28
    hidden: int = 400
    r_dim: int = 128
    z_dim: int = 128
    sigma_min: float = 0.1

    def tag(self) -> str:
        return "np-v1:img{image_size}:h{hidden}:r{r_dim}:z{z_dim}:smin{sigma_min!r}".format(**asdict(self))


@dataclass(frozen=True)
class NpTrainConfig:
    batch_size: int = 128
    epochs: int = 200
    learning_rate: float = 1e-3
    train_samples: int = 1
    eval_samples: int = 20
    context_sizes: tuple = BENCHMARK_CONTEXTS
    monitor_images: int = 8
    monitor_context: int = 100
    seed: int = 0

    def __post_init__(self):
        if (self.batch_size < 1 or self.epochs < 0 or not self.learning_rate > 0 or self.train_samples < 1
                or self.eval_samples < 2 or not self.context_sizes or min(self.context_sizes) < 1):
            raise ParameterError(f"invalid NP training config {self}")


def pixel_grid(size: int) -> np.ndarray:
    """``(size*size, 2)`` coordinates ``(col, row) / (size - 1)`` in row-major pixel order."""
    rows, cols = np.divmod(np.arange(size * size), size)
    return np.stack([cols, rows], axis=1) / (size - 1)


def image_points(image: np.ndarray) -> np.ndarray:
    """All pixels of ``image`` as ``(n, 3)`` points."""
    image = np.asarray(image, dtype=np.float64)
    return np.concatenate([pixel_grid(image.shape[0]), np.clip(image.reshape(-1, 1), 0.0, 1.0)], axis=1)


def sample_context(n_images: int, n_points: int, n_context: int, rng) -> np.ndarray:
    """Sorted context indices ``(n_images, n_context)`` drawn without replacement per image."""
    if not 0 <= n_context <= n_points:
        raise ParameterError(f"context size {n_context} outside [0, {n_points}]")
    if n_context == n_points:
        return np.tile(np.arange(n_points), (n_images, 1))
    return np.sort(np.argsort(rng.random((n_images, n_points)), axis=1)[:, :n_context], axis=1)


class NeuralProcess:
    def __init__(self, arch: NpArchitecture, params: dict):
        self.arch = arch
        self.params = params
        self.grid = pixel_grid(arch.image_size)
        self.sigma_clamps = 0

    # -- parameters ---------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def dtype(self):
        return self.params["enc1_w"].data.dtype

    def state_dict(self) -> dict:
        return {k: v.data for k, v in self.params.items()}

    def _as(self, x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))

    # -- networks --------------------------------------------------------------------
    def encode_points(self, points) -> Tensor:
        """Per-point representations ``(..., n, r_dim)`` for points ``(..., n, 3)``."""
        p = self.params
        h = linear_relu(self._as(points), p["enc1_w"], p["enc1_b"])
        h = linear_relu(h, p["enc2_w"], p["enc2_b"])
        return linear(h, p["enc3_w"], p["enc3_b"])

    def encode_context(self, points) -> Tensor:
        """Mean representation of a non-empty point set ``(..., n, 3)``."""
        points = np.asarray(points) if not isinstance(points, Tensor) else points
        if points.shape[-1] != 3:
            raise ShapeError(f"points must have 3 values (x1, x2, y), got shape {points.shape}")
        if points.shape[-2] == 0:
            raise InputError("cannot encode an empty context; use the prior representation")
        return self.encode_points(points).mean(axis=-2)

    def prior_representation(self, batch: int = None) -> Tensor:
        r0 = self.params["r0"]
        return r0 if batch is None else ops.mul(ops.reshape(r0, (1, -1)), np.ones((batch, 1), dtype=self.dtype))

    def latent_params(self, r) -> tuple[Tensor, Tensor]:
        """``(mu, sigma)`` with ``sigma = s_min + (1 - s_min) * sigmoid(.)``."""
        p = self.params
        r = self._as(r)
        mu = linear(r, p["mu_w"], p["mu_b"])
        smin = self.arch.sigma_min
        sigma = ops.add(ops.mul(sigmoid(linear(r, p["sigma_w"], p["sigma_b"])), 1.0 - smin), smin)
        low = sigma.data < SIGMA_FLOOR
        if low.any():
            self.sigma_clamps += int(low.sum())
            sigma.data = np.maximum(sigma.data, SIGMA_FLOOR)
        return mu, sigma

    def decode_logits(self, z, xstar=None) -> Tensor:
        """Logits ``(..., P)`` for latents ``(..., z_dim)`` at coordinates ``xstar`` ``(P, 2)``.

        The first decoder layer acts on ``[z; x*]``; its ``z`` and ``x*`` halves
        are applied separately and summed so the latent part is computed once
        per sample instead of once per pixel.
        """
        p = self.params
        xstar = self.grid if xstar is None else np.asarray(xstar)
        zd = self.arch.z_dim
        z = self._as(z)
        w1 = p["dec1_w"]
        az = linear(z, ops.getitem(w1, (slice(None), slice(0, zd))), p["dec1_b"])
        ax = linear(self._as(xstar), ops.getitem(w1, (slice(None), slice(zd, None))))
        h = add_relu(ops.reshape(az, z.shape[:-1] + (1, self.arch.hidden)), ax)
        h = linear_relu(h, p["dec2_w"], p["dec2_b"])
        h = linear_relu(h, p["dec3_w"], p["dec3_b"])
        out = linear(h, p["dec4_w"], p["dec4_b"])
        return ops.reshape(out, out.shape[:-1])

    def decode(self, z, xstar=None) -> Tensor:
        return sigmoid(self.decode_logits(z, xstar))

    def decode_means(self, z, xstar=None) -> np.ndarray:
        """Bernoulli means as float64 for latents ``(..., z_dim)``, without a tape.

        Latents are decoded one at a time so each hidden block is ``(P, hidden)``
        and stays in cache; one pass over all of them is about a quarter slower.
        """
        z = np.asarray(z, dtype=self.dtype)
        flat = z.reshape(-1, z.shape[-1])
        with no_grad():
            rows = [self.decode(flat[i:i + 1], xstar).data[0] for i in range(len(flat))]
        return np.stack(rows).astype(np.float64).reshape(z.shape[:-1] + (-1,))

    def representations(self, images: np.ndarray, context_idx: np.ndarray) -> tuple[Tensor, Tensor]:
        """Context and full-image representations, sharing one pass of the encoder."""
        pts = np.concatenate([np.broadcast_to(self.grid, (len(images),) + self.grid.shape),
                              images.reshape(len(images), -1, 1)], axis=2)
        enc = self.encode_points(pts)
        r_t = enc.mean(axis=1)
        if context_idx.shape[1] == 0:
            r_c = self.prior_representation(len(images))
        elif context_idx.shape[1] == pts.shape[1]:
            r_c = r_t
        else:
            r_c = gather_points(enc, context_idx).mean(axis=1)
        return r_c, r_t


def build_np(arch: NpArchitecture = NpArchitecture(), seed: int = 0, dtype=np.float32) -> NeuralProcess:
    """He-initialised weights, zero biases and a zero prior representation."""
    rng = np.random.default_rng(seed)
    h, r, z = arch.hidden, arch.r_dim, arch.z_dim
    shapes = {"enc1": (h, 3), "enc2": (h, h), "enc3": (r, h), "mu": (z, r), "sigma": (z, r),
              "dec1": (h, z + 2), "dec2": (h, h), "dec3": (h, h), "dec4": (1, h)}
    params = {}
    for name, (n_out, n_in) in shapes.items():
        params[f"{name}_w"] = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        params[f"{name}_b"] = np.zeros(n_out)
    params["r0"] = np.zeros(r)
    return NeuralProcess(arch, {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in params.items()})


def _images(model: NeuralProcess, images) -> np.ndarray:
    images = np.asarray(images)
    n = model.arch.image_size
    if images.ndim == 2:
        images = images[None]
    if images.shape[1:] != (n, n):
        raise ShapeError(f"expected {n}x{n} images, got shape {images.shape[1:]}")
    return np.clip(images, 0.0, 1.0).astype(model.dtype)


def elbo(model: NeuralProcess, images, context_idx, noise) -> tuple[Tensor, dict]:
    """Batch-mean ELBO with every pixel as a target.

    ``noise`` is ``(B, S, z_dim)`` standard normals (or an int seed for S=1).
    The likelihood is averaged over the S latent samples and the KL term is
    ``KL(q(z|context, target) || q(z|context))``.
    """
    images = _images(model, images)
    B = len(images)
    context_idx = np.asarray(context_idx, dtype=np.int64).reshape(B, -1)
    if np.isscalar(noise) or isinstance(noise, (int, np.integer)):
        noise = np.random.default_rng(int(noise)).standard_normal((B, 1, model.arch.z_dim))
    noise = np.asarray(noise, dtype=model.dtype)
    if noise.ndim == 2:
        noise = noise[:, None]
    S = noise.shape[1]
    r_c, r_t = model.representations(images, context_idx)
    mu_t, sig_t = model.latent_params(r_t)
    mu_c, sig_c = (mu_t, sig_t) if r_c is r_t else model.latent_params(r_c)
    zd = model.arch.z_dim
    z = reparam_sample(ops.reshape(mu_t, (B, 1, zd)), ops.reshape(sig_t, (B, 1, zd)), noise)
    y = images.reshape(B, 1, -1)
    nll = bce_with_logits(model.decode_logits(z), np.broadcast_to(y, (B, S, y.shape[2])), axis=-1)
    kl = gaussian_kl(mu_t, sig_t, mu_c, sig_c)
    loglik = ops.mul(nll.sum(), -1.0 / (B * S))
    kl_mean = kl.mean()
    value = ops.add(loglik, ops.neg(kl_mean))
    return value, {"loglik": float(loglik.data), "kl": float(kl_mean.data)}


def predict_image(model: NeuralProcess, context_points, n_samples: int = 20, seed: int = 0,
                  xstar=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance maps over ``n_samples`` latents drawn from ``q(z | context)``.

    The variance is the population variance (ddof=0) across samples of the
    decoded Bernoulli mean, so it lies in [0, 0.25]. An empty context uses the
    prior representation.
    """
    if n_samples < 2:
        raise InputError(f"variance needs at least 2 latent samples, got {n_samples}")
    pts = np.asarray(context_points, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    with no_grad():
        r = model.prior_representation() if len(pts) == 0 else model.encode_context(pts.astype(model.dtype))
        mu, sigma = model.latent_params(r)
        noise = rng.standard_normal((n_samples, model.arch.z_dim)).astype(model.dtype)
        probs = model.decode_means(reparam_sample(mu, sigma, noise).data, xstar)
    mean = probs.mean(axis=0)
    var = probs.var(axis=0)
    if xstar is None:
        n = model.arch.image_size
        return mean.reshape(n, n), var.reshape(n, n)
    return mean, var


def predict_batch(model: NeuralProcess, images, context_idx, n_samples: int, seed: int,
                  chunk: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """:func:`predict_image` for a stack of images with per-image context indices.

    Image ``k`` draws its latents from ``seed + k``, so results match
    per-image calls up to floating-point summation order.
    """
    if n_samples < 2:
        raise InputError(f"variance needs at least 2 latent samples, got {n_samples}")
    images = _images(model, images)
    context_idx = np.asarray(context_idx, dtype=np.int64).reshape(len(images), -1)
    zd = model.arch.z_dim
    noise = np.stack([np.random.default_rng(seed + k).standard_normal((n_samples, zd))
                      for k in range(len(images))]).astype(model.dtype)
    means, variances = [], []
    with no_grad():
        for start in range(0, len(images), chunk):
            sl = slice(start, start + chunk)
            batch, idx = images[sl], context_idx[sl]
            if idx.shape[1] == 0:
                r = model.prior_representation(len(batch))
            else:
                pts = np.stack([image_points(img)[i] for img, i in zip(batch, idx)]).astype(model.dtype)
                r = model.encode_context(pts)
            mu, sigma = model.latent_params(r)
            B = len(batch)
            z = reparam_sample(ops.reshape(mu, (B, 1, zd)), ops.reshape(sigma, (B, 1, zd)), noise[sl])
            probs = model.decode_means(z.data)
            means.append(probs.mean(axis=1))
            variances.append(probs.var(axis=1))
    n = model.arch.image_size
    return (np.concatenate(means).reshape(-1, n, n), np.concatenate(variances).reshape(-1, n, n))


def context_sweep(model: NeuralProcess, images, sizes=BENCHMARK_CONTEXTS, n_samples: int = 20,
                  seed: int = 0) -> list[tuple[int, float]]:
    """Mean-map reconstruction MSE against the full image, averaged over images, per context size."""
    images = _images(model, images)
    n_points = model.arch.image_size ** 2
    rows = []
    for n_c in sizes:
        rng = np.random.default_rng([seed, n_c])
        idx = sample_context(len(images), n_points, n_c, rng)
        means, _ = predict_batch(model, images, idx, n_samples, seed)
        rows.append((int(n_c), float(np.mean((means - images) ** 2))))
    return rows


@dataclass
class NpCurves:
    epoch: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    mean_variance: list = field(default_factory=list)
    max_variance: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "elbo", "mean_variance"])
            for e, l, v in zip(self.epoch, self.elbo, self.mean_variance):
                w.writerow([e, repr(l), repr(v)])


def monitor_variance(model: NeuralProcess, images, n_context: int, n_samples: int, seed: int) -> tuple[float, float]:
    """Mean and max predictive variance over ``images`` with a fixed context draw."""
    images = _images(model, images)
    idx = sample_context(len(images), model.arch.image_size ** 2, n_context, np.random.default_rng(seed))
    _, var = predict_batch(model, images, idx, n_samples, seed)
    return float(var.mean()), float(var.max())


def train_np(model: NeuralProcess, images, config: NpTrainConfig = NpTrainConfig(), heldout=None,
             callback=None) -> tuple[NeuralProcess, NpCurves]:
    """Maximise the ELBO with ADAM.

    Every batch draws one context size from ``config.context_sizes``. The
    curves hold, before training (epoch 0) and after each epoch, the ELBO
    averaged over the epoch's batches and the predictive variance on the
    held-out monitor images (fixed contexts and latent draws).
    """
    images = _images(model, images)
    if len(images) == 0:
        raise InputError("no training images")
    heldout = images[:config.monitor_images] if heldout is None else _images(model, heldout)[:config.monitor_images]
    rng = np.random.default_rng(config.seed)
    n_points = model.arch.image_size ** 2
    sizes = [s for s in config.context_sizes if s <= n_points]
    opt = Adam(model.parameters(), lr=config.learning_rate)
    curves = NpCurves()

    def run_epoch(epoch, learn):
        order = rng.permutation(len(images))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = images[order[start:start + config.batch_size]]
            n_c = sizes[rng.integers(len(sizes))]
            idx = sample_context(len(batch), n_points, n_c, rng)
            noise = rng.standard_normal((len(batch), config.train_samples, model.arch.z_dim))
            if learn:
                opt.zero_grad()
                value, _ = elbo(model, batch, idx, noise)
                ops.neg(value).backward()
            else:
                with no_grad():
                    value, _ = elbo(model, batch, idx, noise)
            v = float(value.data)
            if not np.isfinite(v):
                raise DivergenceError(f"non-finite ELBO at epoch {epoch}, batch {b}", step=epoch)
            if learn:
                opt.step()
            total += v * len(batch)
            count += len(batch)
        return total / count

    def record(epoch, value):
        mean_var, max_var = monitor_variance(model, heldout, config.monitor_context, config.eval_samples,
                                             config.seed + 1)
        curves.epoch.append(epoch)
        curves.elbo.append(value)
        curves.mean_variance.append(mean_var)
        curves.max_variance.append(max_var)
        if callback is not None:
            callback(epoch, value, mean_var, max_var)

    record(0, run_epoch(0, learn=False))
    for epoch in range(1, config.epochs + 1):
        record(epoch, run_epoch(epoch, learn=True))
    return model, curves


def save_model(model: NeuralProcess, path) -> None:
    checkpoint.save(path, model.state_dict(), model.arch.tag())


def load_model(path, arch: NpArchitecture = NpArchitecture()) -> NeuralProcess:
    tag, arrays = checkpoint.load(path)
    if tag != arch.tag():
        raise ConfigError(f"checkpoint architecture {tag!r} does not match expected {arch.tag()!r}")
    return NeuralProcess(arch, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()})


def read_curves(path) -> NpCurves:
    curves = NpCurves()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            curves.epoch.append(int(row["epoch"]))
            curves.elbo.append(float(row["elbo"]))
            curves.mean_variance.append(float(row["mean_variance"]))
    return curves
