"""Convolutional encoders that map raw observations to a single latent
scalar: a 2-D image encoder and a 1-D time-series encoder, both ending in
a batch-normalization layer whose output is divided by 2 (so its training
batches have standard deviation 0.5, matching the downstream network's
assumed input range).

Also hosts the MNIST-format IDX file loader/writer and ordinary
least-squares fitting of the true parameter against the latent.
"""

import math
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class BatchNormHalf:
    """Batch normalization (no learned affine) followed by a fixed 1/2
    post-scale.  Training mode normalizes with batch statistics and
    updates the running estimates; inference mode uses the running
    statistics.  Variance is floored at ``var_floor`` to guard degenerate
    batches."""

    def __init__(self, n_features=1, momentum=0.99, var_floor=1e-5):
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.momentum = momentum
        self.var_floor = var_floor

    def __call__(self, x, training):
        if x.data.ndim != 2:
            raise ad.ShapeError("batchnorm expects a (batch, features) tensor")
        if training:
            if x.data.shape[0] < 2:
                raise ad.ShapeError("training-mode batchnorm needs batch >= 2")
            mu = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu
            self.running_var = m * self.running_var + (1 - m) * var
            floored = var <= self.var_floor
            sigma = np.sqrt(np.maximum(var, self.var_floor))
            xhat = (x.data - mu) / sigma
            out = 0.5 * xhat
            B = x.data.shape[0]

            def bwd(g):
                gm = g.mean(axis=0)
                gx = (g * xhat).mean(axis=0)
                d = g - gm - np.where(floored, 0.0, xhat * gx)
                ad._acc(x, (0.5 / sigma) * d)

            return ad._node(out, (x,), bwd)

        sigma = np.sqrt(np.maximum(self.running_var, self.var_floor))
        scale = 0.5 / sigma

        def bwd(g):
            ad._acc(x, scale * g)

        return ad._node(scale * (x.data - self.running_mean), (x,), bwd)


def _normal(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(1.0 / fan_in), shape)


class MnistEncoder:
    """28x28 grayscale image -> scalar latent.

    conv(32 5x5) -> pool2 -> conv(64 5x5) -> pool2 -> fc128 -> fc16 ->
    fc1 -> batchnorm/2, ReLU after each conv and hidden fc layer.  'Same'
    padding keeps the pooled map at 7x7x64 = 3136 before the flatten.
    """

    FLAT = 7 * 7 * 64

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        self.conv1_w = Parameter(_normal(rng, (5, 5, 1, 32), 25))
        self.conv1_b = Parameter(np.zeros(32))
        self.conv2_w = Parameter(_normal(rng, (5, 5, 32, 64), 25 * 32))
        self.conv2_b = Parameter(np.zeros(64))
        self.fc1_w = Parameter(_normal(rng, (self.FLAT, 128), self.FLAT))
        self.fc1_b = Parameter(np.zeros(128))
        self.fc2_w = Parameter(_normal(rng, (128, 16), 128))
        self.fc2_b = Parameter(np.zeros(16))
        self.fc3_w = Parameter(_normal(rng, (16, 1), 16))
        self.fc3_b = Parameter(np.zeros(1))
        self.norm = BatchNormHalf()

    def parameters(self):
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
                self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b,
                self.fc3_w, self.fc3_b]

    def encode(self, images, training=False):
        """images: (B, 28, 28) or (B, 28, 28, 1) floats in [0, 1] -> (B, 1)."""
        if isinstance(images, np.ndarray):
            if images.ndim == 3:
                images = images[..., None]
            images = Tensor(images)
        x = images
        if x.data.shape[1:] != (28, 28, 1):
            raise ad.ShapeError(f"expected (B, 28, 28, 1), got {x.data.shape}")
        h = ad.relu(ad.add(ad.conv2d(x, self.conv1_w), self.conv1_b))
        h = ad.maxpool2d(h, 2)
        h = ad.relu(ad.add(ad.conv2d(h, self.conv2_w), self.conv2_b))
        h = ad.maxpool2d(h, 2)
        h = ad.reshape(h, (h.data.shape[0], self.FLAT))
        h = ad.relu(ad.add(ad.matmul(h, self.fc1_w), self.fc1_b))
        h = ad.relu(ad.add(ad.matmul(h, self.fc2_w), self.fc2_b))
        h = ad.add(ad.matmul(h, self.fc3_w), self.fc3_b)
        return self.norm(h, training)


class DynamicsEncoder:
    """Full observed series (B, T, features) -> scalar latent.

    Two 1-D conv layers (16 filters, length 5), then fc16 -> fc1 ->
    batchnorm/2.  ``t_x`` is fixed at construction; inputs must match.
    """

    def __init__(self, t_x, n_features=2, seed=0):
        rng = np.random.default_rng(seed)
        self.t_x = t_x
        self.n_features = n_features
        self.conv1_w = Parameter(_normal(rng, (5, n_features, 16), 5 * n_features))
        self.conv1_b = Parameter(np.zeros(16))
        self.conv2_w = Parameter(_normal(rng, (5, 16, 16), 5 * 16))
        self.conv2_b = Parameter(np.zeros(16))
        flat = t_x * 16
        self.fc1_w = Parameter(_normal(rng, (flat, 16), flat))
        self.fc1_b = Parameter(np.zeros(16))
        self.fc2_w = Parameter(_normal(rng, (16, 1), 16))
        self.fc2_b = Parameter(np.zeros(1))
        self.norm = BatchNormHalf()

    def parameters(self):
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
                self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]

    def encode(self, series, training=False):
        if isinstance(series, np.ndarray):
            series = Tensor(series)
        if series.data.shape[1:] != (self.t_x, self.n_features):
            raise ad.ShapeError(
                f"expected (B, {self.t_x}, {self.n_features}), "
                f"got {series.data.shape}")
        h = ad.relu(ad.add(ad.conv1d(series, self.conv1_w), self.conv1_b))
        h = ad.relu(ad.add(ad.conv1d(h, self.conv2_w), self.conv2_b))
        h = ad.reshape(h, (h.data.shape[0], self.t_x * 16))
        h = ad.relu(ad.add(ad.matmul(h, self.fc1_w), self.fc1_b))
        h = ad.add(ad.matmul(h, self.fc2_w), self.fc2_b)
        return self.norm(h, training)


def linear_fit(z, param):
    """Ordinary least squares of ``param`` on ``z`` plus the Pearson
    correlation: returns (slope, intercept, r)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    param = np.asarray(param, dtype=float).reshape(-1)
    if z.size != param.size or z.size < 2:
        raise ValueError("need two same-length vectors of length >= 2")
    zc = z - z.mean()
    pc = param - param.mean()
    var_z = float(zc @ zc)
    if var_z == 0.0:
        raise ValueError("zero variance in z")
    slope = float(zc @ pc) / var_z
    intercept = float(param.mean() - slope * z.mean())
    var_p = float(pc @ pc)
    r = float(zc @ pc) / math.sqrt(var_z * var_p) if var_p > 0 else 0.0
    return slope, intercept, r


# ---------------------------------------------------------------------------
# MNIST IDX format
# ---------------------------------------------------------------------------

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


def load_idx_images(path):
    """Read an IDX image file: validates the magic number and counts,
    returns (N, rows, cols) uint8."""
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"{path}: bad image magic {magic}")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count * rows * cols:
        raise ValueError(f"{path}: expected {count * rows * cols} pixels, "
                         f"got {data.size}")
    return data.reshape(count, rows, cols)


def load_idx_labels(path):
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) != 8:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count = struct.unpack(">II", head)
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"{path}: bad label magic {magic}")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count:
        raise ValueError(f"{path}: expected {count} labels, got {data.size}")
    return data


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.size))
        f.write(labels.tobytes())
