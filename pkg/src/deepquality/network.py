"""The patch quality classifier: three conv/ReLU/maxpool stages and two
dense layers mapping a 64x64 luminance patch to five grade logits.

The pooling ladder halves 64 -> 32 -> 16 -> 8, so the flattened feature
length is always 8*8*conv3_channels regardless of configured widths.
"""

from dataclasses import dataclass

import numpy as np

from .grades import NUM_GRADES, QualityGrade
from .nn.layers import (
    ConvLayer,
    DenseLayer,
    Workspace,
    conv2d_backward_batch,
    conv2d_forward_batch,
    dense_backward,
    dense_forward,
    maxpool2_backward_batch,
    maxpool2_forward_batch,
    relu,
    relu_backward,
)
from .nn.loss import softmax

PATCH_SIZE = 64
KERNEL_SIZES = (5, 3, 3)
LUMINANCE_TRANSFORM = "bt601"


@dataclass(frozen=True)
class NetworkConfig:
    conv_channels: tuple = (16, 32, 64)
    fc_hidden: int = 128

    def __post_init__(self):
        if len(self.conv_channels) != 3 or any(c < 1 for c in self.conv_channels):
            raise ValueError(f"conv_channels must be 3 positive ints, got {self.conv_channels}")
        if self.fc_hidden < 1:
            raise ValueError(f"fc_hidden must be positive, got {self.fc_hidden}")

    @property
    def flat_dim(self):
        return (PATCH_SIZE // 8) ** 2 * self.conv_channels[2]


@dataclass
class PatchScore:
    probabilities: np.ndarray
    predicted_grade: QualityGrade


class ForwardCache:
    """Activations retained by a forward pass for the matching backward."""

    __slots__ = ("x", "z1", "p1", "i1", "z2", "p2", "i2", "z3", "p3", "i3",
                 "flat", "h", "n")


class DeepQualityNet:
    def __init__(self, conv1, conv2, conv3, fc1, fc2, config):
        for layer, ksize in zip((conv1, conv2, conv3), KERNEL_SIZES):
            if layer.kernel_size != ksize:
                raise ValueError(f"expected kernel size {ksize}, got {layer.kernel_size}")
        if fc2.out_dim != NUM_GRADES:
            raise ValueError(f"fc2 must output {NUM_GRADES} logits, got {fc2.out_dim}")
        if fc1.in_dim != config.flat_dim:
            raise ValueError(f"fc1 in_dim {fc1.in_dim} != flattened conv output {config.flat_dim}")
        self.conv1, self.conv2, self.conv3 = conv1, conv2, conv3
        self.fc1, self.fc2 = fc1, fc2
        self.config = config

    @property
    def dtype(self):
        return self.conv1.kernels.dtype

    def parameters(self):
        """Named parameter arrays in declaration order (ten groups)."""
        return {
            "conv1.kernels": self.conv1.kernels, "conv1.bias": self.conv1.bias,
            "conv2.kernels": self.conv2.kernels, "conv2.bias": self.conv2.bias,
            "conv3.kernels": self.conv3.kernels, "conv3.bias": self.conv3.bias,
            "fc1.weights": self.fc1.weights, "fc1.bias": self.fc1.bias,
            "fc2.weights": self.fc2.weights, "fc2.bias": self.fc2.bias,
        }

    def astype(self, dtype):
        return DeepQualityNet(
            ConvLayer(self.conv1.kernels.astype(dtype), self.conv1.bias.astype(dtype)),
            ConvLayer(self.conv2.kernels.astype(dtype), self.conv2.bias.astype(dtype)),
            ConvLayer(self.conv3.kernels.astype(dtype), self.conv3.bias.astype(dtype)),
            DenseLayer(self.fc1.weights.astype(dtype), self.fc1.bias.astype(dtype)),
            DenseLayer(self.fc2.weights.astype(dtype), self.fc2.bias.astype(dtype)),
            self.config,
        )

    def copy(self):
        return self.astype(self.dtype)

    def forward_batch(self, x, ws=None, keep=False):
        """Logits for a batch (N, 1, 64, 64); keep=True also returns the
        activation cache needed by backward_batch."""
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != (1, PATCH_SIZE, PATCH_SIZE):
            raise ValueError(f"expected patches of shape (N, 1, {PATCH_SIZE}, {PATCH_SIZE}), "
                             f"got {x.shape}")
        ws = ws or Workspace()
        c = ForwardCache()
        c.x = x
        c.n = x.shape[0]
        c.z1 = conv2d_forward_batch(x, self.conv1, ws)
        c.p1, c.i1 = maxpool2_forward_batch(relu(c.z1))
        c.z2 = conv2d_forward_batch(c.p1, self.conv2, ws)
        c.p2, c.i2 = maxpool2_forward_batch(relu(c.z2))
        c.z3 = conv2d_forward_batch(c.p2, self.conv3, ws)
        c.p3, c.i3 = maxpool2_forward_batch(relu(c.z3))
        c.flat = c.p3.reshape(c.n, -1)
        c.h = dense_forward(c.flat, self.fc1)
        logits = dense_forward(relu(c.h), self.fc2)
        if keep:
            return logits, c
        return logits

    def backward_batch(self, cache, grad_logits, ws=None):
        """Named parameter gradients from a cached forward pass."""
        ws = ws or Workspace()
        g, gw2, gb2 = dense_backward(grad_logits, relu(cache.h), self.fc2)
        g = relu_backward(g, cache.h)
        g, gw1, gb1 = dense_backward(g, cache.flat, self.fc1)
        g = g.reshape(cache.p3.shape)
        g = maxpool2_backward_batch(g, cache.i3)
        g = relu_backward(g, cache.z3)
        g, gk3, gb3 = conv2d_backward_batch(g, cache.p2, self.conv3, ws)
        g = maxpool2_backward_batch(g, cache.i2)
        g = relu_backward(g, cache.z2)
        g, gk2, gb2c = conv2d_backward_batch(g, cache.p1, self.conv2, ws)
        g = maxpool2_backward_batch(g, cache.i1)
        g = relu_backward(g, cache.z1)
        _, gk1, gb1c = conv2d_backward_batch(g, cache.x, self.conv1, ws)
        return {
            "conv1.kernels": gk1, "conv1.bias": gb1c,
            "conv2.kernels": gk2, "conv2.bias": gb2c,
            "conv3.kernels": gk3, "conv3.bias": gb3,
            "fc1.weights": gw1, "fc1.bias": gb1,
            "fc2.weights": gw2, "fc2.bias": gb2,
        }

    def forward(self, patch, ws=None):
        """Logits for one patch (1, 64, 64) with values in [0, 1]."""
        patch = np.asarray(patch)
        if patch.shape != (1, PATCH_SIZE, PATCH_SIZE):
            raise ValueError(f"expected patch of shape (1, {PATCH_SIZE}, {PATCH_SIZE}), "
                             f"got {patch.shape}")
        if patch.min() < 0 or patch.max() > 1:
            raise ValueError("patch values must lie in [0, 1]")
        return self.forward_batch(patch[None], ws)[0]


def init_network(seed, config=None, dtype=np.float32):
    """He-initialized network, fully determined by the seed.

    Weights are zero-mean Gaussian with std sqrt(2/fan_in); biases are zero.
    """
    config = config or NetworkConfig()
    rng = np.random.default_rng(seed)
    c1, c2, c3 = config.conv_channels

    def he_conv(out_c, in_c, k):
        std = np.sqrt(2.0 / (in_c * k * k))
        return (rng.standard_normal((out_c, in_c, k, k)) * std).astype(dtype)

    def he_dense(out_d, in_d):
        std = np.sqrt(2.0 / in_d)
        return (rng.standard_normal((out_d, in_d)) * std).astype(dtype)

    zeros = lambda n: np.zeros(n, dtype=dtype)
    return DeepQualityNet(
        ConvLayer(he_conv(c1, 1, 5), zeros(c1)),
        ConvLayer(he_conv(c2, c1, 3), zeros(c2)),
        ConvLayer(he_conv(c3, c2, 3), zeros(c3)),
        DenseLayer(he_dense(config.fc_hidden, config.flat_dim), zeros(config.fc_hidden)),
        DenseLayer(he_dense(NUM_GRADES, config.fc_hidden), zeros(NUM_GRADES)),
        config,
    )


def predict(net, patch, ws=None):
    """Class probabilities and argmax grade for one patch."""
    probs = softmax(net.forward(patch, ws))
    return PatchScore(probs, QualityGrade(int(np.argmax(probs))))


def predict_batch(net, patches, ws=None, batch_size=256):
    """Probabilities (N, 5) and grades (N,) for many patches, chunked."""
    patches = np.asarray(patches)
    probs = np.empty((patches.shape[0], NUM_GRADES), dtype=np.float64)
    for start in range(0, patches.shape[0], batch_size):
        chunk = patches[start:start + batch_size]
        probs[start:start + chunk.shape[0]] = softmax(net.forward_batch(chunk, ws))
    return probs, np.argmax(probs, axis=1)
