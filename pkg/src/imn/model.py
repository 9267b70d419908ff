"""The hypernetwork classifier: encoder, weight decoder, bias generator.

The model never predicts directly. A convolutional encoder compresses
the (C, L) input into latent maps, a transition decoder upsamples them
back into a per-input weight map W of shape (K, C, L), and a pooled
linear head emits the K biases. The logit for class k is then the plain
linear readout sum(W[k] * X) + b[k], which is what makes every
prediction exactly decomposable into per-sample contributions.

Two formulations share the architecture: categorical (K >= 2, softmax)
and binary (K == 1, sigmoid). The "direct" variant replaces the decoder
with a 1x1 projection at latent resolution plus nearest replication; it
exists to measure how much the learned upsampling path matters.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict
import numpy as np

from . import tensor as T
from .tensor import Tensor, check_finite

CHECKPOINT_MAGIC = b"IMNCKPT1"
CHECKPOINT_VERSION = 1

VARIANT_TRANSNET = "transnet"
VARIANT_DIRECT = "direct"


class ModelError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ImnConfig:
    """Architecture hyperparameters; every parameter shape follows from these."""

    num_leads: int = 12
    signal_length: int = 256
    num_outputs: int = 1
    lambda_l1: float = 1e-4
    encoder_channels: tuple[int, int, int] = (16, 32, 64)
    encoder_kernel: tuple[int, int] = (3, 15)
    decoder_kernel: tuple[int, int] = (3, 3)
    pool_factor: int = 2

    def __post_init__(self):
        total_pool = self.pool_factor ** 2
        if self.signal_length % total_pool != 0:
            raise ModelError(
                f"signal length {self.signal_length} must be divisible by {total_pool}")
        if self.num_leads < 1:
            raise ModelError("need at least one lead")
        if self.num_outputs < 1:
            raise ModelError("need at least one output")
        if self.lambda_l1 < 0:
            raise ModelError("lambda_l1 must be non-negative")

    @property
    def formulation(self) -> str:
        return "binary" if self.num_outputs == 1 else "categorical"

    @property
    def latent_length(self) -> int:
        return self.signal_length // self.pool_factor ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["encoder_kernel"] = list(self.encoder_kernel)
        d["decoder_kernel"] = list(self.decoder_kernel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImnConfig":
        return cls(
            num_leads=int(d["num_leads"]),
            signal_length=int(d["signal_length"]),
            num_outputs=int(d["num_outputs"]),
            lambda_l1=float(d["lambda_l1"]),
            encoder_channels=tuple(d["encoder_channels"]),
            encoder_kernel=tuple(d["encoder_kernel"]),
            decoder_kernel=tuple(d["decoder_kernel"]),
            pool_factor=int(d["pool_factor"]),
        )


@dataclass
class ImnOutput:
    """One complete transparent decision: weights, bias, logits, probabilities.

    ``probabilities`` is a K-vector (softmax) for categorical models and a
    scalar positive-class probability for binary ones.
    """

    weights: np.ndarray
    bias: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray


def _same_padding(kernel: tuple[int, int]) -> tuple[int, int]:
    return ((kernel[0] - 1) // 2, (kernel[1] - 1) // 2)


class Conv2dLayer:
    def __init__(self, cin: int, cout: int, kernel: tuple[int, int],
                 rng: np.random.Generator, dtype):
        kh, kw = kernel
        bound = 1.0 / np.sqrt(cin * kh * kw)
        self.kernel = Tensor(rng.uniform(-bound, bound, size=(cout, cin, kh, kw)),
                             requires_grad=True, dtype=dtype)
        self.bias = Tensor(rng.uniform(-bound, bound, size=cout),
                           requires_grad=True, dtype=dtype)
        self.padding = _same_padding(kernel)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias, self.padding)


class BatchNorm2dLayer:
    def __init__(self, channels: int, dtype, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.state = T.BatchNormState(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batchnorm2d(x, self.gamma, self.beta, self.state, training,
                             momentum=self.momentum, eps=self.eps)


class LinearLayer:
    def __init__(self, din: int, dout: int, rng: np.random.Generator, dtype):
        bound = 1.0 / np.sqrt(din)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(din, dout)),
                             requires_grad=True, dtype=dtype)
        self.bias = Tensor(rng.uniform(-bound, bound, size=dout),
                           requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class ImnModel:
    """Weight-generating classifier with a strictly linear readout."""

    def __init__(self, config: ImnConfig, variant: str = VARIANT_TRANSNET,
                 seed: int = 0, dtype=np.float32):
        if variant not in (VARIANT_TRANSNET, VARIANT_DIRECT):
            raise ModelError(f"unknown variant '{variant}'")
        self.config = config
        self.variant = variant
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c1, c2, c3 = config.encoder_channels
        ek, dk = config.encoder_kernel, config.decoder_kernel
        k = config.num_outputs

        self.enc_conv1 = Conv2dLayer(1, c1, ek, rng, dtype)
        self.enc_bn1 = BatchNorm2dLayer(c1, dtype)
        self.enc_conv2 = Conv2dLayer(c1, c2, ek, rng, dtype)
        self.enc_bn2 = BatchNorm2dLayer(c2, dtype)
        self.enc_conv3 = Conv2dLayer(c2, c3, ek, rng, dtype)
        self.enc_bn3 = BatchNorm2dLayer(c3, dtype)

        if variant == VARIANT_TRANSNET:
            self.dec_conv1 = Conv2dLayer(c3, c2, dk, rng, dtype)
            self.dec_bn1 = BatchNorm2dLayer(c2, dtype)
            self.dec_conv2 = Conv2dLayer(c2, c1, dk, rng, dtype)
            self.dec_bn2 = BatchNorm2dLayer(c1, dtype)
            self.dec_proj = Conv2dLayer(c1, k, dk, rng, dtype)
        else:
            self.direct_proj = Conv2dLayer(c3, k, (1, 1), rng, dtype)

        self.bias_head = LinearLayer(c3, k, rng, dtype)

    @property
    def formulation(self) -> str:
        return self.config.formulation

    # -- parameter access ---------------------------------------------------

    def _bn_layers(self) -> list[tuple[str, BatchNorm2dLayer]]:
        names = ["enc_bn1", "enc_bn2", "enc_bn3"]
        if self.variant == VARIANT_TRANSNET:
            names += ["dec_bn1", "dec_bn2"]
        return [(n, getattr(self, n)) for n in names]

    def _conv_layers(self) -> list[tuple[str, Conv2dLayer]]:
        names = ["enc_conv1", "enc_conv2", "enc_conv3"]
        if self.variant == VARIANT_TRANSNET:
            names += ["dec_conv1", "dec_conv2", "dec_proj"]
        else:
            names += ["direct_proj"]
        return [(n, getattr(self, n)) for n in names]

    def parameters(self) -> list[tuple[str, Tensor]]:
        params: list[tuple[str, Tensor]] = []
        for name, conv in self._conv_layers():
            params.append((f"{name}.kernel", conv.kernel))
            params.append((f"{name}.bias", conv.bias))
        for name, bn in self._bn_layers():
            params.append((f"{name}.gamma", bn.gamma))
            params.append((f"{name}.beta", bn.beta))
        params.append(("bias_head.weight", self.bias_head.weight))
        params.append(("bias_head.bias", self.bias_head.bias))
        return params

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        bufs = []
        for name, bn in self._bn_layers():
            bufs.append((f"{name}.running_mean", bn.state.running_mean))
            bufs.append((f"{name}.running_var", bn.state.running_var))
        return bufs

    def state_snapshot(self) -> dict:
        return {
            "params": {n: t.data.copy() for n, t in self.parameters()},
            "buffers": {n: b.copy() for n, b in self.buffers()},
            "bn_batches": {n: bn.state.batches for n, bn in self._bn_layers()},
        }

    def load_snapshot(self, snap: dict) -> None:
        for n, t in self.parameters():
            t.data[...] = snap["params"][n]
        for n, b in self.buffers():
            b[...] = snap["buffers"][n]
        for n, bn in self._bn_layers():
            bn.state.batches = snap["bn_batches"][n]

    # -- forward pieces -----------------------------------------------------

    def encode(self, x4d: Tensor, training: bool) -> Tensor:
        """Three conv blocks mapping (N, 1, C, L) to latents (N, c3, C, L/4)."""
        pf = self.config.pool_factor
        z = check_finite(T.gelu(self.enc_bn1(self.enc_conv1(x4d), training)), "encoder block 1")
        z = T.maxpool2d_w(T.gelu(self.enc_bn2(self.enc_conv2(z), training)), pf)
        check_finite(z, "encoder block 2")
        z = T.maxpool2d_w(T.gelu(self.enc_bn3(self.enc_conv3(z), training)), pf)
        return check_finite(z, "encoder block 3")

    def decode_weights(self, z: Tensor, training: bool) -> Tensor:
        """Upsample latents back to (N, K, C, L) weight maps."""
        pf = self.config.pool_factor
        if self.variant == VARIANT_DIRECT:
            w = T.upsample_nearest_w(self.direct_proj(z), pf * pf)
            return check_finite(w, "direct projection")
        w = T.upsample_nearest_w(T.gelu(self.dec_bn1(self.dec_conv1(z), training)), pf)
        check_finite(w, "decoder stage 1")
        w = T.upsample_nearest_w(T.gelu(self.dec_bn2(self.dec_conv2(w), training)), pf)
        check_finite(w, "decoder stage 2")
        return check_finite(self.dec_proj(w), "decoder projection")

    def generate_bias(self, z: Tensor) -> Tensor:
        """Pool latents globally and map the channel vector to K biases."""
        return check_finite(self.bias_head(T.global_avg_pool(z)), "bias head")

    def forward_tensors(self, x: Tensor, training: bool) -> tuple[Tensor, Tensor, Tensor]:
        """Batched forward: (N, C, L) input -> (W, b, logits) tensors."""
        n, c, length = x.shape
        if c != self.config.num_leads or length != self.config.signal_length:
            raise ModelError(
                f"input shape {(c, length)} does not match configured "
                f"({self.config.num_leads}, {self.config.signal_length})")
        z = self.encode(T.reshape(x, (n, 1, c, length)), training)
        weights = self.decode_weights(z, training)
        bias = self.generate_bias(z)
        logits = check_finite(T.add(T.readout(weights, x), bias), "linear readout")
        return weights, bias, logits

    # -- public inference ---------------------------------------------------

    def forward(self, x: np.ndarray, training: bool = False) -> ImnOutput:
        """Run one (C, L) signal through the hypernetwork."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2:
            raise ModelError(f"expected a (C, L) signal, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ModelError("input signal contains non-finite values")
        xt = Tensor(x[None, :, :], dtype=self.dtype)
        weights, bias, logits = self.forward_tensors(xt, training)
        return ImnOutput(
            weights=weights.data[0].copy(),
            bias=bias.data[0].copy(),
            logits=logits.data[0].copy(),
            probabilities=self._probabilities(logits.data)[0],
        )

    def predict_batch(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Positive-class scores for an (N, C, L) batch (K must be 1 or 2)."""
        xt = Tensor(np.asarray(x, dtype=self.dtype))
        _, _, logits = self.forward_tensors(xt, training)
        probs = self._probabilities(logits.data)
        if self.config.num_outputs == 1:
            return probs
        if self.config.num_outputs == 2:
            return probs[:, 1]
        raise ModelError("positive-class scores need a binary or two-class model")

    def _probabilities(self, logits: np.ndarray) -> np.ndarray:
        if self.config.num_outputs == 1:
            return T.stable_sigmoid(logits[:, 0])
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def prime_batchnorm(self, x: np.ndarray) -> None:
        """Record one train-mode pass so eval mode has running statistics."""
        xt = Tensor(np.asarray(x, dtype=self.dtype))
        self.forward_tensors(xt, training=True)


# ---------------------------------------------------------------------------
# checkpoint format: magic | u32 manifest length | manifest JSON | tensor blob.
# Each tensor in the blob is u32 rank, u32 extents, then little-endian
# float32 data in row-major order.


def _write_tensor(buf: io.BytesIO, arr: np.ndarray) -> None:
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor(buf: io.BytesIO, expect_shape: tuple[int, ...], name: str) -> np.ndarray:
    head = buf.read(4)
    if len(head) < 4:
        raise CheckpointError(f"truncated blob: missing header for tensor '{name}'")
    rank = struct.unpack("<I", head)[0]
    raw = buf.read(4 * rank)
    if len(raw) < 4 * rank:
        raise CheckpointError(f"truncated blob: missing extents for tensor '{name}'")
    shape = struct.unpack(f"<{rank}I", raw)
    if tuple(shape) != tuple(expect_shape):
        raise CheckpointError(
            f"tensor '{name}' has shape {tuple(shape)} but manifest says {tuple(expect_shape)}")
    count = int(np.prod(shape)) if shape else 1
    data = buf.read(4 * count)
    if len(data) < 4 * count:
        raise CheckpointError(
            f"truncated blob: tensor '{name}' expected {4 * count} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def save_checkpoint(model: ImnModel, path) -> None:
    if model.dtype != np.dtype(np.float32):
        raise CheckpointError("checkpoints are float32; refusing to save a float64 model")
    entries = [(n, t.data) for n, t in model.parameters()] + list(model.buffers())
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "formulation": model.formulation,
        "variant": model.variant,
        "seed": model.seed,
        "bn_batches": {n: bn.state.batches for n, bn in model._bn_layers()},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    }
    blob = io.BytesIO()
    for _, arr in entries:
        _write_tensor(blob, arr)
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(mbytes)))
        f.write(mbytes)
        f.write(blob.getvalue())


def load_checkpoint(path) -> ImnModel:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    if len(raw) < 12:
        raise CheckpointError("truncated checkpoint header")
    mlen = struct.unpack("<I", raw[8:12])[0]
    mbytes = raw[12:12 + mlen]
    if len(mbytes) < mlen:
        raise CheckpointError("truncated manifest")
    try:
        manifest = json.loads(mbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupted manifest: {e}") from e
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")

    config = ImnConfig.from_dict(manifest["config"])
    model = ImnModel(config, variant=manifest["variant"], seed=manifest.get("seed", 0))

    named = dict(model.parameters())
    buffered = dict(model.buffers())
    buf = io.BytesIO(raw[12 + mlen:])
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name in named:
            target = named[name].data
        elif name in buffered:
            target = buffered[name]
        else:
            raise CheckpointError(f"manifest names unknown tensor '{name}'")
        if target.shape != shape:
            raise CheckpointError(
                f"tensor '{name}' shape {shape} does not fit this architecture {target.shape}")
        target[...] = _read_tensor(buf, shape, name)
    if buf.read(1):
        raise CheckpointError("trailing bytes after last tensor")
    for n, bn in model._bn_layers():
        bn.state.batches = int(manifest["bn_batches"][n])
    return model
