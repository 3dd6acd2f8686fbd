"""The reconstruction network: spectral CNN embedding, coherence-weighted
graph attention, a sensor-token transformer encoder, and a dual-head
decoder that restores magnitude and phase spectra.

Per window the pipeline is:

    spectra (C, 2, F)
      -> weight-shared 1-D CNN per sensor        -> (C, D)
      -> L graph-attention layers, logits scaled
         by the window's coherence matrix        -> (C, D)
      -> projection + learned sensor positions,
         pre-norm transformer over the sensor
         axis, mean-pooled                       -> (d_model,)
      -> two MLP heads                           -> (C, F) magnitude, (C, F) phase

The coherence matrix enters attention as a constant multiplier of the
scaled dot-product logits: coherent sensor pairs get amplified logits,
incoherent pairs get logits pulled toward LeakyReLU(0) = 0, so coherence
biases message passing without masking it.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, asdict, field, replace

import numpy as np

from . import autodiff as ad
from .coherence import PciMatrix, pci
from .ingest import SensorWindow
from .spectral import SpectralConfig, SpectralTensor, to_spectral_tensor

CHECKPOINT_MAGIC = b"PHCO"
CHECKPOINT_VERSION = 1

PARAM_GROUPS = {"cnn.": "cnn", "gat.": "gat", "enc.": "transformer", "dec.": "decoder"}


class ModelError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters.

    Defaults reproduce the full-scale configuration (51 sensors, window
    60, 128-point DFT); tests and the bundled scenario shrink them.
    """

    n_channels: int = 51
    window_size: int = 60
    n_fft: int = 128
    embed_dim: int = 128          # D, per-sensor embedding width
    d_model: int = 256
    heads: int = 8                # transformer attention heads
    transformer_layers: int = 4
    gat_layers: int = 2
    gat_heads: int = 4
    leaky_slope: float = 0.2
    ffn_dim: int = 1024
    cnn_channels: tuple = (32, 64)
    decoder_hidden: int = 256
    analysis_window: str = "hann"
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.gat_heads != 0:
            raise ModelError(
                f"embed_dim {self.embed_dim} not divisible by gat_heads {self.gat_heads}")
        if self.d_model % self.heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.window_size > self.n_fft:
            raise ModelError(
                f"window_size {self.window_size} exceeds n_fft {self.n_fft}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def spectral(self) -> SpectralConfig:
        return SpectralConfig(n_fft=self.n_fft, analysis_window=self.analysis_window)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "cnn_channels" in d:
            d["cnn_channels"] = tuple(d["cnn_channels"])
        return cls(**d)


class ModelParams:
    """Named parameter tensors, grouped by prefix for accounting.

    Prefixes: cnn. (spectral embedding), gat. (graph attention),
    enc. (projection, positions, transformer), dec. (decoder heads).
    """

    def __init__(self, tensors: dict):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> ad.DiffTensor:
        return self.tensors[name]

    def names(self) -> list:
        return sorted(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy_values(self) -> dict:
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def load_values(self, values: dict) -> None:
        for name, arr in values.items():
            self.tensors[name].values[...] = arr


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig) -> ModelParams:
    """Deterministic initialization from cfg.seed.

    Linear and convolution weights are Xavier-uniform, biases zero,
    positional embeddings N(0, 0.02^2), layer-norm gains one.
    """
    rng = np.random.default_rng(cfg.seed)
    n_ch, f_bins = cfg.n_channels, cfg.n_bins
    d, dm = cfg.embed_dim, cfg.d_model
    ch1, ch2 = cfg.cnn_channels
    flat = ch2 * (f_bins // 4)
    out_dim = n_ch * f_bins
    t = {}

    def lin(name, fan_in, fan_out, bias=True):
        t[name + ".w"] = ad.leaf(_xavier(rng, fan_in, fan_out, (fan_in, fan_out)))
        if bias:
            t[name + ".b"] = ad.leaf(np.zeros(fan_out))

    t["cnn.conv1.w"] = ad.leaf(_xavier(rng, 2 * 3, ch1 * 3, (ch1, 2, 3)))
    t["cnn.conv1.b"] = ad.leaf(np.zeros(ch1))
    t["cnn.conv2.w"] = ad.leaf(_xavier(rng, ch1 * 3, ch2 * 3, (ch2, ch1, 3)))
    t["cnn.conv2.b"] = ad.leaf(np.zeros(ch2))
    lin("cnn.proj", flat, d)

    for layer in range(cfg.gat_layers):
        for proj in ("q", "k", "v"):
            lin(f"gat.{layer}.{proj}", d, d)
        lin(f"gat.{layer}.out", d, d, bias=False)

    lin("enc.proj", d, dm)
    t["enc.pos"] = ad.leaf(rng.normal(0.0, 0.02, size=(n_ch, dm)))
    for layer in range(cfg.transformer_layers):
        t[f"enc.{layer}.ln1.g"] = ad.leaf(np.ones(dm))
        t[f"enc.{layer}.ln1.b"] = ad.leaf(np.zeros(dm))
        for proj in ("q", "k", "v", "out"):
            lin(f"enc.{layer}.attn.{proj}", dm, dm)
        t[f"enc.{layer}.ln2.g"] = ad.leaf(np.ones(dm))
        t[f"enc.{layer}.ln2.b"] = ad.leaf(np.zeros(dm))
        lin(f"enc.{layer}.ffn.1", dm, cfg.ffn_dim)
        lin(f"enc.{layer}.ffn.2", cfg.ffn_dim, dm)

    for head in ("mag", "phase"):
        lin(f"dec.{head}.1", dm, cfg.decoder_hidden)
        lin(f"dec.{head}.2", cfg.decoder_hidden, out_dim)
    return ModelParams(t)


def count_params(params: ModelParams) -> dict:
    """Exact per-group parameter counts plus the total."""
    counts = {group: 0 for group in PARAM_GROUPS.values()}
    for name, tensor in params.items():
        for prefix, group in PARAM_GROUPS.items():
            if name.startswith(prefix):
                counts[group] += tensor.size
                break
        else:
            raise ModelError(f"parameter {name!r} belongs to no group")
    counts["total"] = sum(counts.values())
    return counts


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def embed(spec: SpectralTensor, cfg: ModelConfig, params: ModelParams) -> ad.DiffTensor:
    """Per-sensor embedding of the (C, 2, F) spectra; weight-shared across sensors."""
    x = spec.stacked() if isinstance(spec, SpectralTensor) else np.asarray(spec)
    if x.shape != (cfg.n_channels, 2, cfg.n_bins):
        raise ModelError(
            f"expected spectra of shape {(cfg.n_channels, 2, cfg.n_bins)}, "
            f"got {x.shape}")
    h = ad.conv1d(ad.constant(x), params["cnn.conv1.w"], params["cnn.conv1.b"])
    h = ad.maxpool1d(ad.relu(h))
    h = ad.conv1d(h, params["cnn.conv2.w"], params["cnn.conv2.b"])
    h = ad.maxpool1d(ad.relu(h))
    h = ad.reshape(h, (cfg.n_channels, h.size // cfg.n_channels))
    return ad.add(ad.matmul(h, params["cnn.proj.w"]), params["cnn.proj.b"])


def _multihead_attention(x: ad.DiffTensor, n_heads: int, q_w, q_b, k_w, k_b,
                         v_w, v_b, logit_scale_mat=None, leaky_slope=None):
    """Shared multi-head attention core over (C, width) tokens.

    When ``logit_scale_mat`` is given, logits are multiplied elementwise
    by it before the (optional leaky-ReLU) nonlinearity; this is how the
    coherence matrix biases graph attention.
    """
    width = x.shape[1]
    d_head = width // n_heads
    q_all = ad.add(ad.matmul(x, q_w), q_b)
    k_all = ad.add(ad.matmul(x, k_w), k_b)
    v_all = ad.add(ad.matmul(x, v_w), v_b)
    heads = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        q = ad.slice_axis(q_all, 1, lo, hi)
        k = ad.slice_axis(k_all, 1, lo, hi)
        v = ad.slice_axis(v_all, 1, lo, hi)
        logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_head))
        if logit_scale_mat is not None:
            logits = ad.mul(logits, logit_scale_mat)
        if leaky_slope is not None:
            logits = ad.leaky_relu(logits, leaky_slope)
        alpha = ad.softmax(logits, axis=1)
        heads.append(ad.matmul(alpha, v))
    return ad.concat(heads, axis=1)


def gat_layer(h: ad.DiffTensor, adjacency, cfg: ModelConfig, params: ModelParams,
              layer: int) -> ad.DiffTensor:
    """One coherence-weighted graph-attention layer with residual output.

    The adjacency is treated as a constant: no gradient flows into the
    coherence computation from here.
    """
    a = adjacency.values if isinstance(adjacency, PciMatrix) else np.asarray(adjacency)
    if h.shape != (cfg.n_channels, cfg.embed_dim):
        raise ModelError(
            f"expected embeddings {(cfg.n_channels, cfg.embed_dim)}, got {h.shape}")
    if a.shape != (cfg.n_channels, cfg.n_channels):
        raise ModelError(
            f"expected adjacency {(cfg.n_channels, cfg.n_channels)}, got {a.shape}")
    p = f"gat.{layer}"
    attended = _multihead_attention(
        h, cfg.gat_heads,
        params[f"{p}.q.w"], params[f"{p}.q.b"],
        params[f"{p}.k.w"], params[f"{p}.k.b"],
        params[f"{p}.v.w"], params[f"{p}.v.b"],
        logit_scale_mat=ad.constant(a), leaky_slope=cfg.leaky_slope)
    out = ad.matmul(attended, params[f"{p}.out.w"])
    return ad.add(h, out)


def encode(h: ad.DiffTensor, cfg: ModelConfig, params: ModelParams) -> ad.DiffTensor:
    """Project, add sensor positions, run the pre-norm transformer over the
    sensor axis, and mean-pool to the latent vector."""
    if h.shape != (cfg.n_channels, cfg.embed_dim):
        raise ModelError(
            f"expected embeddings {(cfg.n_channels, cfg.embed_dim)}, got {h.shape}")
    u = ad.add(ad.matmul(h, params["enc.proj.w"]), params["enc.proj.b"])
    u = ad.add(u, params["enc.pos"])
    for layer in range(cfg.transformer_layers):
        p = f"enc.{layer}"
        x1 = ad.layer_norm(u, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        attended = _multihead_attention(
            x1, cfg.heads,
            params[f"{p}.attn.q.w"], params[f"{p}.attn.q.b"],
            params[f"{p}.attn.k.w"], params[f"{p}.attn.k.b"],
            params[f"{p}.attn.v.w"], params[f"{p}.attn.v.b"])
        attended = ad.add(ad.matmul(attended, params[f"{p}.attn.out.w"]),
                          params[f"{p}.attn.out.b"])
        u = ad.add(u, attended)
        x2 = ad.layer_norm(u, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        f = ad.relu(ad.add(ad.matmul(x2, params[f"{p}.ffn.1.w"]),
                           params[f"{p}.ffn.1.b"]))
        f = ad.add(ad.matmul(f, params[f"{p}.ffn.2.w"]), params[f"{p}.ffn.2.b"])
        u = ad.add(u, f)
    pooled = ad.scale(ad.reduce_sum(u, axis=0), 1.0 / cfg.n_channels)
    return pooled  # (d_model,)


def decode(z: ad.DiffTensor, cfg: ModelConfig, params: ModelParams):
    """Decode the latent vector into magnitude (>= 0 via ReLU) and phase
    (inside (-pi, pi) via tanh * pi) spectra, each (C, F)."""
    if z.shape != (cfg.d_model,):
        raise ModelError(f"expected latent of shape ({cfg.d_model},), got {z.shape}")
    z2 = ad.reshape(z, (1, cfg.d_model))
    shape = (cfg.n_channels, cfg.n_bins)

    def head(name):
        h = ad.relu(ad.add(ad.matmul(z2, params[f"dec.{name}.1.w"]),
                           params[f"dec.{name}.1.b"]))
        o = ad.add(ad.matmul(h, params[f"dec.{name}.2.w"]), params[f"dec.{name}.2.b"])
        return ad.reshape(o, shape)

    mag_hat = ad.relu(head("mag"))
    phase_hat = ad.scale(ad.tanh(head("phase")), math.pi)
    return mag_hat, phase_hat


def forward_spectral(spec: SpectralTensor, adjacency: PciMatrix, cfg: ModelConfig,
                     params: ModelParams):
    """Core forward pass from precomputed spectra and coherence matrix."""
    h = embed(spec, cfg, params)
    for layer in range(cfg.gat_layers):
        h = gat_layer(h, adjacency, cfg, params, layer)
    z = encode(h, cfg, params)
    return decode(z, cfg, params)


def forward(window: SensorWindow, cfg: ModelConfig, params: ModelParams):
    """Full pipeline for one window.

    Returns (SpectralTensor, PciMatrix, magnitude_hat, phase_hat); the
    first two are the reconstruction targets derived from the window
    itself.
    """
    spec = to_spectral_tensor(window, cfg.spectral())
    adjacency = pci(spec.phase)
    mag_hat, phase_hat = forward_spectral(spec, adjacency, cfg, params)
    return spec, adjacency, mag_hat, phase_hat


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors: dict, config: dict) -> None:
    """Write a binary checkpoint: magic, version, JSON config block,
    (name, shape, float64 little-endian payload) per tensor in sorted name
    order, and a trailing SHA-256 of everything before it.

    ``tensors`` maps names to arrays (or DiffTensors); ``config`` must be
    JSON-serializable. Byte-identical for identical inputs.
    """
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    blob += struct.pack("<Q", len(cfg_bytes))
    blob += cfg_bytes
    names = sorted(tensors)
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = tensors[name]
        arr = np.asarray(arr.values if isinstance(arr, ad.DiffTensor) else arr,
                         dtype=np.float64)
        name_b = name.encode()
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.astype("<f8").tobytes(order="C")
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path):
    """Read a checkpoint back into (tensors: dict of arrays, config: dict).

    The whole-file checksum is verified before anything is parsed, so a
    corrupted file fails loudly instead of yielding garbage weights.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 44 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    (cfg_len,) = struct.unpack_from("<Q", body, off)
    off += 8
    config = json.loads(body[off:off + cfg_len].decode())
    off += cfg_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off) if ndim else ()
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(body[off:off + size * 8], dtype="<f8").reshape(shape)
        tensors[name] = arr.astype(np.float64)
        off += size * 8
    return tensors, config


def params_from_tensors(tensors: dict, cfg: ModelConfig) -> ModelParams:
    """Rebuild ModelParams from checkpoint tensors, validating every shape
    against the config; a mismatch names the offending tensor."""
    reference = init_params(replace(cfg, seed=cfg.seed))
    out = {}
    for name, ref in reference.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.shape != ref.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, config expects {ref.shape}")
        out[name] = ad.leaf(arr)
    return ModelParams(out)
