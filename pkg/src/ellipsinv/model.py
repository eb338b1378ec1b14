"""Inverse network: mapper, residual encoder, per-output attention, projectors.

The network regresses normalized (n2, k2, d) from normalized
(delta, psi, n3, k3, lambda).  Shape flow for a batch of B samples with
hidden width H and attention token size d_k (H divisible by d_k):

    (B, 5) --mapper--> (B, H) --encoder--> (B, H)
          --attention (per output)--> (B, H) --projector--> (B, 1)

Attention operates across feature tokens inside each sample, never across
the batch, so inference is pure per sample: chunking or reordering a batch
cannot change any prediction.  Normalization layers likewise use
per-sample feature statistics with a learned scale/shift (batch statistics
would break that purity).

Parameters live in an ordered name -> float64 array map.  Initialization
is variance-scaled uniform, seeded per parameter name, so two configs
share identical initial values for every parameter whose name and shape
agree (the controlled-comparison requirement of the ablation harness).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from zlib import crc32

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var

OUTPUT_NAMES = ("n2", "k2", "d")

CHECKPOINT_MAGIC = b"ELNETCK1"


class ModelConfigError(ValueError):
    """NetConfig invariant violation."""


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    Desk-scale defaults; the full-scale variant (hidden_width 2048,
    encoder_layers 150) is constructible but far too slow for tests.
    """

    hidden_width: int = 64
    encoder_layers: int = 10
    attention_dk: int = 8
    use_attention: bool = True
    norm_eps: float = 1e-5
    seed: int = 0
    input_dim: int = 5
    outputs: tuple[str, ...] = OUTPUT_NAMES

    def __post_init__(self):
        if self.hidden_width < 8:
            raise ModelConfigError(f"hidden_width must be >= 8, got {self.hidden_width}")
        if self.encoder_layers < 2 or self.encoder_layers % 2 != 0:
            raise ModelConfigError(f"encoder_layers must be even and >= 2, got {self.encoder_layers}")
        if self.attention_dk < 1 or self.hidden_width % self.attention_dk != 0:
            raise ModelConfigError(
                f"hidden_width {self.hidden_width} must be divisible by attention_dk {self.attention_dk}"
            )
        if self.input_dim != 5 or tuple(self.outputs) != OUTPUT_NAMES:
            raise ModelConfigError("input is fixed to 5 features and outputs to (n2, k2, d)")

    @property
    def tokens(self) -> int:
        return self.hidden_width // self.attention_dk

    @property
    def blocks(self) -> int:
        return self.encoder_layers // 2


def _parameter_spec(cfg: NetConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, kind) in the documented checkpoint order."""
    h = cfg.hidden_width
    spec: list[tuple[str, tuple[int, ...], str]] = [
        ("mapper.w1", (cfg.input_dim, h), "weight"),
        ("mapper.b1", (h,), "zero"),
        ("mapper.w2", (h, h), "weight"),
        ("mapper.b2", (h,), "zero"),
    ]
    for i in range(cfg.blocks):
        spec += [
            (f"encoder.block{i}.norm1.gamma", (h,), "one"),
            (f"encoder.block{i}.norm1.beta", (h,), "zero"),
            (f"encoder.block{i}.w1", (h, h), "weight"),
            (f"encoder.block{i}.b1", (h,), "zero"),
            (f"encoder.block{i}.norm2.gamma", (h,), "one"),
            (f"encoder.block{i}.norm2.beta", (h,), "zero"),
            (f"encoder.block{i}.w2", (h, h), "weight"),
            (f"encoder.block{i}.b2", (h,), "zero"),
        ]
    for out in cfg.outputs:
        if cfg.use_attention:
            spec += [
                (f"head_{out}.wq", (h, h), "weight"),
                (f"head_{out}.bq", (h,), "zero"),
                (f"head_{out}.wk", (h, h), "weight"),
                (f"head_{out}.bk", (h,), "zero"),
                (f"head_{out}.wv", (h, h), "weight"),
                (f"head_{out}.bv", (h,), "zero"),
            ]
        spec += [
            (f"head_{out}.proj.w", (h, 1), "weight"),
            (f"head_{out}.proj.b", (1,), "zero"),
        ]
    return spec


def _init_parameter(name: str, shape: tuple[int, ...], kind: str, seed: int) -> np.ndarray:
    if kind == "zero":
        return np.zeros(shape, dtype=np.float64)
    if kind == "one":
        return np.ones(shape, dtype=np.float64)
    # variance-scaled uniform on [-limit, limit], seeded by (seed, name) so
    # identical names and shapes initialize identically across configs
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(np.random.SeedSequence([seed, crc32(name.encode())]))
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


class InverseNet:
    """Parameter container; the forward functions below do the math."""

    def __init__(self, config: NetConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        spec = _parameter_spec(config)
        if params is None:
            self.params = {name: _init_parameter(name, shape, kind, config.seed) for name, shape, kind in spec}
        else:
            expected = {name: shape for name, shape, _ in spec}
            got = {name: arr.shape for name, arr in params.items()}
            if expected != got:
                raise ModelConfigError(f"parameter set does not match config: {sorted(expected)} vs {sorted(got)}")
            self.params = {name: np.array(params[name], dtype=np.float64) for name, _, _ in spec}

    def param_names(self) -> list[str]:
        return list(self.params.keys())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def bind(self, tape: Tape) -> dict[str, Var]:
        """Place every parameter on a tape as a leaf node."""
        return {name: tape.var(arr) for name, arr in self.params.items()}

    def clone(self) -> "InverseNet":
        return InverseNet(self.config, {k: v.copy() for k, v in self.params.items()})


def _affine(x: Var, w: Var, b: Var) -> Var:
    return ad.matmul(x, w) + b


def mapper_forward(p: dict[str, Var], x: Var) -> Var:
    """(B, 5) normalized inputs -> (B, H) features; affine+rectifier twice."""
    h1 = ad.relu(_affine(x, p["mapper.w1"], p["mapper.b1"]))
    return ad.relu(_affine(h1, p["mapper.w2"], p["mapper.b2"]))


def encoder_forward(p: dict[str, Var], f_m: Var, cfg: NetConfig) -> Var:
    """Residual blocks: y = x + W2 @ relu(norm(W1 @ relu(norm(x)) + b1)) + b2."""
    x = f_m
    for i in range(cfg.blocks):
        pre = f"encoder.block{i}."
        n1 = ad.affine_norm(x, p[pre + "norm1.gamma"], p[pre + "norm1.beta"], cfg.norm_eps)
        h = _affine(ad.relu(n1), p[pre + "w1"], p[pre + "b1"])
        n2 = ad.affine_norm(h, p[pre + "norm2.gamma"], p[pre + "norm2.beta"], cfg.norm_eps)
        x = x + _affine(ad.relu(n2), p[pre + "w2"], p[pre + "b2"])
    return x


def attention_forward(p: dict[str, Var], f_e: Var, head: str, cfg: NetConfig) -> Var:
    """Scaled dot-product self-attention over feature tokens of one sample.

    (B, H) features are viewed as (B, tokens, d_k); rows of the attention
    matrix softmax to 1; the result is flattened back to (B, H).
    """
    b = f_e.shape[0]
    t, dk = cfg.tokens, cfg.attention_dk
    pre = f"head_{head}."
    q = ad.reshape(_affine(f_e, p[pre + "wq"], p[pre + "bq"]), (b, t, dk))
    k = ad.reshape(_affine(f_e, p[pre + "wk"], p[pre + "bk"]), (b, t, dk))
    v = ad.reshape(_affine(f_e, p[pre + "wv"], p[pre + "bv"]), (b, t, dk))
    scores = ad.matmul(q, ad.swap_last2(k)) * (1.0 / np.sqrt(dk))
    weights = ad.softmax_rowwise(scores)
    return ad.reshape(ad.matmul(weights, v), (b, cfg.hidden_width))


def projector_forward(p: dict[str, Var], f_ea: Var, head: str) -> Var:
    """Single affine layer (B, H) -> (B, 1)."""
    pre = f"head_{head}."
    return _affine(f_ea, p[pre + "proj.w"], p[pre + "proj.b"])


def net_forward(p: dict[str, Var], x: Var, cfg: NetConfig) -> Var:
    """Full composition: (B, 5) -> (B, 3) normalized predictions."""
    f_m = mapper_forward(p, x)
    f_e = encoder_forward(p, f_m, cfg)
    heads = []
    for out in cfg.outputs:
        f = attention_forward(p, f_e, out, cfg) if cfg.use_attention else f_e
        heads.append(projector_forward(p, f, out))
    return ad.concat_last(heads)


def net_predict(net: InverseNet, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Inference on plain arrays, chunked to bound tape memory.

    Per-sample purity makes chunking exact: the concatenated result is
    bit-identical to a single full-batch pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.config.input_dim:
        raise ModelConfigError(f"expected (N, {net.config.input_dim}) inputs, got {x.shape}")
    outs = []
    for start in range(0, x.shape[0], chunk):
        tape = Tape()
        p = net.bind(tape)
        outs.append(net_forward(p, tape.var(x[start:start + chunk]), net.config).value.copy())
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, 3))


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


def _config_to_dict(cfg: NetConfig) -> dict:
    return {
        "hidden_width": cfg.hidden_width,
        "encoder_layers": cfg.encoder_layers,
        "attention_dk": cfg.attention_dk,
        "use_attention": cfg.use_attention,
        "norm_eps": cfg.norm_eps,
        "seed": cfg.seed,
        "input_dim": cfg.input_dim,
        "outputs": list(cfg.outputs),
    }


def config_from_dict(d: dict) -> NetConfig:
    return NetConfig(
        hidden_width=d["hidden_width"], encoder_layers=d["encoder_layers"],
        attention_dk=d["attention_dk"], use_attention=d["use_attention"],
        norm_eps=d["norm_eps"], seed=d["seed"], input_dim=d["input_dim"],
        outputs=tuple(d["outputs"]),
    )


def save_checkpoint(path: str, net: InverseNet, extra: dict | None = None) -> None:
    """Deterministic binary checkpoint: JSON header + float64 LE arrays.

    The header lists parameter names and shapes in their canonical order;
    array bytes follow in that same order.  Identical net and extra bytes
    produce identical files (no timestamps, no compression metadata).
    """
    header = {
        "format": CHECKPOINT_MAGIC.decode(),
        "config": _config_to_dict(net.config),
        "params": [{"name": n, "shape": list(net.params[n].shape)} for n in net.param_names()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in net.param_names():
            f.write(np.ascontiguousarray(net.params[name], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[InverseNet, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ModelConfigError(f"{path}: not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        cfg = config_from_dict(header["config"])
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
            params[entry["name"]] = np.array(data, dtype=np.float64)
        trailing = f.read(1)
        if trailing:
            raise ModelConfigError(f"{path}: trailing bytes after parameter block")
    return InverseNet(cfg, params), header["extra"]
