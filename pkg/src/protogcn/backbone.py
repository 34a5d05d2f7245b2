"""Stacked graph-convolution network with decomposed, prototype-refined topology."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .losses import ProjectionHead
from .mte import MteParams, topology_terms
from .prn import PrototypeMemory, flatten_topology, refine_topology
from .tensor import DimensionError, Tensor


@dataclass
class BackboneConfig:
    joints: int = 5
    in_channels: int = 3
    widths: tuple = (16, 32, 32, 64)
    heads: int = 2
    n_pro: int = 8
    kernel_size: int = 9
    num_classes: int = 3
    proj_dim: int = 32
    activation: str = "tanh"
    use_mte: bool = True
    use_prn: bool = True
    tie_qk: bool = False
    normalize: bool = True
    residual: bool = True
    layer_norm: bool = True

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if not self.widths or min(self.widths) < 1:
            raise ValueError(f"need at least one positive layer width, got {self.widths}")
        if self.joints < 2 or self.in_channels < 1 or self.num_classes < 2:
            raise ValueError("need joints >= 2, in_channels >= 1, num_classes >= 2")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"temporal kernel size must be odd, got {self.kernel_size}")
        if self.n_pro < 1 or self.proj_dim < 1:
            raise ValueError("n_pro and proj_dim must be positive")
        if self.activation not in T.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for w in self.widths:
            if w // self.heads < 1:
                raise ValueError(f"width {w} cannot host {self.heads} heads")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def temporal_block(H: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Residual depthwise temporal convolution: ``H + conv_T(H) + bias``."""
    out = T.add(H, T.temporal_conv(H, weight))
    return out if bias is None else T.add(out, bias)


def classify(H: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Average over joints and frames, then a linear map to class logits."""
    pooled = T.mean(H, axis=(-3, -2))
    if pooled.ndim == 1:
        pooled = T.reshape(pooled, (1, pooled.shape[0]))
    return pooled @ weight + bias


@dataclass
class GraphLayer:
    a0: Tensor
    w: Tensor
    mte: MteParams
    memory: PrototypeMemory
    tcn_weight: Tensor
    tcn_bias: Tensor
    shortcut: Optional[Tensor] = None
    norm_gain: Optional[Tensor] = None
    norm_bias: Optional[Tensor] = None
    use_mte: bool = True
    use_prn: bool = True
    residual: bool = True

    @classmethod
    def init(cls, c_in, c_out, cfg: BackboneConfig, rng, dtype=np.float64):
        n = cfg.joints

        def param(arr):
            return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)

        a0 = param(rng.normal(0.0, 1.0 / n, size=(n, n, c_out)))
        w = param(rng.normal(0.0, np.sqrt(2.0 / c_in), size=(c_in, c_out)))
        mte = MteParams.init(c_out, cfg.heads, rng, cfg.activation, cfg.tie_qk, dtype)
        memory = PrototypeMemory.init(cfg.n_pro, c_out, rng, dtype)
        tcn_w = param(rng.normal(0.0, 1.0 / cfg.kernel_size, size=(cfg.kernel_size, c_out)))
        tcn_b = param(np.zeros(c_out))
        shortcut = None
        if c_in != c_out:
            shortcut = param(rng.normal(0.0, 1.0 / np.sqrt(c_in), size=(c_in, c_out)))
        gain = bias = None
        if cfg.layer_norm:
            gain, bias = param(np.ones(c_out)), param(np.zeros(c_out))
        return cls(a0, w, mte, memory, tcn_w, tcn_b, shortcut, gain, bias,
                   cfg.use_mte, cfg.use_prn, cfg.residual)

    def named_parameters(self, prefix=""):
        out = {f"{prefix}a0": self.a0, f"{prefix}w": self.w}
        if self.use_mte:
            out.update(self.mte.named_parameters(f"{prefix}mte."))
        if self.use_prn:
            out.update(self.memory.named_parameters(f"{prefix}prn."))
        if self.norm_gain is not None:
            out[f"{prefix}norm.gain"] = self.norm_gain
            out[f"{prefix}norm.bias"] = self.norm_bias
        out[f"{prefix}tcn.weight"] = self.tcn_weight
        out[f"{prefix}tcn.bias"] = self.tcn_bias
        if self.residual and self.shortcut is not None:
            out[f"{prefix}shortcut"] = self.shortcut
        return out

    def topology(self, H_mid: Tensor):
        """Effective adjacency and the flattened representation handed downstream."""
        lead = H_mid.shape[:-3]
        A = T.expand(self.a0, lead + self.a0.shape) if lead else self.a0
        if self.use_mte:
            a_intra, a_inter = topology_terms(H_mid, self.mte)
            A = A + a_intra + a_inter
        if self.use_prn:
            refined, (_, _, Z) = refine_topology(A, self.memory, return_parts=True)
            return refined, Z
        return A, flatten_topology(A)

    def __call__(self, H: Tensor, return_topology: bool = False):
        H_mid = H @ self.w
        adj, Z = self.topology(H_mid)
        out = T.graph_apply(adj, H_mid)
        if self.norm_gain is not None:
            out = T.layer_norm(out) * self.norm_gain + self.norm_bias
        out = T.relu(out)
        out = temporal_block(out, self.tcn_weight, self.tcn_bias)
        if self.residual:
            out = out + (H if self.shortcut is None else H @ self.shortcut)
        if return_topology:
            return out, Z, adj
        return out, Z


def layer_forward(H: Tensor, layer: GraphLayer):
    return layer(H)[0]


class ProtoGCN:
    """Graph-convolution classifier with prototype-refined topologies.

    ``forward`` maps a batch ``(B, N, T, C_in)`` to ``(logits (B, c), Z (B, N*N, C_L))``
    where ``Z`` is the last layer's reconstructed topology; ``head`` projects
    ``Z`` into the contrastive feature space.
    """

    def __init__(self, cfg: BackboneConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = []
        c_in = cfg.in_channels
        for c_out in cfg.widths:
            self.layers.append(GraphLayer.init(c_in, c_out, cfg, rng, dtype))
            c_in = c_out
        c_last = cfg.widths[-1]
        self.cls_weight = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(c_last), size=(c_last, cfg.num_classes)).astype(dtype),
            requires_grad=True,
        )
        self.cls_bias = Tensor(np.zeros(cfg.num_classes, dtype=dtype), requires_grad=True)
        self.head = ProjectionHead.init(cfg.joints ** 2, cfg.proj_dim, rng, cfg.normalize, dtype)
        # per (joint, channel) input standardisation; set from training data
        self.input_mean = np.zeros((1, cfg.joints, 1, cfg.in_channels), dtype=dtype)
        self.input_std = np.ones((1, cfg.joints, 1, cfg.in_channels), dtype=dtype)

    def fit_input_stats(self, x: np.ndarray, eps: float = 1e-6):
        """Standardise inputs with per joint/channel statistics of ``x`` (B, N, T, C)."""
        self.input_mean = x.mean(axis=(0, 2), keepdims=True).astype(self.dtype)
        self.input_std = (x.std(axis=(0, 2), keepdims=True) + eps).astype(self.dtype)

    def buffers(self) -> dict:
        return {"input.mean": self.input_mean, "input.std": self.input_std}

    def named_parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"layers.{i}."))
        out["classifier.weight"] = self.cls_weight
        out["classifier.bias"] = self.cls_bias
        out.update(self.head.named_parameters("head."))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def _input(self, x) -> Tensor:
        raw = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=self.dtype)
        expected = (self.cfg.joints, self.cfg.in_channels)
        if raw.ndim != 4 or (raw.shape[1], raw.shape[3]) != expected:
            raise DimensionError(f"expected input (B, {expected[0]}, T, {expected[1]}), got {raw.shape}")
        if raw.shape[0] == 0:
            raise ValueError("empty batch")
        return Tensor(((raw - self.input_mean) / self.input_std).astype(self.dtype))

    def forward(self, x, return_topologies: bool = False):
        H = self._input(x)
        topologies = []
        Z = None
        for layer in self.layers:
            H, Z, adj = layer(H, return_topology=True)
            topologies.append(adj)
        logits = classify(H, self.cls_weight, self.cls_bias)
        if return_topologies:
            return logits, Z, topologies
        return logits, Z

    __call__ = forward
