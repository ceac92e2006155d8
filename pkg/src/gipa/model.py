"""Full model (edge embedding, K stacked layers, wide & deep head) and checkpoints."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, IngestionError
from .fsutil import atomic_write
from .head import HeadParams, init_head, predict
from .layer import ABLATIONS, ATTENTION_KINDS, GipaLayerParams, LayerDims, glorot, init_layer, stack_forward
from .tensor import Tensor

CHECKPOINT_FORMAT = "gipa-checkpoint"
CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild the parameter shapes of a model."""

    n_features: int
    n_buckets: int
    edge_raw: int
    n_labels: int
    layers: int = 6
    hidden: int = 16
    edge_dim: int = 8
    ablation: str = "full"
    activation: str = "softplus"
    mlp_hidden: int | None = None
    head_hidden: int | None = None

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.activation not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention activation {self.activation!r}")
        if self.layers < 1:
            raise ConfigError("model needs at least one layer")

    @property
    def effective_edge_dim(self) -> int:
        return 0 if self.ablation == "no_edge_feature" else self.edge_dim

    def layer_dims(self) -> list[LayerDims]:
        m = self.n_features
        dims = []
        in_d, in_s = m, m * (self.n_buckets + 1)
        for _ in range(self.layers):
            dims.append(LayerDims(in_d, in_s, self.hidden, m, self.effective_edge_dim,
                                  self.mlp_hidden, self.mlp_hidden, self.mlp_hidden))
            in_d, in_s = self.hidden, m
        return dims


@dataclass
class GipaModel:
    spec: ModelSpec
    w_edge: Tensor | None
    layers: list[GipaLayerParams]
    head: HeadParams

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        if self.w_edge is not None:
            out.append(("edge.w", self.w_edge))
        for k, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"layer{k}."))
        out.extend(self.head.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def embed_edges(self, edge_norm) -> Tensor | None:
        if self.w_edge is None:
            return None
        return T.matmul(Tensor(edge_norm), self.w_edge)

    def node_outputs(self, graph, x_dense, x_sparse, edge_norm):
        e = self.embed_edges(edge_norm)
        return stack_forward(graph, as_input(x_dense), as_input(x_sparse), e, self.layers,
                             self.spec.ablation, self.spec.activation)

    def forward(self, graph, x_dense, x_sparse, edge_norm) -> Tensor:
        """Logits for every node of ``graph`` (``n_nodes x n_labels``)."""
        o_d, o_s = self.node_outputs(graph, x_dense, x_sparse, edge_norm)
        return predict(o_d, o_s, self.head)


def as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def init_model(spec: ModelSpec, seed) -> GipaModel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w_edge = None
    if spec.effective_edge_dim:
        w_edge = glorot(rng, spec.edge_raw, spec.edge_dim, name="edge.w")
    layers = [init_layer(d, rng, spec.ablation) for d in spec.layer_dims()]
    head = init_head(rng, spec.hidden, spec.n_features, spec.n_labels, spec.head_hidden)
    model = GipaModel(spec, w_edge, layers, head)
    for name, p in model.named_parameters():
        p.name = name
    return model


# ---------------------------------------------------------------------------
# checkpoints: a stored zip of .npy members plus meta.json, with fixed
# timestamps so identical weights give identical bytes


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def checkpoint_bytes(model: GipaModel, extra: dict | None = None) -> bytes:
    named = model.named_parameters()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "layer_dims": [asdict(d) for d in model.spec.layer_dims()],
        "parameters": {name: list(p.shape) for name, p in named},
        "extra": extra or {},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_member("meta.json"), json.dumps(meta, indent=1, sort_keys=True))
        for name, p in named:
            arr = io.BytesIO()
            np.lib.format.write_array(arr, p.data, allow_pickle=False)
            zf.writestr(_member(f"{name}.npy"), arr.getvalue())
    return buf.getvalue()


def save_checkpoint(model: GipaModel, path, extra: dict | None = None) -> None:
    atomic_write(path, checkpoint_bytes(model, extra))


def load_checkpoint(path) -> tuple[GipaModel, dict]:
    """Rebuild a model from a checkpoint, validating every stored shape."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise IngestionError(f"cannot open checkpoint: {exc}", file=path) from None
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise IngestionError("not a GIPA checkpoint", file=path)
        if meta.get("version") != CHECKPOINT_VERSION:
            raise IngestionError(f"unsupported checkpoint version {meta.get('version')!r}", file=path)
        spec = ModelSpec(**meta["spec"])
        model = init_model(spec, 0)
        named = dict(model.named_parameters())
        if set(named) != set(meta["parameters"]):
            raise IngestionError("checkpoint parameter set does not match its model spec", file=path)
        for name, p in named.items():
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            if arr.shape != p.shape:
                raise IngestionError(f"parameter {name}: stored shape {arr.shape}, expected {p.shape}",
                                     file=path)
            p.data = np.ascontiguousarray(arr, dtype=np.float64)
    return model, meta.get("extra", {})


def copy_model(model: GipaModel) -> GipaModel:
    clone = init_model(model.spec, 0)
    for (_, dst), (_, src) in zip(clone.named_parameters(), model.named_parameters()):
        dst.data = src.data.copy()
    return clone
