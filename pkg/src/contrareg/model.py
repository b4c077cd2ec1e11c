"""Encoder, projection head and MOS head over precomputed feature sequences.

The encoder is a per-frame MLP followed by mean pooling over time, producing a
representation h per sample. The projection head maps relu(h) through one
linear layer to the embedding z used by the triplet losses; the optional MOS
head is a plain affine map from h to a scalar score. Checkpoints are
versioned JSON containers that round-trip parameter bits exactly.
"""

from __future__ import annotations

import base64
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Parameter, Tensor, relu, segment_mean

__all__ = ["EncoderConfig", "QualityModel", "ReferenceSet", "nmr_score", "nmr_scores"]

CHECKPOINT_FORMAT = "contrareg-checkpoint"
CHECKPOINT_VERSION = 1

LAYERS = ("projection", "encoder")


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    embed_dim: int = 256
    projection: bool = True
    mos_head: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        dims = (self.input_dim, self.embed_dim, *self.hidden_dims)
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")
        if any(d < 1 for d in dims):
            raise ValueError("all dimensions must be >= 1")

    @property
    def repr_dim(self) -> int:
        return self.hidden_dims[-1]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class QualityModel:
    """Trainable encoder + heads; parameters are named autodiff tensors."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder: list[tuple[Parameter, Parameter]] = []
        prev = config.input_dim
        for i, width in enumerate(config.hidden_dims):
            w = Parameter(_glorot(rng, prev, width), f"enc.{i}.W")
            b = Parameter(np.zeros((1, width)), f"enc.{i}.b")
            self.encoder.append((w, b))
            prev = width
        self.proj_w: Parameter | None = None
        self.proj_b: Parameter | None = None
        if config.projection:
            self.proj_w = Parameter(_glorot(rng, prev, config.embed_dim), "proj.W")
            self.proj_b = Parameter(np.zeros((1, config.embed_dim)), "proj.b")
        self.head_w: Parameter | None = None
        self.head_b: Parameter | None = None
        if config.mos_head:
            self.head_w = Parameter(_glorot(rng, prev, 1), "head.W")
            self.head_b = Parameter(np.zeros((1, 1)), "head.b")

    # -- parameter access ------------------------------------------------

    def encoder_parameters(self) -> list[Parameter]:
        return [p for pair in self.encoder for p in pair]

    def projection_parameters(self) -> list[Parameter]:
        return [p for p in (self.proj_w, self.proj_b) if p is not None]

    def head_parameters(self) -> list[Parameter]:
        return [p for p in (self.head_w, self.head_b) if p is not None]

    def parameters(self) -> list[Parameter]:
        return self.encoder_parameters() + self.projection_parameters() + self.head_parameters()

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {p.name: p for p in self.parameters()}
        if set(own) != set(state):
            raise ValueError(f"parameter names mismatch: {sorted(set(own) ^ set(state))}")
        for name, arr in state.items():
            if own[name].data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            own[name].data = np.array(arr, dtype=np.float64)

    def copy(self) -> "QualityModel":
        clone = QualityModel(self.config, seed=0)
        clone.load_state_dict(self.state_dict())
        return clone

    def add_mos_head(self, seed: int = 0) -> None:
        """Attach an untrained MOS head to a model pretrained without one."""
        if self.head_w is not None:
            return
        rng = np.random.default_rng(seed)
        self.config = dataclasses.replace(self.config, mos_head=True)
        self.head_w = Parameter(_glorot(rng, self.config.repr_dim, 1), "head.W")
        self.head_b = Parameter(np.zeros((1, 1)), "head.b")

    # -- forward passes ----------------------------------------------------

    def _weights(self, params: list[Parameter], trainable: bool) -> list[Tensor]:
        if trainable:
            return list(params)
        return [Tensor(p.data) for p in params]

    def encode_batch(self, xs: list[np.ndarray], trainable: bool = True) -> Tensor:
        """Representations h for a batch of (T_i x input_dim) sequences.

        Sequences are concatenated, pushed through the per-frame MLP in one
        pass and mean-pooled per segment. With trainable=False the weights
        enter as constants, so no gradients reach the encoder.
        """
        if not xs:
            raise ValueError("empty batch")
        lengths = []
        for x in xs:
            x = np.asarray(x)
            if x.ndim != 2 or x.shape[1] != self.config.input_dim:
                raise ValueError(
                    f"expected (T, {self.config.input_dim}) features, got {x.shape}"
                )
            if x.shape[0] < 1:
                raise ValueError("feature sequence has no frames")
            lengths.append(x.shape[0])
        frames = Tensor(np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=0))
        out = frames
        n_layers = len(self.encoder)
        for i, (w, b) in enumerate(self.encoder):
            wt, bt = self._weights([w, b], trainable)
            out = out @ wt + bt
            if i < n_layers - 1:
                out = relu(out)
        return segment_mean(out, lengths)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.encode_batch([x], trainable=False).data[0]

    def project_batch(self, h: Tensor, trainable: bool = True) -> Tensor:
        """Embeddings z = relu(h) @ W + b."""
        if self.proj_w is None:
            raise ValueError("model has no projection head")
        wt, bt = self._weights([self.proj_w, self.proj_b], trainable)
        return relu(h) @ wt + bt

    def project(self, h: np.ndarray) -> np.ndarray:
        return self.project_batch(Tensor(np.atleast_2d(h)), trainable=False).data[0]

    def embed_batch(self, xs: list[np.ndarray], layer: str = "projection",
                    trainable: bool = False) -> Tensor:
        if layer not in LAYERS:
            raise ValueError(f"unknown layer {layer!r}; expected one of {LAYERS}")
        h = self.encode_batch(xs, trainable=trainable)
        if layer == "encoder":
            return h
        return self.project_batch(h, trainable=trainable)

    def embed(self, xs: list[np.ndarray], layer: str = "projection") -> np.ndarray:
        return self.embed_batch(xs, layer=layer, trainable=False).data

    def predict_mos_batch(self, xs: list[np.ndarray], trainable: bool = True,
                          frozen_encoder: bool = False) -> Tensor:
        """Column of raw affine MOS predictions w . h + b (no clamping)."""
        if self.head_w is None:
            raise ValueError("model has no MOS head")
        h = self.encode_batch(xs, trainable=trainable and not frozen_encoder)
        wt, bt = self._weights([self.head_w, self.head_b], trainable)
        return h @ wt + bt

    def head_from_repr(self, h: Tensor) -> Tensor:
        if self.head_w is None:
            raise ValueError("model has no MOS head")
        return h @ self.head_w + self.head_b

    def predict_mos(self, x: np.ndarray) -> float:
        return float(self.predict_mos_batch([x], trainable=False).data[0, 0])

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": dataclasses.asdict(self.config),
            "meta": meta or {},
            "params": {
                name: {
                    "shape": list(arr.shape),
                    "dtype": "<f8",
                    "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
                }
                for name, arr in sorted(self.state_dict().items())
            },
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> tuple["QualityModel", dict]:
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
        cfg_d = dict(payload["config"])
        cfg_d["hidden_dims"] = tuple(cfg_d["hidden_dims"])
        config = EncoderConfig(**cfg_d)
        model = cls(config, seed=0)
        state = {
            name: np.frombuffer(
                base64.b64decode(entry["data"]), dtype=entry["dtype"]
            ).reshape(entry["shape"]).astype(np.float64)
            for name, entry in payload["params"].items()
        }
        model.load_state_dict(state)
        return model, payload["meta"]


@dataclass
class ReferenceSet:
    """Embeddings of unpaired clean samples, all from one parameter snapshot."""

    embeddings: np.ndarray  # (R, dim)
    layer: str = "projection"

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ValueError("reference set must contain at least one embedding")

    @property
    def count(self) -> int:
        return self.embeddings.shape[0]

    @classmethod
    def from_model(cls, model: QualityModel, clean_xs: list[np.ndarray],
                   layer: str = "projection") -> "ReferenceSet":
        if not clean_xs:
            raise ValueError("reference set requires at least one clean sample")
        return cls(model.embed(clean_xs, layer=layer), layer=layer)


def nmr_scores(model: QualityModel, xs: list[np.ndarray], refs: ReferenceSet,
               layer: str | None = None) -> np.ndarray:
    """Mean Euclidean distance from each sample's embedding to the references.

    Lower is closer to clean. `layer` defaults to the layer the references
    were embedded at; passing a different one is an error.
    """
    layer = layer or refs.layer
    if layer != refs.layer:
        raise ValueError(f"references were embedded at layer {refs.layer!r}, not {layer!r}")
    emb = model.embed(xs, layer=layer)
    if emb.shape[1] != refs.embeddings.shape[1]:
        raise ValueError("embedding dimension does not match the reference set")
    diff = emb[:, None, :] - refs.embeddings[None, :, :]
    return np.sqrt(np.einsum("irk,irk->ir", diff, diff)).mean(axis=1)


def nmr_score(model: QualityModel, x: np.ndarray, refs: ReferenceSet,
              layer: str | None = None) -> float:
    return float(nmr_scores(model, [x], refs, layer=layer)[0])
