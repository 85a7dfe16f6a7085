"""Adam, training/evaluation loops and the binary checkpoint format."""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .errors import ConfigError, IoError, ParseError, VersionError
from .metrics import ConfusionMatrix, confusion_update
from .model import backward_batch, build_rsnet, forward_batch, median_freq_weights, softmax_cross_entropy
from .pcio import LabeledCloud, read_cloud, scene_series
from .pipeline import MergeAccumulator, merge_votes, sample_cover, sample_fixed, split_cubes

log = logging.getLogger(__name__)

MAGIC = b"RSNCKPT1"


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "OptimState":
        return cls(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


def adam_step(params: dict, grads: dict, state: OptimState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype, copy=False)


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


# -- data -----------------------------------------------------------------


def _data_paths(spec: str) -> list[Path]:
    paths = []
    for part in (p.strip() for p in spec.split(",")):
        if not part:
            continue
        path = Path(part)
        paths += sorted(path.glob("*.pts")) if path.is_dir() else [path]
    return paths


def load_scenes(cfg: RunConfig, split: str) -> list[LabeledCloud]:
    """Scenes for ``split`` ("train" or "test").

    Reads ``cfg.train_data`` / ``cfg.test_data`` (a directory of ``.pts`` files
    or a comma-separated file list) when set, otherwise generates synthetic
    scenes. Synthetic train and test scenes come from one seeded series, so
    they never overlap.
    """
    spec = cfg.train_data if split == "train" else cfg.test_data
    if spec:
        paths = _data_paths(spec)
        if not paths:
            raise ConfigError(f"no scenes found for {split}_data = {spec!r}")
        scenes = [read_cloud(p, cfg.num_classes) for p in paths]
    else:
        n_train, n_test = cfg.synth_train_scenes, cfg.synth_test_scenes
        extra = {"mode": "context", "cell_size": cfg.block_size} if cfg.synth_task == "context" else {}
        series = scene_series(n_train + n_test, cfg.synth_seed, num_points=cfg.synth_points, **extra)
        scenes = series[:n_train] if split == "train" else series[n_train:]
    for s in scenes:
        if s.num_classes != cfg.num_classes:
            raise ConfigError(f"scenes have {s.num_classes} classes but num_classes = {cfg.num_classes}")
    return scenes


def training_cubes(scenes: Sequence[LabeledCloud], cfg: RunConfig, seed: int, epoch: int):
    """One fixed-size sample per training cube, as ``(features, coords, labels)``."""
    bcfg = cfg.block_config()
    draw = epoch if bcfg.resample_each_epoch else 0
    out = []
    for si, scene in enumerate(scenes):
        for ci, (origin, idx) in enumerate(split_cubes(scene, bcfg, bcfg.train_stride)):
            s = sample_fixed(idx, scene, bcfg, [seed, draw, si, ci], origin)
            out.append((s.features, s.coords, scene.labels[s.source_indices]))
    return out


def class_weights(scenes, cfg: RunConfig):
    if cfg.class_weighting == "none":
        return None
    counts = sum(np.bincount(s.labels, minlength=cfg.num_classes) for s in scenes)
    return median_freq_weights(counts)


def train_epoch(scenes, cfg: RunConfig, params: dict, state: OptimState, seed: int, weights=None) -> float:
    """One pass over freshly sampled training cubes; returns the mean batch loss."""
    mcfg = cfg.model_config()
    cubes = training_cubes(scenes, cfg, seed, state.epoch)
    order = np.random.default_rng([seed, state.epoch, 7]).permutation(len(cubes))
    dtype = params["in.0.W"].dtype
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = [cubes[i] for i in order[start : start + cfg.batch_size]]
        logits, cache = forward_batch(params, mcfg, [b[0].astype(dtype) for b in batch], [b[1] for b in batch])
        loss, grad = softmax_cross_entropy(logits, np.concatenate([b[2] for b in batch]), weights)
        grads = backward_batch(cache, grad)
        adam_step(params, grads, state)
        losses.append(loss)
    state.epoch += 1
    return float(np.mean(losses))


# -- inference ----------------------------------------------------------------

Predictor = Callable[[LabeledCloud, list], list]


def model_predictor(params: dict, cfg: RunConfig) -> Predictor:
    mcfg = cfg.model_config()
    dtype = params["in.0.W"].dtype

    def predict(cloud, samples):
        preds = []
        for start in range(0, len(samples), cfg.batch_size):
            chunk = samples[start : start + cfg.batch_size]
            logits, _ = forward_batch(params, mcfg, [s.features.astype(dtype) for s in chunk], [s.coords for s in chunk])
            bounds = np.cumsum([0] + [len(s.source_indices) for s in chunk])
            preds += [logits[a:b].argmax(axis=1) for a, b in zip(bounds[:-1], bounds[1:])]
        return preds

    return predict


def oracle_predictor(cloud: LabeledCloud, samples) -> list:
    """Predicts ground truth; for checking the evaluation protocol itself."""
    return [cloud.labels[s.source_indices] for s in samples]


def predict_scene(cloud: LabeledCloud, cfg: RunConfig, predictor: Predictor, stride=None, seed=None):
    """Vote-merged labels for every point of ``cloud``; also returns the accumulator."""
    bcfg = cfg.block_config()
    seed = cfg.eval_seed if seed is None else seed
    samples = []
    for ci, (origin, idx) in enumerate(split_cubes(cloud, bcfg, stride)):
        samples += sample_cover(idx, cloud, bcfg, [seed, ci], origin)
    acc = MergeAccumulator(cloud.n, cfg.num_classes)
    for s, pred in zip(samples, predictor(cloud, samples)):
        acc.add(s.source_indices, pred)
    return merge_votes(acc), acc


def evaluate(scenes, cfg: RunConfig, predictor: Predictor, stride=None) -> ConfusionMatrix:
    cm = ConfusionMatrix(cfg.num_classes)
    for scene in scenes:
        pred, _ = predict_scene(scene, cfg, predictor, stride)
        confusion_update(cm, scene.labels, pred)
    return cm


# -- driver -----------------------------------------------------------------------


def fit(cfg: RunConfig, train_scenes, params=None, state=None, epochs=None, on_epoch=None):
    """Train from scratch (or resume from ``params``/``state``) for ``epochs`` epochs."""
    if params is None:
        params = build_rsnet(cfg.model_config(), cfg.seed)
    if state is None:
        state = OptimState.from_config(cfg)
    weights = class_weights(train_scenes, cfg)
    target = cfg.epochs if epochs is None else epochs
    history = []
    while state.epoch < target:
        loss = train_epoch(train_scenes, cfg, params, state, cfg.seed, weights)
        history.append(loss)
        log.info("epoch %d loss %.4f", state.epoch, loss)
        if on_epoch is not None:
            on_epoch(state.epoch, loss, params)
    return params, state, history


# -- checkpoints --------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict
    state: OptimState


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the RSNCKPT1 layout (little-endian, float32 tensors).

    Optimiser moments are stored as ``adam.m/<name>`` and ``adam.v/<name>``;
    the step and epoch counters as the length-1 tensors ``meta.step`` and
    ``meta.epoch``.
    """
    tensors = dict(ckpt.params)
    for name in ckpt.params:
        if name in ckpt.state.m:
            tensors[f"adam.m/{name}"] = ckpt.state.m[name]
            tensors[f"adam.v/{name}"] = ckpt.state.v[name]
    tensors["meta.step"] = np.array([ckpt.state.step])
    tensors["meta.epoch"] = np.array([ckpt.state.epoch])
    cfg_bytes = ckpt.config.to_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(cfg_bytes)), cfg_bytes, struct.pack("<Q", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:7] == MAGIC[:7] and data[7:8] != MAGIC[7:8] and len(data) >= 8:
        raise VersionError(f"unsupported checkpoint version {data[:8]!r}")
    if data[:8] != MAGIC:
        raise ParseError("not an RSNCKPT1 checkpoint (bad magic)")
    r = _Reader(data)
    r.take(8)
    (cfg_len,) = r.unpack("<Q")
    cfg = RunConfig.from_text(r.take(cfg_len).decode("utf-8"))
    (count,) = r.unpack("<Q")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise ParseError("trailing bytes after last tensor")
    state = OptimState.from_config(cfg)
    state.step = int(tensors.pop("meta.step")[0])
    state.epoch = int(tensors.pop("meta.epoch")[0])
    params = {}
    for name, arr in tensors.items():
        if name.startswith("adam.m/"):
            state.m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            state.v[name[7:]] = arr
        else:
            params[name] = arr
    return Checkpoint(cfg, params, state)
