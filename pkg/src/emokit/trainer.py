"""Desk-scale downstream head over frozen layer-stacked features.

The head is: softmax layer weighting -> temporal mean pooling -> dense(256)
-> ReLU -> dense(C), trained with class-balanced cross-entropy (per-class
factor (1 - beta) / (1 - beta^n_j)) under AdamW.  Everything is plain
numpy with hand-written gradients so runs are bit-deterministic per seed
and the backward pass can be audited against finite differences.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import LabelKind, LabelRecord
from .corpus import EmotionTaxonomy
from .errors import TrainerError
from .evaluation import EvalResult, binarize, gold_to_multihot, macro_f1

# ---------------------------------------------------------------------------
# Feature stacks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureStack:
    """Frozen upstream features for one utterance: layers x frames x dims."""

    utterance_id: str
    layers: np.ndarray  # (L, T, D) float

    def __post_init__(self) -> None:
        arr = np.asarray(self.layers, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise TrainerError(
                f"feature stack '{self.utterance_id}' must be (L, T, D) with all dims >= 1, "
                f"got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise TrainerError(f"feature stack '{self.utterance_id}' has non-finite entries")
        object.__setattr__(self, "layers", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.layers.shape

    def layer_means(self) -> np.ndarray:
        """Per-layer temporal means, shape (L, D); sufficient for the head."""
        return self.layers.mean(axis=1)


def save_feature_stack(stack: FeatureStack, directory: str | Path) -> Path:
    """Write ``<utt>.bin`` (little-endian float32) plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    L, T, D = stack.shape
    bin_path = directory / f"{stack.utterance_id}.bin"
    bin_path.write_bytes(stack.layers.astype("<f4").tobytes(order="C"))
    sidecar = directory / f"{stack.utterance_id}.json"
    sidecar.write_text(json.dumps(
        {"utterance_id": stack.utterance_id, "L": L, "T": T, "D": D}) + "\n",
        encoding="utf-8")
    return sidecar


def load_feature_stack(sidecar_path: str | Path) -> FeatureStack:
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    L, T, D = int(meta["L"]), int(meta["T"]), int(meta["D"])
    raw = sidecar_path.with_suffix(".bin").read_bytes()
    expected = L * T * D * 4
    if len(raw) != expected:
        raise TrainerError(
            f"{sidecar_path}: payload is {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(L, T, D).astype(np.float64)
    return FeatureStack(utterance_id=str(meta["utterance_id"]), layers=arr)


def load_feature_dir(directory: str | Path) -> list[FeatureStack]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise TrainerError(f"no feature sidecars found in {directory}")
    return [load_feature_stack(p) for p in paths]


# ---------------------------------------------------------------------------
# Layer weights and aggregation
# ---------------------------------------------------------------------------


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@dataclass(frozen=True)
class LayerWeights:
    """Trainable per-layer scalars; ``normalized`` is their softmax."""

    logits: np.ndarray  # (L,)

    def __post_init__(self) -> None:
        arr = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        if arr.size < 1 or not np.all(np.isfinite(arr)):
            raise TrainerError("layer logits must be a non-empty finite vector")
        object.__setattr__(self, "logits", arr)

    @property
    def normalized(self) -> np.ndarray:
        return softmax(self.logits)


def aggregate_features(stack: FeatureStack, weights: LayerWeights) -> np.ndarray:
    """Weighted sum over layers, then mean over frames; shape (D,)."""
    L = stack.shape[0]
    w = weights.normalized
    if w.shape[0] != L:
        raise TrainerError(f"{w.shape[0]} layer weights for a {L}-layer stack")
    return np.einsum("l,ld->d", w, stack.layer_means())


# ---------------------------------------------------------------------------
# Class-balanced cross-entropy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CbceConfig:
    """Per-class positive counts plus the balancing hyperparameter beta."""

    beta: float
    class_counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 0.0 < self.beta <= 1.0:
            raise TrainerError(f"beta must be in (0, 1], got {self.beta}")
        for n in self.class_counts:
            if n < 0 or n != int(n):
                raise TrainerError(f"class counts must be non-negative integers, got {n}")


def cbce_factors(cfg: CbceConfig) -> np.ndarray:
    """factor_j = (1 - beta) / (1 - beta^n_j); the beta -> 1 limit is 1/n_j."""
    counts = np.asarray(cfg.class_counts, dtype=np.float64)
    if np.any(counts < 1):
        bad = [j for j, n in enumerate(cfg.class_counts) if n < 1]
        raise TrainerError(
            f"cbce factor undefined for classes with zero positives: {bad}", classes=bad)
    if cfg.beta == 1.0:
        return 1.0 / counts
    return (1.0 - cfg.beta) / (1.0 - cfg.beta ** counts)


def cbce_loss(logits: Sequence[float] | np.ndarray,
              target: Sequence[float] | np.ndarray,
              factors: Sequence[float] | np.ndarray) -> tuple[float, np.ndarray]:
    """Loss sum_j factor_j * (-target_j * log softmax(logits)_j) and d(loss)/d(logits)."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    f = np.asarray(factors, dtype=np.float64)
    if z.shape != t.shape or z.shape != f.shape:
        raise TrainerError(f"shape mismatch: logits {z.shape}, target {t.shape}, "
                           f"factors {f.shape}")
    if not np.all(np.isfinite(z)):
        raise TrainerError("non-finite logits")
    log_p = log_softmax(z)
    loss = float(-(f * np.where(t > 0, t * log_p, 0.0)).sum())
    # d/dz_k [ -sum_j f_j t_j log p_j ] = (sum_j f_j t_j) p_k - f_k t_k
    s = float((f * t).sum())
    grad = s * np.exp(log_p) - f * t
    return loss, grad


# ---------------------------------------------------------------------------
# Head parameters, forward, backward
# ---------------------------------------------------------------------------

PARAM_NAMES = ("layer_logits", "w1", "b1", "w2", "b2")


@dataclass
class HeadParams:
    """All trainable state: layer logits plus the two dense layers."""

    layer_logits: np.ndarray  # (L,)
    w1: np.ndarray            # (D, H)
    b1: np.ndarray            # (H,)
    w2: np.ndarray            # (H, C)
    b2: np.ndarray            # (C,)

    @property
    def n_layers(self) -> int:
        return self.layer_logits.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "HeadParams":
        return HeadParams(**{name: getattr(self, name).copy() for name in PARAM_NAMES})


def init_params(L: int, D: int, C: int, hidden: int,
                rng: np.random.Generator) -> HeadParams:
    # He init for the ReLU layer, Glorot-ish for the output layer.
    return HeadParams(
        layer_logits=np.zeros(L),
        w1=rng.normal(0.0, math.sqrt(2.0 / D), size=(D, hidden)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, math.sqrt(1.0 / hidden), size=(hidden, C)),
        b2=np.zeros(C),
    )


def head_forward(params: HeadParams, layer_means: np.ndarray) -> np.ndarray:
    """Logits for a batch of per-layer mean features, shape (B, L, D) -> (B, C)."""
    w = softmax(params.layer_logits)
    x = np.einsum("bld,l->bd", layer_means, w)
    h = np.maximum(x @ params.w1 + params.b1, 0.0)
    return h @ params.w2 + params.b2


def head_loss_and_grads(params: HeadParams,
                        layer_means: np.ndarray,
                        targets: np.ndarray,
                        factors: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean CBCE over the batch plus analytic gradients for every parameter.

    ``layer_means``: (B, L, D) per-utterance layer means; ``targets``: (B, C)
    distribution labels; ``factors``: (C,) class-balancing weights.
    """
    B = layer_means.shape[0]
    w = softmax(params.layer_logits)                      # (L,)
    x = np.einsum("bld,l->bd", layer_means, w)            # (B, D)
    h_pre = x @ params.w1 + params.b1                     # (B, H)
    h = np.maximum(h_pre, 0.0)
    z = h @ params.w2 + params.b2                         # (B, C)

    log_p = log_softmax(z, axis=1)
    p = np.exp(log_p)
    loss = float(-(factors * np.where(targets > 0, targets * log_p, 0.0)).sum() / B)

    s = (factors * targets).sum(axis=1, keepdims=True)    # (B, 1)
    dz = (s * p - factors * targets) / B                  # (B, C)

    dw2 = h.T @ dz
    db2 = dz.sum(axis=0)
    dh = dz @ params.w2.T
    dh_pre = dh * (h_pre > 0.0)
    dw1 = x.T @ dh_pre
    db1 = dh_pre.sum(axis=0)
    dx = dh_pre @ params.w1.T                             # (B, D)

    dw = np.einsum("bd,bld->l", dx, layer_means)          # (L,)
    dlogits = w * (dw - float(w @ dw))                    # softmax backward

    grads = {"layer_logits": dlogits, "w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
    return loss, grads


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: HeadParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.as_dict().items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, value in self.params.as_dict().items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            value -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                + self.weight_decay * value)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    beta: float = 0.9999      # class-balance hyperparameter
    hidden: int = 256
    seed: int = 7
    weight_decay: float = 0.01

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class TrainResult:
    params: HeadParams        # best checkpoint (lowest dev loss)
    best_epoch: int
    history: list[dict]       # per-epoch train/dev loss + dev macro-F1
    factors: np.ndarray
    config: TrainConfig

    @property
    def best_dev_loss(self) -> float:
        return self.history[self.best_epoch - 1]["dev_loss"]


def _prepare(dataset: Sequence[tuple[FeatureStack, LabelRecord]],
             taxonomy: EmotionTaxonomy,
             what: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not dataset:
        raise TrainerError(f"empty {what} split")
    means, targets, bits = [], [], []
    for stack, label in dataset:
        if label.kind is not LabelKind.DISTRIBUTION:
            raise TrainerError(
                f"{what}: '{label.utterance_id}' is not a distribution label; "
                "train on all-inclusive targets")
        means.append(stack.layer_means())
        targets.append(label.distribution)
        bits.append(gold_to_multihot(label, taxonomy))
    shapes = {m.shape for m in means}
    if len(shapes) > 1:
        raise TrainerError(f"{what}: inconsistent feature shapes {sorted(shapes)}")
    return (np.asarray(means), np.asarray(targets, dtype=np.float64),
            np.asarray(bits, dtype=np.int64))


def positive_counts(golds: np.ndarray) -> tuple[int, ...]:
    """Per-class positive-sample counts from binarized gold bits."""
    return tuple(int(n) for n in golds.sum(axis=0))


def train(train_set: Sequence[tuple[FeatureStack, LabelRecord]],
          dev_set: Sequence[tuple[FeatureStack, LabelRecord]],
          taxonomy: EmotionTaxonomy,
          config: TrainConfig = TrainConfig()) -> TrainResult:
    """Train the head; the returned checkpoint minimizes dev CBCE loss.

    Deterministic for a fixed config: init and batch order come from one
    seeded generator, and all reductions have fixed order.
    """
    X_train, T_train, bits_train = _prepare(train_set, taxonomy, "train")
    X_dev, T_dev, bits_dev = _prepare(dev_set, taxonomy, "dev")
    n, L, D = X_train.shape
    C = taxonomy.C

    counts = positive_counts(bits_train)
    factors = cbce_factors(CbceConfig(beta=config.beta, class_counts=counts))

    rng = np.random.default_rng(config.seed)
    params = init_params(L, D, C, config.hidden, rng)
    opt = AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)

    best: HeadParams | None = None
    best_loss = math.inf
    best_epoch = 0
    history: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = head_loss_and_grads(params, X_train[idx], T_train[idx], factors)
            opt.step(grads)
            epoch_loss += loss * len(idx)
        dev_loss, _ = head_loss_and_grads(params, X_dev, T_dev, factors)
        dev_probs = softmax(head_forward(params, X_dev), axis=1)
        dev_f1 = macro_f1([binarize(row) for row in dev_probs],
                          [tuple(b) for b in bits_dev]).macro_f1
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "dev_loss": dev_loss,
            "dev_macro_f1": dev_f1,
        })
        if dev_loss < best_loss:
            best_loss = dev_loss
            best = params.copy()
            best_epoch = epoch

    assert best is not None
    return TrainResult(params=best, best_epoch=best_epoch, history=history,
                       factors=factors, config=config)


def evaluate_head(params: HeadParams,
                  dataset: Sequence[tuple[FeatureStack, LabelRecord]],
                  taxonomy: EmotionTaxonomy) -> EvalResult:
    X, _, bits = _prepare(dataset, taxonomy, "eval")
    probs = softmax(head_forward(params, X), axis=1)
    return macro_f1([binarize(row) for row in probs], [tuple(b) for b in bits])


# ---------------------------------------------------------------------------
# Layer-weight reporting
# ---------------------------------------------------------------------------


def layer_weight_report(checkpoints: Sequence[HeadParams]) -> np.ndarray:
    """Softmax-normalize each checkpoint's layer logits, then average."""
    if not checkpoints:
        raise TrainerError("no checkpoints to report on")
    sizes = {cp.n_layers for cp in checkpoints}
    if len(sizes) > 1:
        raise TrainerError(f"checkpoints disagree on layer count: {sorted(sizes)}")
    stacked = np.stack([softmax(cp.layer_logits) for cp in checkpoints])
    return stacked.mean(axis=0)


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------


def save_checkpoint(params: HeadParams, config: TrainConfig, path: str | Path) -> None:
    payload = {
        "config": asdict(config),
        "config_hash": config.config_hash(),
        "params": {name: arr.tolist() for name, arr in params.as_dict().items()},
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[HeadParams, TrainConfig]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    config = TrainConfig(**payload["config"])
    if payload.get("config_hash") != config.config_hash():
        raise TrainerError(f"{path}: config hash mismatch")
    params = HeadParams(**{name: np.asarray(v, dtype=np.float64)
                           for name, v in payload["params"].items()})
    return params, config


# ---------------------------------------------------------------------------
# Synthetic features (so the loop runs with no external model)
# ---------------------------------------------------------------------------


def make_synthetic_dataset(taxonomy: EmotionTaxonomy,
                           n_per_class: int,
                           L: int = 3,
                           T: int = 10,
                           D: int = 16,
                           separation: float = 3.0,
                           noise: float = 1.0,
                           seed: int = 7) -> list[tuple[FeatureStack, LabelRecord]]:
    """Gaussian class clusters per layer; labels are one-hot distributions."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(taxonomy.C, L, D))
    centers *= separation / np.linalg.norm(centers, axis=2, keepdims=True)
    dataset: list[tuple[FeatureStack, LabelRecord]] = []
    for c, name in enumerate(taxonomy.classes):
        for i in range(n_per_class):
            frames = centers[c][:, None, :] + rng.normal(0.0, noise, size=(L, T, D))
            utt_id = f"synth-{name}-{i:04d}"
            stack = FeatureStack(utterance_id=utt_id, layers=frames)
            dist = tuple(1.0 if j == c else 0.0 for j in range(taxonomy.C))
            dataset.append((stack, LabelRecord(utt_id, LabelKind.DISTRIBUTION,
                                               distribution=dist)))
    return dataset
