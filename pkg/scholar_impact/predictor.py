"""Impact predictors

Three families share one ``predict(title, abstract, extras=None)`` contract:

- ``RemotePredictor`` asks a chat model with one of the scoring prompts and
  parses the first decimal number in the reply.
- ``NativePredictor`` runs a small regressor: hashed bag-of-words features,
  one tanh hidden layer and a sigmoid output, trained here with plain
  mini-batch gradient descent.
- ``ConstantPredictor`` and ``HashRandomPredictor`` are reference baselines.

Parameter file format (JSON, one object):

    format_version  int, currently 1
    dim             feature dimension D
    hidden          hidden width H
    seed            initialisation seed
    loss_kind       loss the parameters were trained with
    activation      hidden activation, always "tanh"
    w1              H x D nested list
    b1              H list
    w2              H list
    b2              float
"""

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit, logit

from .exceptions import (
    ExtrasIncomplete,
    NonDifferentiablePoint,
    NonFiniteLoss,
    ShapeMismatch,
    Unparseable,
)
from .llm_client import ChatGateway
from .models import ExtrasRecord
from .prompt_library import PromptTemplate, load_template

if TYPE_CHECKING:
    from .dataset_builder import LabeledExample

logger = logging.getLogger(__name__)

SCORING_TEMPLATES: Dict[str, PromptTemplate] = {
    "title_abstract": load_template("title_abstract", "scoring_title_abstract.txt"),
    "guided": load_template("guided", "scoring_guided.txt"),
    "entitled": load_template("entitled", "scoring_entitled.txt"),
    "entitled_bounded": load_template("entitled_bounded", "scoring_entitled_bounded.txt"),
}
DEFAULT_SCORING_TEMPLATE = "entitled_bounded"
EXTRAS_TEMPLATE = load_template(
    "with_extras",
    "scoring_with_extras.txt",
    placeholders=("title", "abstract", "sota_claim", "released_dataset", "open_access_code", "rqm"),
)

PARAMS_FORMAT_VERSION = 1
_DECIMAL = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)")
_TOKEN = re.compile(r"\w+")
KINK_MARGIN = 1e-4


def _yes_no(flag: bool) -> str:
    return "Yes" if flag else "No"


def render_scoring_prompt(
    title: str,
    abstract: str,
    extras: Optional[ExtrasRecord] = None,
    template_name: Optional[str] = None,
) -> str:
    """Scoring prompt for a paper; passing ``extras`` selects the extras template"""
    if not title.strip() or not abstract.strip():
        raise ValueError("scoring prompt needs a non-empty title and abstract")

    if extras is not None:
        if not extras.is_complete():
            missing = [name for name, value in extras.model_dump().items() if value is None]
            raise ExtrasIncomplete(f"extras missing {', '.join(missing)}")
        return EXTRAS_TEMPLATE.render(
            title=title,
            abstract=abstract,
            sota_claim=_yes_no(extras.sota_claim),
            released_dataset=_yes_no(extras.released_dataset),
            open_access_code=_yes_no(extras.open_access_code),
            rqm=str(float(extras.rqm)),
        )

    name = template_name or DEFAULT_SCORING_TEMPLATE
    if name not in SCORING_TEMPLATES:
        raise KeyError(f"unknown scoring template '{name}' (choose from {', '.join(SCORING_TEMPLATES)})")
    return SCORING_TEMPLATES[name].render(title=title, abstract=abstract)


def parse_score(text: str) -> float:
    """First decimal literal in a model reply, clamped to [0, 1]"""
    match = _DECIMAL.search(text or "")
    if match is None:
        raise Unparseable(f"no numeric score in response: {text!r}")
    value = float(match.group(0))
    if not math.isfinite(value):
        raise Unparseable(f"non-finite score in response: {text!r}")
    if value < 0.0 or value > 1.0:
        clamped = min(1.0, max(0.0, value))
        logger.warning(f"Score {value} outside [0, 1], clamped to {clamped}")
        return clamped
    return value


@runtime_checkable
class ImpactPredictor(Protocol):
    """Anything that maps a title and abstract to a score in [0, 1]"""

    def predict(self, title: str, abstract: str, extras: Optional[ExtrasRecord] = None) -> float:
        ...


class RemotePredictor:
    """Scores papers through the chat gateway"""

    def __init__(self, gateway: ChatGateway, template_name: Optional[str] = None):
        self.gateway = gateway
        self.template_name = template_name or DEFAULT_SCORING_TEMPLATE

    def predict(self, title: str, abstract: str, extras: Optional[ExtrasRecord] = None) -> float:
        prompt = render_scoring_prompt(title, abstract, extras, self.template_name)
        try:
            reply = self.gateway.complete(prompt)
        except Exception as e:
            logger.error(f"Remote scoring failed for '{title[:60]}': {e}")
            raise
        return parse_score(reply)


class ConstantPredictor:
    def __init__(self, value: float = 0.5):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"constant prediction must lie in [0, 1], got {value}")
        self.value = value

    def predict(self, title: str, abstract: str, extras: Optional[ExtrasRecord] = None) -> float:
        return self.value


class HashRandomPredictor:
    """Pseudo-random score that depends only on the title and seed"""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def predict(self, title: str, abstract: str, extras: Optional[ExtrasRecord] = None) -> float:
        digest = hashlib.blake2b(f"{self.seed}:{title}".encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") / 2.0 ** 64


# Native regressor

@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ShapeMismatch(f"feature vector must be 1-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector has non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def token_bucket(token: str, dim: int) -> int:
    """blake2b (8-byte digest, little-endian) of the UTF-8 token, modulo dim"""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def encode_text(title: str, abstract: str, dim: int = 4096) -> FeatureVector:
    """L2-normalised counts of lowercase word tokens hashed into ``dim`` buckets"""
    if dim < 2:
        raise ValueError(f"dim must be at least 2, got {dim}")
    values = np.zeros(dim, dtype=float)
    tokens = _TOKEN.findall(f"{title} {abstract}".lower())
    if not tokens:
        logger.warning("Encoding empty text; returning a zero vector")
        return FeatureVector(values)
    for token in tokens:
        values[token_bucket(token, dim)] += 1.0
    return FeatureVector(values / np.linalg.norm(values))


@dataclass
class RegressorParams:
    """MLP D -> H -> 1 with tanh hidden units"""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    seed: int = 0
    loss_kind: str = "mse"
    activation: str = "tanh"

    def __post_init__(self):
        hidden, dim = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise ShapeMismatch(
                f"inconsistent parameter shapes: w1 {self.w1.shape}, b1 {self.b1.shape}, w2 {self.w2.shape}"
            )

    @property
    def dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.w1)) and np.all(np.isfinite(self.b1))
            and np.all(np.isfinite(self.w2)) and math.isfinite(self.b2)
        )

    def copy(self) -> "RegressorParams":
        return RegressorParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2),
                               self.seed, self.loss_kind, self.activation)


def init_params(dim: int, hidden: int = 64, seed: int = 0) -> RegressorParams:
    """Uniform in +-1/sqrt(fan_in) from a seeded generator"""
    if dim < 2 or hidden < 1:
        raise ValueError(f"need dim >= 2 and hidden >= 1, got {dim}, {hidden}")
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / math.sqrt(dim)
    bound2 = 1.0 / math.sqrt(hidden)
    return RegressorParams(
        w1=rng.uniform(-bound1, bound1, size=(hidden, dim)),
        b1=rng.uniform(-bound1, bound1, size=hidden),
        w2=rng.uniform(-bound2, bound2, size=hidden),
        b2=float(rng.uniform(-bound2, bound2)),
        seed=seed,
    )


def _as_matrix(features: Union[FeatureVector, np.ndarray], params: RegressorParams) -> np.ndarray:
    values = features.values if isinstance(features, FeatureVector) else np.asarray(features, dtype=float)
    matrix = np.atleast_2d(values)
    if matrix.ndim != 2 or matrix.shape[1] != params.dim:
        raise ShapeMismatch(f"features of shape {values.shape} do not match model dimension {params.dim}")
    return matrix


def forward_logits(features: Union[FeatureVector, np.ndarray], params: RegressorParams) -> np.ndarray:
    hidden = np.tanh(_as_matrix(features, params) @ params.w1.T + params.b1)
    return hidden @ params.w2 + params.b2


def forward(features: Union[FeatureVector, np.ndarray], params: RegressorParams) -> Union[float, np.ndarray]:
    """Sigmoid of the MLP output; a scalar for one vector, an array for a matrix"""
    probabilities = expit(forward_logits(features, params))
    is_single = isinstance(features, FeatureVector) or np.ndim(features) == 1
    return float(probabilities[0]) if is_single else probabilities


class LossKind(Enum):
    MSE = "mse"
    L1 = "l1"
    SMOOTH_L1 = "smooth_l1"
    BCE = "bce"


class TrainConfig(BaseModel):
    """Training knobs; defaults follow the reference fine-tuning setup"""

    model_config = ConfigDict(frozen=True)

    loss_kind: LossKind = LossKind.MSE
    smoothl1_delta: float = Field(default=1.0, gt=0)
    learning_rate: float = Field(default=5e-5, ge=0)
    epochs: int = Field(default=5, ge=1)
    batch_size: int = Field(default=16, ge=1)
    dim: int = Field(default=4096, ge=2)
    hidden: int = Field(default=64, ge=1)
    seed: int = 0


def _loss_terms(logits: np.ndarray, targets: np.ndarray, config: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample loss and its derivative with respect to the logit"""
    p = expit(logits)
    diff = p - targets
    slope = p * (1.0 - p)
    kind = config.loss_kind

    if kind is LossKind.MSE:
        return diff ** 2, 2.0 * diff * slope
    if kind is LossKind.L1:
        return np.abs(diff), np.sign(diff) * slope
    if kind is LossKind.SMOOTH_L1:
        delta = config.smoothl1_delta
        small = np.abs(diff) < delta
        values = np.where(small, 0.5 * diff ** 2 / delta, np.abs(diff) - 0.5 * delta)
        grads = np.where(small, diff / delta, np.sign(diff)) * slope
        return values, grads
    # BCE on the logit: softplus(z) - t*z
    return np.logaddexp(0.0, logits) - targets * logits, diff


def loss(pred: float, target: float, config: Optional[TrainConfig] = None, pre_sigmoid: Optional[float] = None) -> float:
    """Loss of one prediction; BCE uses ``pre_sigmoid`` when given, else logit(pred)"""
    config = config or TrainConfig()
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target must lie in [0, 1], got {target}")
    if config.loss_kind is not LossKind.BCE:
        # evaluate directly on pred so pred == target gives exactly 0
        diff = pred - target
        if config.loss_kind is LossKind.MSE:
            return diff ** 2
        if config.loss_kind is LossKind.L1:
            return abs(diff)
        delta = config.smoothl1_delta
        return 0.5 * diff ** 2 / delta if abs(diff) < delta else abs(diff) - 0.5 * delta
    if pre_sigmoid is None:
        pre_sigmoid = float(logit(np.clip(pred, 1e-15, 1.0 - 1e-15)))
    values, _ = _loss_terms(np.array([pre_sigmoid]), np.array([target]), config)
    return float(values[0])


def _backprop(
    params: RegressorParams, features: np.ndarray, targets: np.ndarray, config: TrainConfig
) -> Tuple[float, Dict[str, Union[np.ndarray, float]]]:
    """Mean loss over a batch and its gradient for every parameter"""
    hidden = np.tanh(features @ params.w1.T + params.b1)
    logits = hidden @ params.w2 + params.b2
    values, dlogit = _loss_terms(logits, targets, config)

    n = features.shape[0]
    dz = dlogit / n
    dhidden = np.outer(dz, params.w2) * (1.0 - hidden ** 2)
    grads = {
        "w1": dhidden.T @ features,
        "b1": dhidden.sum(axis=0),
        "w2": hidden.T @ dz,
        "b2": float(dz.sum()),
    }
    return float(values.mean()), grads


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_mae: Optional[float]


@dataclass
class TrainResult:
    params: RegressorParams
    best_epoch: int
    history: List[EpochStats] = field(default_factory=list)

    @property
    def best_val_mae(self) -> Optional[float]:
        return self.history[self.best_epoch - 1].val_mae if self.history else None


def fit_regressor(
    train_features: np.ndarray,
    train_targets: Sequence[float],
    val_features: Optional[np.ndarray] = None,
    val_targets: Optional[Sequence[float]] = None,
    config: Optional[TrainConfig] = None,
    params: Optional[RegressorParams] = None,
) -> TrainResult:
    """Mini-batch gradient descent over precomputed feature rows

    Keeps the parameters of the epoch with the lowest validation MAE (first
    one on ties); without validation data the last epoch wins.
    """
    config = config or TrainConfig()
    x_train = np.asarray(train_features, dtype=float)
    y_train = np.asarray(train_targets, dtype=float)
    if x_train.ndim != 2 or x_train.shape[0] == 0:
        raise ValueError("training features must be a non-empty 2-D array")
    if y_train.shape != (x_train.shape[0],):
        raise ShapeMismatch(f"{x_train.shape[0]} feature rows but {y_train.shape} targets")

    params = params.copy() if params else init_params(x_train.shape[1], config.hidden, config.seed)
    params.loss_kind = config.loss_kind.value
    _as_matrix(x_train, params)

    has_val = val_features is not None and val_targets is not None and len(val_targets) > 0
    if has_val:
        x_val = np.asarray(val_features, dtype=float)
        y_val = np.asarray(val_targets, dtype=float)
        _as_matrix(x_val, params)
    else:
        logger.warning("No validation data; keeping the final epoch's parameters")

    rng = np.random.default_rng(config.seed)
    history: List[EpochStats] = []
    best: Optional[RegressorParams] = None
    best_epoch = 0
    best_mae = math.inf
    step = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(x_train.shape[0])
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            step += 1
            batch = order[start:start + config.batch_size]
            batch_loss, grads = _backprop(params, x_train[batch], y_train[batch], config)
            if not math.isfinite(batch_loss):
                raise NonFiniteLoss(f"loss became {batch_loss}", epoch, step)
            lr = config.learning_rate
            params.w1 -= lr * grads["w1"]
            params.b1 -= lr * grads["b1"]
            params.w2 -= lr * grads["w2"]
            params.b2 -= lr * grads["b2"]
            if not params.is_finite():
                raise NonFiniteLoss("parameters diverged", epoch, step)
            batch_losses.append(batch_loss)

        val_mae = float(np.mean(np.abs(expit(forward_logits(x_val, params)) - y_val))) if has_val else None
        stats = EpochStats(epoch, float(np.mean(batch_losses)), val_mae)
        history.append(stats)
        logger.info(
            f"Epoch {epoch}/{config.epochs}: {config.loss_kind.value} loss {stats.train_loss:.6f}"
            + (f", val MAE {val_mae:.4f}" if val_mae is not None else "")
        )

        if not has_val or val_mae < best_mae:
            best, best_epoch, best_mae = params.copy(), epoch, (val_mae if has_val else best_mae)

    return TrainResult(params=best, best_epoch=best_epoch, history=history)


def examples_to_matrix(examples: Sequence["LabeledExample"], dim: int) -> Tuple[np.ndarray, np.ndarray]:
    features = np.stack([encode_text(e.paper.title, e.paper.abstract, dim).values for e in examples])
    targets = np.array([e.tncsi_sp for e in examples], dtype=float)
    return features, targets


def train_baseline(
    train: Sequence["LabeledExample"],
    val: Sequence["LabeledExample"] = (),
    config: Optional[TrainConfig] = None,
) -> TrainResult:
    """Train the native regressor on labeled examples' title and abstract"""
    config = config or TrainConfig()
    if not train:
        raise ValueError("training set is empty")
    x_train, y_train = examples_to_matrix(train, config.dim)
    x_val, y_val = examples_to_matrix(val, config.dim) if val else (None, None)
    logger.info(f"Training baseline on {len(train)} example(s), validating on {len(val)}")
    return fit_regressor(x_train, y_train, x_val, y_val, config)


def gradient_check(
    params: RegressorParams,
    features: Union[FeatureVector, np.ndarray],
    target: float,
    config: Optional[TrainConfig] = None,
    step: float = 1e-5,
) -> float:
    """Largest relative gap between analytic and central-difference gradients"""
    config = config or TrainConfig()
    x = _as_matrix(features, params)[:1]
    y = np.array([target], dtype=float)

    gap = abs(float(expit(forward_logits(x, params))[0]) - target)
    if config.loss_kind is LossKind.L1 and gap < KINK_MARGIN:
        raise NonDifferentiablePoint(f"L1 is not differentiable at pred == target (gap {gap:.2e})")
    if config.loss_kind is LossKind.SMOOTH_L1 and abs(gap - config.smoothl1_delta) < KINK_MARGIN:
        raise NonDifferentiablePoint(f"SmoothL1 gap {gap:.6f} is at the delta boundary")

    _, grads = _backprop(params, x, y, config)
    worst = 0.0
    shifted = params.copy()

    def _measure() -> float:
        return _backprop(shifted, x, y, config)[0]

    for name in ("w1", "b1", "w2"):
        array = getattr(shifted, name)
        analytic = np.asarray(grads[name])
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + step
            upper = _measure()
            array[index] = original - step
            lower = _measure()
            array[index] = original
            numeric = (upper - lower) / (2.0 * step)
            worst = max(worst, _relative_error(analytic[index], numeric))

    original = shifted.b2
    shifted.b2 = original + step
    upper = _measure()
    shifted.b2 = original - step
    lower = _measure()
    shifted.b2 = original
    worst = max(worst, _relative_error(grads["b2"], (upper - lower) / (2.0 * step)))
    return worst


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)


def save_params(params: RegressorParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format_version": PARAMS_FORMAT_VERSION,
        "dim": params.dim,
        "hidden": params.hidden,
        "seed": params.seed,
        "loss_kind": params.loss_kind,
        "activation": params.activation,
        "w1": params.w1.tolist(),
        "b1": params.b1.tolist(),
        "w2": params.w2.tolist(),
        "b2": float(params.b2),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f)
    logger.info(f"Saved regressor parameters (D={params.dim}, H={params.hidden}) to {path}")
    return path


def load_params(path: Union[str, Path]) -> RegressorParams:
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)

    version = document.get("format_version")
    if version != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported parameter format_version {version!r}")
    if document.get("activation", "tanh") != "tanh":
        raise ValueError(f"unsupported activation {document['activation']!r}")

    params = RegressorParams(
        w1=np.asarray(document["w1"], dtype=float).reshape(document["hidden"], document["dim"]),
        b1=np.asarray(document["b1"], dtype=float),
        w2=np.asarray(document["w2"], dtype=float),
        b2=float(document["b2"]),
        seed=int(document.get("seed", 0)),
        loss_kind=document.get("loss_kind", LossKind.MSE.value),
    )
    if not params.is_finite():
        raise ValueError(f"parameters in {path} contain non-finite values")
    return params


class NativePredictor:
    """Frozen regressor behind the common predict contract"""

    def __init__(self, params: RegressorParams):
        self.params = params

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "NativePredictor":
        return cls(load_params(path))

    def predict(self, title: str, abstract: str, extras: Optional[ExtrasRecord] = None) -> float:
        return forward(encode_text(title, abstract, self.params.dim), self.params)
