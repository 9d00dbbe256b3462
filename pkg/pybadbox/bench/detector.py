import json
from pathlib import Path
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pybadbox.data.coco_io import parse_json
from pybadbox.exceptions import DatasetValidationError
from pybadbox.logs import get_logger
from pybadbox.utils import dumps, sha256_hex

logger = get_logger(__name__)

MODEL_FORMAT_VERSION = 1
PARAMETERS = ('w1', 'b1', 'w2', 'b2')


class DetectorArchitecture(BaseModel):
    """Window scales and stride of the scan, the feature grid and the layer sizes."""
    model_config = ConfigDict(frozen=True)

    window_sizes: tuple[int, ...] = (16, 24, 32)
    stride: int = Field(default=4, ge=1)
    feature_grid: int = Field(default=16, ge=2)
    hidden: int = Field(default=32, ge=4)
    category_ids: tuple[int, ...]

    @field_validator('window_sizes')
    @classmethod
    def positive_sizes(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or min(value) < 1:
            raise ValueError(f"Window sizes must be positive, got {value}")
        return value

    @field_validator('category_ids')
    @classmethod
    def some_classes(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or len(set(value)) != len(value):
            raise ValueError(f"Category ids must be distinct and non-empty, got {value}")
        return value

    @property
    def feature_dim(self) -> int:
        return self.feature_grid ** 2

    @property
    def num_outputs(self) -> int:
        """Object classes plus background at output 0."""
        return len(self.category_ids) + 1

    def digest(self) -> str:
        return sha256_hex(dumps(self.model_dump(mode='json')).encode('utf-8'))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class ToyDetector:
    """
    One-hidden-layer window scorer.

    logits = relu(x @ w1 + b1) * unit_mask @ w2 + b2 with the background class
    at logit 0. The score of class c is sigmoid(logit_c - logit_background).
    unit_mask zeroes pruned hidden units.
    """

    def __init__(self, architecture: DetectorArchitecture, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray,
                 b2: np.ndarray, unit_mask: np.ndarray | None = None, seed: int = 0,
                 train_config: dict | None = None, loss_history: list[float] | None = None):
        self.architecture = architecture
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.unit_mask = np.ones(architecture.hidden) if unit_mask is None else np.asarray(unit_mask, dtype=np.float64)
        self.seed = seed
        self.train_config = train_config
        self.loss_history = list(loss_history or [])
        self._check()

    def _check(self) -> None:
        arch = self.architecture
        expected = {
            'w1': (arch.feature_dim, arch.hidden), 'b1': (arch.hidden,),
            'w2': (arch.hidden, arch.num_outputs), 'b2': (arch.num_outputs,),
        }
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.shape != shape:
                raise ValueError(f"Parameter {name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"Parameter {name} holds non-finite values")
        if self.unit_mask.shape != (arch.hidden,):
            raise ValueError(f"Unit mask has shape {self.unit_mask.shape}, expected {(arch.hidden,)}")

    @classmethod
    def initialize(cls, architecture: DetectorArchitecture, seed: int = 0) -> 'ToyDetector':
        """He-initialized weights; a small positive hidden bias keeps units alive at the start."""
        rng = np.random.default_rng(seed)
        fan_in, hidden = architecture.feature_dim, architecture.hidden
        return cls(
            architecture,
            w1=rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, hidden)),
            b1=np.full(hidden, 0.01),
            w2=rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, architecture.num_outputs)),
            b2=np.zeros(architecture.num_outputs),
            seed=seed,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAMETERS}

    def copy(self) -> 'ToyDetector':
        return ToyDetector(self.architecture, *(p.copy() for p in self.params().values()),
                           unit_mask=self.unit_mask.copy(), seed=self.seed, train_config=self.train_config,
                           loss_history=self.loss_history)

    def pruned(self, units: np.ndarray | list[int]) -> 'ToyDetector':
        model = self.copy()
        model.unit_mask[np.asarray(units, dtype=np.int64)] = 0.0
        return model

    def hidden_activations(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(np.asarray(x, dtype=np.float64) @ self.w1 + self.b1, 0.0) * self.unit_mask

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        x = np.asarray(x, dtype=np.float64)
        pre = x @ self.w1 + self.b1
        active = np.maximum(pre, 0.0) * self.unit_mask
        logits = active @ self.w2 + self.b2
        return logits, {'x': x, 'pre': pre, 'active': active}

    def loss(self, x: np.ndarray, labels: np.ndarray) -> float:
        logits, _ = self.forward(x)
        return _cross_entropy(logits, labels)[0]

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean softmax cross-entropy over the batch and its gradient for every parameter."""
        logits, cache = self.forward(x)
        loss, dlogits = _cross_entropy(logits, labels)
        dactive = dlogits @ self.w2.T
        dpre = dactive * (cache['pre'] > 0) * self.unit_mask
        grads = {
            'w1': cache['x'].T @ dpre,
            'b1': dpre.sum(axis=0),
            'w2': cache['active'].T @ dlogits,
            'b2': dlogits.sum(axis=0),
        }
        return loss, grads

    def scores(self, x: np.ndarray) -> np.ndarray:
        """(n, classes) scores in [0, 1]; column j belongs to architecture.category_ids[j]."""
        logits, _ = self.forward(x)
        return _sigmoid(logits[:, 1:] - logits[:, :1])

    def to_record(self) -> dict:
        return {
            'format_version': MODEL_FORMAT_VERSION,
            'architecture': self.architecture.model_dump(mode='json'),
            'architecture_digest': self.architecture.digest(),
            'seed': self.seed,
            'train_config': self.train_config,
            'weights': {name: value.tolist() for name, value in self.params().items()},
            'unit_mask': self.unit_mask.tolist(),
            'loss_history': list(self.loss_history),
        }


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / n


def gradient_check(model: ToyDetector, crops: np.ndarray, labels: np.ndarray, num_checks: int = 60,
                   step: float = 1e-4, seed: int = 0) -> float:
    """
    Compare analytic gradients with central differences on a random subset of
    weights and return the largest relative error |a - n| / max(|a| + |n|, 1e-7).

    Entries whose ±step perturbation moves a hidden unit across the ReLU kink
    are skipped: the loss is not differentiable there.
    """
    crops = np.asarray(crops, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if crops.shape[0] == 0:
        raise ValueError("gradient_check needs a non-empty batch")
    probe = model.copy()
    _, analytic = probe.loss_and_grads(crops, labels)
    rng = np.random.default_rng(seed)
    sizes = [probe.params()[name].size for name in PARAMETERS]
    flat = rng.choice(sum(sizes), size=min(num_checks, sum(sizes)), replace=False)
    offsets = np.cumsum([0] + sizes)

    def pattern() -> np.ndarray:
        return probe.forward(crops)[1]['pre'] > 0

    base_pattern = pattern()
    worst, checked = 0.0, 0
    for index in np.sort(flat):
        slot = int(np.searchsorted(offsets, index, side='right') - 1)
        name = PARAMETERS[slot]
        param = probe.params()[name].reshape(-1)
        position = int(index - offsets[slot])
        original = param[position]
        param[position] = original + step
        loss_plus, plus_pattern = probe.loss(crops, labels), pattern()
        param[position] = original - step
        loss_minus, minus_pattern = probe.loss(crops, labels), pattern()
        param[position] = original
        if not (np.array_equal(plus_pattern, base_pattern) and np.array_equal(minus_pattern, base_pattern)):
            continue
        numeric = (loss_plus - loss_minus) / (2 * step)
        exact = analytic[name].reshape(-1)[position]
        worst = max(worst, abs(exact - numeric) / max(abs(exact) + abs(numeric), 1e-7))
        checked += 1
    logger.debug("Gradient check over %s entries: max relative error %.3e", checked, worst)
    return worst


def save_model(model: ToyDetector, path: Path) -> None:
    """JSON weights file. Floats keep their full repr so a reload gives back identical weights."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(model.to_record()) + "\n", encoding="utf-8")
    except OSError as e:
        logger.error("Unable to write model to %s: %s", path, e)
        raise


def load_model(path: Path) -> ToyDetector:
    path = Path(path)
    record = parse_json(path.read_bytes(), str(path))
    try:
        if record.get('format_version') != MODEL_FORMAT_VERSION:
            raise DatasetValidationError(f"Unsupported model format {record.get('format_version')!r} in {path}")
        architecture = DetectorArchitecture.model_validate(record['architecture'])
        if architecture.digest() != record.get('architecture_digest'):
            raise DatasetValidationError(f"Architecture digest mismatch in {path}")
        weights = record['weights']
        return ToyDetector(architecture, *(np.array(weights[name], dtype=np.float64) for name in PARAMETERS),
                           unit_mask=np.array(record['unit_mask'], dtype=np.float64), seed=record.get('seed', 0),
                           train_config=record.get('train_config'), loss_history=record.get('loss_history'))
    except DatasetValidationError:
        raise
    except (KeyError, AttributeError, TypeError, ValueError, ValidationError) as e:
        logger.error("Invalid model file %s: %s", path, e)
        raise DatasetValidationError(f"Invalid model file {path}: {e}")
