"""Classifiers behind one sklearn-style interface.

The main model is a small feedforward network, implemented from scratch in
numpy: batch normalization on the inputs, dense layers of 512, 128, and 8
units with tanh activations, a second batch normalization between the
second and third dense layers, and a two-unit softmax head trained with
cross-entropy.  Logistic regression and a k-nearest-neighbor scorer serve
as baselines.  All three expose ``fit`` / ``predict_proba`` / ``predict``
and ``get_params``, so they compose with sklearn pipelines, and anything
else implementing that surface can be plugged into the ablation harness.

Training is deterministic: a fixed seed fixes the weight initialization and
the shuffling order, and parameter updates are applied single-threaded.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .errors import CorruptModelFile, DimensionMismatch
from .scaling import FeatureScaler
from .validation import as_binary_labels, as_matrix

__all__ = [
    "TrainConfig", "MLPNetwork", "MalwareMLP", "LogisticMalware", "KNNMalware",
    "mlp_train", "logistic_train", "knn_predict", "gradient_check",
    "make_classifier", "save_model", "load_model", "MODEL_KINDS",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
DEFAULT_HIDDEN = (512, 128, 8)

MODEL_KINDS = ("mlp", "logistic", "knn")


@dataclass
class TrainConfig:
    """Gradient-descent hyperparameters shared by the MLP and logistic models."""

    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 10
    seed: int = 42
    optimizer: str = "adam"        # "adam" or "sgd"
    init: str = "xavier"           # "xavier" or "normal"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.init not in ("xavier", "normal"):
            raise ValueError(f"init must be 'xavier' or 'normal', got {self.init!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(z: np.ndarray, y: np.ndarray) -> float:
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(y.shape[0]), y].mean())


def _bn_forward(x, gamma, beta, mean, var):
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, (xhat, inv)


def _bn_backward(dout, gamma, xhat, inv):
    # Batch-statistics mode: mean/var were computed from this batch.
    n = dout.shape[0]
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


class MLPNetwork:
    """The bare network: parameters, forward in train/infer mode, and backprop.

    Layer stack for input width d and hidden sizes (h1, h2, h3):

        BN(d) -> Dense(d, h1) tanh -> Dense(h1, h2) tanh -> BN(h2)
              -> Dense(h2, h3) tanh -> Dense(h3, 2) softmax
    """

    def __init__(self, input_dim: int, hidden: tuple[int, int, int] = DEFAULT_HIDDEN,
                 seed: int = 42, init: str = "xavier"):
        if len(hidden) != 3:
            raise ValueError(f"hidden must have three layer sizes, got {hidden}")
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        h1, h2, h3 = self.hidden
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out):
            if init == "xavier":
                limit = np.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-limit, limit, size=(n_in, n_out))
            else:
                w = rng.normal(0.0, 0.01, size=(n_in, n_out))
            return w, np.zeros(n_out)

        d = self.input_dim
        self.params: dict[str, np.ndarray] = {}
        self.params["bn0.gamma"] = np.ones(d)
        self.params["bn0.beta"] = np.zeros(d)
        self.params["dense1.W"], self.params["dense1.b"] = dense(d, h1)
        self.params["dense2.W"], self.params["dense2.b"] = dense(h1, h2)
        self.params["bn1.gamma"] = np.ones(h2)
        self.params["bn1.beta"] = np.zeros(h2)
        self.params["dense3.W"], self.params["dense3.b"] = dense(h2, h3)
        self.params["dense4.W"], self.params["dense4.b"] = dense(h3, 2)
        self.stats: dict[str, np.ndarray] = {
            "bn0.running_mean": np.zeros(d),
            "bn0.running_var": np.ones(d),
            "bn1.running_mean": np.zeros(h2),
            "bn1.running_var": np.ones(h2),
        }

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _bn_stats(self, name: str, x: np.ndarray, training: bool, update_stats: bool):
        if training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if update_stats:
                self.stats[f"{name}.running_mean"] = (
                    BN_MOMENTUM * self.stats[f"{name}.running_mean"] + (1 - BN_MOMENTUM) * mean)
                self.stats[f"{name}.running_var"] = (
                    BN_MOMENTUM * self.stats[f"{name}.running_var"] + (1 - BN_MOMENTUM) * var)
            return mean, var
        return self.stats[f"{name}.running_mean"], self.stats[f"{name}.running_var"]

    def forward(self, X: np.ndarray, training: bool = False, update_stats: bool = False):
        """Class probabilities and the activation cache needed for backprop."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(
                f"network expects {self.input_dim} inputs, got {X.shape[1]}")
        p = self.params
        cache: dict[str, object] = {"X": X}

        mean0, var0 = self._bn_stats("bn0", X, training, update_stats)
        x0, cache["bn0"] = _bn_forward(X, p["bn0.gamma"], p["bn0.beta"], mean0, var0)
        z1 = x0 @ p["dense1.W"] + p["dense1.b"]
        a1 = np.tanh(z1)
        z2 = a1 @ p["dense2.W"] + p["dense2.b"]
        a2 = np.tanh(z2)
        mean1, var1 = self._bn_stats("bn1", a2, training, update_stats)
        x1, cache["bn1"] = _bn_forward(a2, p["bn1.gamma"], p["bn1.beta"], mean1, var1)
        z3 = x1 @ p["dense3.W"] + p["dense3.b"]
        a3 = np.tanh(z3)
        z4 = a3 @ p["dense4.W"] + p["dense4.b"]
        cache.update(x0=x0, a1=a1, a2=a2, x1=x1, a3=a3, z4=z4)
        return _softmax(z4), cache

    def loss(self, X: np.ndarray, y: np.ndarray, training: bool = True) -> float:
        """Mean cross-entropy; never touches the running statistics."""
        _, cache = self.forward(X, training=training, update_stats=False)
        return _cross_entropy(cache["z4"], np.asarray(y))

    def backward(self, cache: dict, y: np.ndarray) -> dict[str, np.ndarray]:
        """Analytic gradients of the mean cross-entropy for a training-mode forward."""
        p = self.params
        y = np.asarray(y)
        n = y.shape[0]
        probs = _softmax(cache["z4"])
        grads: dict[str, np.ndarray] = {}

        dz4 = probs.copy()
        dz4[np.arange(n), y] -= 1.0
        dz4 /= n
        grads["dense4.W"] = cache["a3"].T @ dz4
        grads["dense4.b"] = dz4.sum(axis=0)
        da3 = dz4 @ p["dense4.W"].T
        dz3 = da3 * (1.0 - cache["a3"] ** 2)
        grads["dense3.W"] = cache["x1"].T @ dz3
        grads["dense3.b"] = dz3.sum(axis=0)
        dx1 = dz3 @ p["dense3.W"].T
        xhat1, inv1 = cache["bn1"]
        da2, grads["bn1.gamma"], grads["bn1.beta"] = _bn_backward(dx1, p["bn1.gamma"], xhat1, inv1)
        dz2 = da2 * (1.0 - cache["a2"] ** 2)
        grads["dense2.W"] = cache["a1"].T @ dz2
        grads["dense2.b"] = dz2.sum(axis=0)
        da1 = dz2 @ p["dense2.W"].T
        dz1 = da1 * (1.0 - cache["a1"] ** 2)
        grads["dense1.W"] = cache["x0"].T @ dz1
        grads["dense1.b"] = dz1.sum(axis=0)
        dx0 = dz1 @ p["dense1.W"].T
        xhat0, inv0 = cache["bn0"]
        _, grads["bn0.gamma"], grads["bn0.beta"] = _bn_backward(dx0, p["bn0.gamma"], xhat0, inv0)
        return grads


class _Optimizer:
    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.lr = config.learning_rate
        self.kind = config.optimizer
        self.t = 0
        if self.kind == "adam":
            self.m = {k: np.zeros_like(v) for k, v in params.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if self.kind == "sgd":
            for k, g in grads.items():
                params[k] -= self.lr * g
            return
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        correction = np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * correction * self.m[k] / (np.sqrt(self.v[k]) + eps)


def gradient_check(network: MLPNetwork, X, y, step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Covers every trainable parameter, both batch-norm layers included, with
    the loss evaluated in training mode (batch statistics, no stat updates).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    _, cache = network.forward(X, training=True, update_stats=False)
    analytic = network.backward(cache, y)
    worst = 0.0
    for name, param in network.params.items():
        flat = param.ravel()
        grad_flat = analytic[name].ravel()
        for i in range(flat.shape[0]):
            original = flat[i]
            flat[i] = original + step
            loss_plus = network.loss(X, y, training=True)
            flat[i] = original - step
            loss_minus = network.loss(X, y, training=True)
            flat[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            ga = grad_flat[i]
            rel = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


class MalwareMLP(BaseEstimator, ClassifierMixin):
    """The feedforward network wrapped as an sklearn-style classifier.

    Expects standardized inputs (see :class:`~pemal.scaling.FeatureScaler`).
    ``loss_curve_`` records the full-training-set cross-entropy after each
    epoch, measured with batch statistics.
    """

    def __init__(self, hidden=DEFAULT_HIDDEN, learning_rate=1e-3, batch_size=512,
                 epochs=10, seed=42, optimizer="adam", init="xavier"):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.optimizer = optimizer
        self.init = init

    def _config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, seed=self.seed, optimizer=self.optimizer,
                           init=self.init)

    def fit(self, X, y) -> "MalwareMLP":
        config = self._config()
        X = as_matrix(X)
        y = as_binary_labels(y, n_rows=X.shape[0])
        net = MLPNetwork(X.shape[1], hidden=tuple(self.hidden), seed=config.seed,
                         init=config.init)
        optimizer = _Optimizer(net.params, config)
        rng = np.random.default_rng(config.seed)
        n = X.shape[0]
        batch = min(config.batch_size, n)
        losses = []
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                _, cache = net.forward(X[idx], training=True, update_stats=True)
                grads = net.backward(cache, y[idx])
                optimizer.step(net.params, grads)
            losses.append(net.loss(X, y, training=True))
        self.network_ = net
        self.loss_curve_ = losses
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "network_"):
            raise NotFittedError("MalwareMLP is not fitted")
        X = as_matrix(X, n_cols=self.network_.input_dim, allow_empty=True)
        chunks = []
        for start in range(0, X.shape[0], 4096):
            probs, _ = self.network_.forward(X[start:start + 4096], training=False)
            chunks.append(probs)
        if not chunks:
            return np.zeros((0, 2))
        return np.vstack(chunks)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


class LogisticMalware(BaseEstimator, ClassifierMixin):
    """Logistic regression trained by minibatch gradient descent on L2-regularized cross-entropy."""

    def __init__(self, learning_rate=0.01, batch_size=512, epochs=20, seed=42,
                 optimizer="adam", l2=1e-6):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.optimizer = optimizer
        self.l2 = l2

    def fit(self, X, y) -> "LogisticMalware":
        config = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                             epochs=self.epochs, seed=self.seed, optimizer=self.optimizer)
        X = as_matrix(X)
        y = as_binary_labels(y, n_rows=X.shape[0])
        n, d = X.shape
        params = {"w": np.zeros(d), "b": np.zeros(1)}
        optimizer = _Optimizer(params, config)
        rng = np.random.default_rng(config.seed)
        batch = min(config.batch_size, n)
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                xb, yb = X[idx], y[idx]
                p = 1.0 / (1.0 + np.exp(-(xb @ params["w"] + params["b"][0])))
                err = (p - yb) / xb.shape[0]
                grads = {"w": xb.T @ err + self.l2 * params["w"],
                         "b": np.array([err.sum()])}
                optimizer.step(params, grads)
        self.coef_ = params["w"]
        self.intercept_ = float(params["b"][0])
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError("LogisticMalware is not fitted")
        X = as_matrix(X, n_cols=self.coef_.shape[0], allow_empty=True)
        p = 1.0 / (1.0 + np.exp(-(X @ self.coef_ + self.intercept_)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


def knn_predict(X_train, y_train, X, k: int) -> np.ndarray:
    """Fraction of malicious rows among the k nearest training rows (Euclidean).

    Distance ties are broken toward the smaller training-row index.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    X_train = as_matrix(X_train)
    y_train = as_binary_labels(y_train, n_rows=X_train.shape[0])
    X = as_matrix(X, n_cols=X_train.shape[1], allow_empty=True)
    k = min(k, X_train.shape[0])
    scores = np.empty(X.shape[0], dtype=np.float64)
    for start in range(0, X.shape[0], 256):
        block = X[start:start + 256]
        dists = ((block[:, None, :] - X_train[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(dists, axis=1, kind="stable")[:, :k]
        scores[start:start + block.shape[0]] = y_train[order].mean(axis=1)
    return scores


class KNNMalware(BaseEstimator, ClassifierMixin):
    """k-nearest-neighbor scorer over standardized features."""

    def __init__(self, k=5):
        self.k = k

    def fit(self, X, y) -> "KNNMalware":
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        self.X_train_ = as_matrix(X)
        self.y_train_ = as_binary_labels(y, n_rows=self.X_train_.shape[0])
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.X_train_.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "X_train_"):
            raise NotFittedError("KNNMalware is not fitted")
        scores = knn_predict(self.X_train_, self.y_train_, X, self.k)
        return np.column_stack([1.0 - scores, scores])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


def mlp_train(X, y, config: TrainConfig, hidden=DEFAULT_HIDDEN) -> MalwareMLP:
    """Train the network on standardized features."""
    return MalwareMLP(hidden=hidden, learning_rate=config.learning_rate,
                      batch_size=config.batch_size, epochs=config.epochs,
                      seed=config.seed, optimizer=config.optimizer,
                      init=config.init).fit(X, y)


def logistic_train(X, y, config: TrainConfig, l2: float = 1e-6) -> LogisticMalware:
    return LogisticMalware(learning_rate=config.learning_rate, batch_size=config.batch_size,
                           epochs=config.epochs, seed=config.seed,
                           optimizer=config.optimizer, l2=l2).fit(X, y)


def make_classifier(kind: str, config: TrainConfig, k: int = 5, hidden=DEFAULT_HIDDEN):
    """Instantiate an unfitted classifier by kind name."""
    if kind == "mlp":
        return MalwareMLP(hidden=hidden, learning_rate=config.learning_rate,
                          batch_size=config.batch_size, epochs=config.epochs,
                          seed=config.seed, optimizer=config.optimizer, init=config.init)
    if kind == "logistic":
        return LogisticMalware(learning_rate=config.learning_rate,
                               batch_size=config.batch_size, epochs=config.epochs,
                               seed=config.seed, optimizer=config.optimizer)
    if kind == "knn":
        return KNNMalware(k=k)
    raise ValueError(f"unknown model kind {kind!r}, expected one of {MODEL_KINDS}")


# ---------------------------------------------------------------------------
# model file format
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"PEML"
MODEL_VERSION = 1


def _fitted_arrays(clf) -> list[tuple[str, np.ndarray]]:
    if isinstance(clf, MalwareMLP):
        net = clf.network_
        return ([(f"params.{k}", v) for k, v in net.params.items()]
                + [(f"stats.{k}", v) for k, v in net.stats.items()])
    if isinstance(clf, LogisticMalware):
        return [("coef", clf.coef_), ("intercept", np.array([clf.intercept_]))]
    if isinstance(clf, KNNMalware):
        return [("X_train", clf.X_train_), ("y_train", clf.y_train_.astype(np.float64))]
    raise ValueError(f"cannot serialize classifier of type {type(clf).__name__}")


def _kind_of(clf) -> str:
    if isinstance(clf, MalwareMLP):
        return "mlp"
    if isinstance(clf, LogisticMalware):
        return "logistic"
    if isinstance(clf, KNNMalware):
        return "knn"
    raise ValueError(f"cannot serialize classifier of type {type(clf).__name__}")


def save_model(path, clf, scaler: FeatureScaler, mask_names: list[str]) -> None:
    """Serialize a fitted classifier, its scaler, and its feature mask to one file.

    Layout: magic, u32 version, u32 header length, JSON header, float64
    little-endian arrays in header order, trailing CRC32.
    """
    arrays = [("scaler.mean", scaler.mean_), ("scaler.scale", scaler.scale_)]
    arrays += _fitted_arrays(clf)
    header = {
        "kind": _kind_of(clf),
        "params": clf.get_params(),
        "mask": list(mask_names),
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = bytearray()
    payload += MODEL_MAGIC
    payload += struct.pack("<II", MODEL_VERSION, len(header_bytes))
    payload += header_bytes
    for _, arr in arrays:
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    with open(path, "wb") as fh:
        fh.write(bytes(payload))


def load_model(path):
    """Load a model file; returns (classifier, scaler, mask_names)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MODEL_MAGIC:
        raise CorruptModelFile(f"not a model file: {path}")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != MODEL_VERSION:
        raise CorruptModelFile(f"unsupported model version {version}")
    if len(blob) < 12 + header_len + 4:
        raise CorruptModelFile("model file truncated")
    if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise CorruptModelFile("CRC mismatch, model file is corrupt")
    header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
        offset += count * 8
    if offset != len(blob) - 4:
        raise CorruptModelFile("model file length does not match its manifest")

    scaler = FeatureScaler.from_arrays(arrays["scaler.mean"], arrays["scaler.scale"])
    kind = header["kind"]
    params = header["params"]
    if kind == "mlp":
        clf = MalwareMLP(**{**params, "hidden": tuple(params["hidden"])})
        input_dim = arrays["params.bn0.gamma"].shape[0]
        net = MLPNetwork(input_dim, hidden=tuple(params["hidden"]), seed=params["seed"],
                         init=params["init"])
        for key in net.params:
            net.params[key] = arrays[f"params.{key}"]
        for key in net.stats:
            net.stats[key] = arrays[f"stats.{key}"]
        clf.network_ = net
        clf.classes_ = np.array([0, 1])
        clf.n_features_in_ = input_dim
    elif kind == "logistic":
        clf = LogisticMalware(**params)
        clf.coef_ = arrays["coef"]
        clf.intercept_ = float(arrays["intercept"][0])
        clf.classes_ = np.array([0, 1])
        clf.n_features_in_ = clf.coef_.shape[0]
    elif kind == "knn":
        clf = KNNMalware(**params)
        clf.X_train_ = arrays["X_train"]
        clf.y_train_ = arrays["y_train"].astype(np.int64)
        clf.classes_ = np.array([0, 1])
        clf.n_features_in_ = clf.X_train_.shape[1]
    else:
        raise CorruptModelFile(f"unknown model kind {kind!r}")
    return clf, scaler, list(header["mask"])
