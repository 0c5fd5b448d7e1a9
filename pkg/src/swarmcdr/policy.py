"""Maneuver selection: a forward-simulation oracle and a shallow MLP imitating it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .kinematics import ManeuverClass, RolloutBatch, UavState, rollout
from .scenario import ScenarioConfig, rng_stream

N_SLOTS = 5
N_FEATURES = 6 + 6 * N_SLOTS
N_CLASSES = len(ManeuverClass)
MODEL_VERSION = "mlp-v1"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def sort_neighbors(ego: UavState, neighbors) -> list[UavState]:
    def key(n):
        return ((n.x - ego.x) ** 2 + (n.y - ego.y) ** 2 + (n.z - ego.z) ** 2, n.id)
    return sorted(neighbors, key=key)


def featurize(ego: UavState, neighbors, config: ScenarioConfig) -> np.ndarray:
    """Fixed-length encoding: ego state then the 5 nearest neighbours, zero padded."""
    vmax = config.max_speed
    zmax = max(config.altitude_bands)
    side = config.area_side
    rng_ = config.detection_range
    f = np.zeros(N_FEATURES)
    evx, evy, evz = ego.velocity
    f[0:6] = (ego.x / side, ego.y / side, ego.z / zmax, evx / vmax, evy / vmax, evz / vmax)
    for k, n in enumerate(sort_neighbors(ego, neighbors)[:N_SLOTS]):
        nvx, nvy, nvz = n.velocity
        o = 6 + 6 * k
        f[o:o + 6] = ((n.x - ego.x) / rng_, (n.y - ego.y) / rng_, (n.z - ego.z) / rng_,
                      (nvx - evx) / (2 * vmax), (nvy - evy) / (2 * vmax), (nvz - evz) / (2 * vmax))
    return f


class SceneFeaturizer(TransformerMixin, BaseEstimator):
    """Turns ``(ego, neighbours)`` scenes into the 36-column feature matrix."""

    def __init__(self, config: ScenarioConfig | None = None):
        self.config = config

    def fit(self, scenes=None, y=None):
        return self

    def transform(self, scenes):
        cfg = self.config or ScenarioConfig()
        if not scenes:
            return np.zeros((0, N_FEATURES))
        return np.vstack([featurize(ego, nbrs, cfg) for ego, nbrs in scenes])


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

def oracle_scores(scenes, config: ScenarioConfig, now: int = 0) -> np.ndarray:
    """Per-class minimum separation score over the forecast horizon, shape (B, 6).

    The ego is rolled out under each maneuver with the engine's kinematics at
    100 ms steps; neighbours follow their current velocity and climb profile.
    A scene without neighbours scores +inf for every class.
    """
    b = len(scenes)
    params = config.maneuver_params()
    rh, rv = config.horiz_sep_threshold, config.vert_sep_threshold
    dt = 0.1
    n_steps = int(round(config.forecast_horizon / dt))

    k = max([len(n) for _, n in scenes] + [1])
    npos = np.zeros((b, k, 3))
    nvel = np.zeros((b, k, 3))
    nstop = np.full((b, k), np.inf)
    mask = np.zeros((b, k), dtype=bool)
    for i, (_, nbrs) in enumerate(scenes):
        for j, n in enumerate(nbrs):
            npos[i, j] = n.pos
            nvel[i, j] = n.velocity
            if n.climb_rate != 0:
                nstop[i, j] = max((n.target_altitude - n.z) / n.climb_rate, 0.0)
            mask[i, j] = True

    batch = RolloutBatch.from_states([e for e, _ in scenes], now).repeat(N_CLASSES)
    cls = np.tile(np.arange(N_CLASSES), b)
    best = np.full((b, N_CLASSES), np.inf)
    for t, x, y, z in rollout(batch, cls, params, n_steps, dt):
        ex = x.reshape(b, N_CLASSES, 1)
        ey = y.reshape(b, N_CLASSES, 1)
        ez = z.reshape(b, N_CLASSES, 1)
        nx = (npos[:, :, 0] + nvel[:, :, 0] * t)[:, None, :]
        ny = (npos[:, :, 1] + nvel[:, :, 1] * t)[:, None, :]
        nz = (npos[:, :, 2] + nvel[:, :, 2] * np.minimum(t, nstop))[:, None, :]
        score = np.maximum(np.hypot(nx - ex, ny - ey) / rh, np.abs(nz - ez) / rv)
        score = np.where(mask[:, None, :], score, np.inf).min(axis=2)
        np.minimum(best, score, out=best)
    return best


SCORE_TIE_EPS = 1e-9


def oracle_choice(scores: np.ndarray) -> np.ndarray:
    """First class within ``SCORE_TIE_EPS`` of the best score, per row.

    The tolerance keeps mirror-symmetric maneuvers (left vs right) tied when
    rounding makes their rollouts differ in the last bits.
    """
    scores = np.atleast_2d(scores)
    top = scores.max(axis=1, keepdims=True)
    return np.argmax(scores >= top - SCORE_TIE_EPS, axis=1)


def oracle_decide(ego: UavState, neighbors, config: ScenarioConfig, now: int = 0) -> ManeuverClass:
    """Class with the best worst-case separation; ties go to the least disruptive."""
    scores = oracle_scores([(ego, list(neighbors))], config, now)[0]
    return ManeuverClass(int(oracle_choice(scores)[0]))


class OraclePolicy(BaseEstimator):
    """Scene-level policy backed by the geometric oracle."""

    def __init__(self, config: ScenarioConfig | None = None):
        self.config = config

    def fit(self, scenes=None, y=None):
        return self

    def predict(self, scenes):
        cfg = self.config or ScenarioConfig()
        if not scenes:
            return np.zeros(0, dtype=int)
        return oracle_choice(oracle_scores(scenes, cfg))


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

@dataclass
class MlpModel:
    w1: np.ndarray  # (n_in, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, n_out)
    b2: np.ndarray
    version: str = MODEL_VERSION
    train_accuracy: float | None = field(default=None, compare=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1])

    def validate(self) -> "MlpModel":
        n_in, h, n_out = self.dims
        if self.b1.shape != (h,) or self.w2.shape[0] != h or self.b2.shape != (n_out,):
            raise ValueError("inconsistent layer dimensions")
        for a in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite weights")
        return self

    @classmethod
    def zeros(cls, n_in: int = N_FEATURES, hidden: int = 32, n_out: int = N_CLASSES) -> "MlpModel":
        return cls(np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, n_out)), np.zeros(n_out))

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int = N_FEATURES, hidden: int = 32,
             n_out: int = N_CLASSES) -> "MlpModel":
        w1 = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, hidden))
        w2 = rng.normal(0.0, math.sqrt(2.0 / hidden), size=(hidden, n_out))
        return cls(w1, np.zeros(hidden), w2, np.zeros(n_out))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mlp_infer(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector (or a batch of rows)."""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != model.dims[0]:
        raise ValueError(f"expected {model.dims[0]} features, got {x.shape[-1]}")
    h = np.maximum(x @ model.w1 + model.b1, 0.0)
    return _softmax(h @ model.w2 + model.b2)


def mlp_decide(model: MlpModel, features: np.ndarray) -> ManeuverClass:
    return ManeuverClass(int(np.argmax(mlp_infer(model, features))))


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy and its gradients (w1, b1, w2, b2)."""
    n = x.shape[0]
    pre = x @ model.w1 + model.b1
    h = np.maximum(pre, 0.0)
    p = _softmax(h @ model.w2 + model.b2)
    loss = -np.mean(np.log(np.clip(p[np.arange(n), y], 1e-300, None)))
    d = p.copy()
    d[np.arange(n), y] -= 1.0
    d /= n
    gw2 = h.T @ d
    gb2 = d.sum(axis=0)
    dh = (d @ model.w2.T) * (pre > 0)
    gw1 = x.T @ dh
    gb1 = dh.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2)


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 30
    batch: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    hidden: int = 32


def mlp_train(dataset, hyper: TrainHyper | dict | None = None, seed: int = 0) -> MlpModel:
    """Mini-batch SGD (with heavy-ball momentum) on softmax cross-entropy.

    ``dataset`` is a sequence of LabeledSample or an ``(X, y)`` pair. The
    returned model carries its final training accuracy.
    """
    if isinstance(hyper, dict):
        hyper = TrainHyper(**hyper)
    hyper = hyper or TrainHyper()
    x, y = _as_xy(dataset)
    if len(y) == 0:
        raise ValueError("empty dataset")
    missing = sorted(set(range(N_CLASSES)) - set(np.unique(y).tolist()))
    if missing:
        names = ", ".join(ManeuverClass(m).name for m in missing)
        raise ValueError(f"classes missing from dataset: {names}")

    # train on standardised inputs, then fold the affine map into layer 1
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    xs = (x - mu) / sd

    rng = rng_stream(seed, "mlp-train")
    model = MlpModel.init(rng, x.shape[1], hyper.hidden, N_CLASSES)
    params = [model.w1, model.b1, model.w2, model.b2]
    velocity = [np.zeros_like(p) for p in params]
    n = len(y)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch):
            idx = order[start:start + hyper.batch]
            loss, grads = loss_and_grads(model, xs[idx], y[idx])
            total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= hyper.momentum
                v -= hyper.learning_rate * g
                p += v
        if not math.isfinite(total):
            raise TrainingDiverged(epoch)
    model.w1 = model.w1 / sd[:, None]
    model.b1 = model.b1 - mu @ model.w1
    model.train_accuracy = float(np.mean(np.argmax(mlp_infer(model, x), axis=1) == y))
    return model


def _as_xy(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2:
        x, y = dataset
        return np.asarray(x, dtype=float), np.asarray(y, dtype=int)
    x = np.array([s.features for s in dataset], dtype=float).reshape(len(dataset), -1)
    y = np.array([int(s.label) for s in dataset], dtype=int)
    return x, y


class ManeuverClassifier(ClassifierMixin, BaseEstimator):
    """Shallow ReLU/softmax network over the 36 scene features."""

    def __init__(self, hidden: int = 32, epochs: int = 30, batch_size: int = 64,
                 learning_rate: float = 0.01, momentum: float = 0.9, random_state: int = 0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        hyper = TrainHyper(self.epochs, self.batch_size, self.learning_rate, self.momentum, self.hidden)
        self.model_ = mlp_train((X, y.astype(int)), hyper, self.random_state)
        self.classes_ = np.arange(N_CLASSES)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: MlpModel) -> "ManeuverClassifier":
        est = cls(hidden=model.dims[1])
        est.model_ = model
        est.classes_ = np.arange(model.dims[2])
        est.n_features_in_ = model.dims[0]
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return mlp_infer(self.model_, check_array(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


# ---------------------------------------------------------------------------
# Training data
# ---------------------------------------------------------------------------

@dataclass
class LabeledSample:
    features: np.ndarray
    label: ManeuverClass
    scene: tuple[UavState, list[UavState]] | None = field(default=None, compare=False, repr=False)


# P(k neighbours) proportional to 8^-(k-1): close to what the engine sees at
# 50-200 UAVs, where a second neighbour is present in roughly one decision in eight.
NEIGHBOR_COUNT_WEIGHTS = np.array([8.0 ** -k for k in range(N_SLOTS)])
NEIGHBOR_COUNT_WEIGHTS /= NEIGHBOR_COUNT_WEIGHTS.sum()


def _sample_scene(rng: np.random.Generator, config: ScenarioConfig) -> tuple[UavState, list[UavState]]:
    side = config.area_side
    lo, hi = config.speed_range
    bands = np.asarray(config.altitude_bands)
    det = config.detection_range
    ex, ey = rng.uniform(0.2 * side, 0.8 * side, size=2)
    ez = float(bands[rng.integers(len(bands))])
    espeed = float(rng.uniform(lo, hi))
    eh = float(rng.uniform(0, 2 * math.pi))
    wp = (ex + 3000 * math.cos(eh), ey + 3000 * math.sin(eh))
    ego = UavState(0, float(ex), float(ey), ez, espeed, eh, espeed, (wp,))

    neighbors: list[UavState] = []
    n_nbrs = 1 + int(rng.choice(N_SLOTS, p=NEIGHBOR_COUNT_WEIGHTS))
    zmin, zmax = float(bands.min()), float(bands.max())
    while len(neighbors) < n_nbrs:
        speed = float(rng.uniform(lo, hi))
        heading = float(rng.uniform(0, 2 * math.pi))
        vx, vy = speed * math.cos(heading), speed * math.sin(heading)
        dz = float(rng.choice([-20.0, -10.0, 0.0, 0.0, 0.0, 10.0, 20.0]))
        if rng.random() < 0.7:
            # converging: aim at a point near the ego's future track
            tc = float(rng.uniform(1.0, 8.0))
            miss = rng.uniform(-35.0, 35.0, size=2)
            px = ex + espeed * math.cos(eh) * tc + miss[0] - vx * tc
            py = ey + espeed * math.sin(eh) * tc + miss[1] - vy * tc
        else:
            r = det * math.sqrt(float(rng.random()))
            a = float(rng.uniform(0, 2 * math.pi))
            px, py = ex + r * math.cos(a), ey + r * math.sin(a)
        pz = ez + dz
        if not zmin <= pz <= zmax:
            continue
        if (px - ex) ** 2 + (py - ey) ** 2 + (pz - ez) ** 2 > det * det:
            continue
        nid = len(neighbors) + 1
        neighbors.append(UavState(nid, float(px), float(py), pz, speed, heading, speed,
                                  ((px + 3000 * vx / speed, py + 3000 * vy / speed),)))
    return ego, neighbors


def generate_training_set(n: int, config: ScenarioConfig, seed: int,
                          chunk: int = 2000) -> list[LabeledSample]:
    """``n`` random encounter scenes labelled by the oracle; deterministic in ``seed``."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = rng_stream(seed, "training-scenes")
    scenes = [_sample_scene(rng, config) for _ in range(n)]
    out: list[LabeledSample] = []
    for start in range(0, n, chunk):
        part = scenes[start:start + chunk]
        labels = oracle_choice(oracle_scores(part, config))
        for (ego, nbrs), lab in zip(part, labels):
            out.append(LabeledSample(featurize(ego, nbrs, config), ManeuverClass(int(lab)), (ego, nbrs)))
    return out


def dump_training_csv(samples, path) -> None:
    cols = [f"f{i}" for i in range(N_FEATURES)] + ["label"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for s in samples:
            fh.write(",".join(repr(float(v)) for v in s.features) + f",{s.label.name}\n")


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def save_model(model: MlpModel, path) -> None:
    """Plain-text model: dims line, version line, then row-major weights."""
    def rows(a):
        a = np.atleast_2d(a)
        return ["  ".join(f"{v:.17g}" for v in row) for row in a]

    lines = [" ".join(str(d) for d in model.dims), f"version {model.version}"]
    lines += rows(model.w1) + rows(model.b1) + rows(model.w2) + rows(model.b2)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> MlpModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        n_in, hidden, n_out = (int(v) for v in lines[0].split())
        version = lines[1].split(None, 1)[1] if lines[1].startswith("version") else MODEL_VERSION
        data = [[float(v) for v in ln.split()] for ln in lines[2:] if ln.strip()]
        w1 = np.array(data[:n_in])
        b1 = np.array(data[n_in])
        w2 = np.array(data[n_in + 1:n_in + 1 + hidden])
        b2 = np.array(data[n_in + 1 + hidden])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed model file {path}: {exc}") from None
    return MlpModel(w1, b1, w2, b2, version).validate()
