"""Neural-network surrogates mapping (d, h, R, D) to channel coefficients.

Networks have one tanh hidden layer and a linear output layer.  Training is
full-batch Levenberg-Marquardt on ``beta * SSE + alpha * SSW`` where SSW is
the sum of squared weights and biases.  By default ``alpha / beta`` is held
at a fixed ratio; ``TrainConfig(evidence=True)`` instead re-estimates both
after each accepted step from the effective number of parameters.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .channel import AMP_BOUNDS, EXP_BOUNDS, ModelParams, f11_model, f21_model
from .geometry import SystemParams

ONE_MACHINE = "one"
TWO_MACHINES = "two"
MODES = (ONE_MACHINE, TWO_MACHINES)
HIDDEN = {ONE_MACHINE: 30, TWO_MACHINES: 15}
COEFF_BOUNDS = np.array([AMP_BOUNDS, EXP_BOUNDS, EXP_BOUNDS] * 2)


class DatasetTooSmall(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class UntrainedModel(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpArchitecture:
    n_inputs: int = 4
    hidden_nodes: int = 30
    n_outputs: int = 6
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        if self.hidden_nodes < 1 or self.n_inputs < 1 or self.n_outputs < 1:
            raise ValueError("layer sizes must be positive")

    @property
    def n_params(self) -> int:
        h, i, o = self.hidden_nodes, self.n_inputs, self.n_outputs
        return h * i + h + o * h + o


@dataclass(frozen=True)
class TrainConfig:
    alpha_ratio: float = 1e-2
    max_epochs: int = 300
    tolerance: float = 1e-8
    seed: int = 0
    evidence: bool = False
    mu_init: float = 5e-3
    mu_max: float = 1e10

    def to_dict(self):
        return asdict(self)


def unpack(theta, arch: MlpArchitecture):
    h, i, o = arch.hidden_nodes, arch.n_inputs, arch.n_outputs
    k = 0
    W1 = theta[k:k + h * i].reshape(h, i)
    k += h * i
    b1 = theta[k:k + h]
    k += h
    W2 = theta[k:k + o * h].reshape(o, h)
    k += o * h
    b2 = theta[k:k + o]
    return W1, b1, W2, b2


def pack(W1, b1, W2, b2):
    return np.concatenate([W1.ravel(), b1, W2.ravel(), b2])


def init_params(arch: MlpArchitecture, rng) -> np.ndarray:
    """Uniform in [-0.5, 0.5], each layer scaled by 1/fan_in."""
    h, i, o = arch.hidden_nodes, arch.n_inputs, arch.n_outputs
    W1 = rng.uniform(-0.5, 0.5, (h, i)) / i
    b1 = rng.uniform(-0.5, 0.5, h) / i
    W2 = rng.uniform(-0.5, 0.5, (o, h)) / h
    b2 = rng.uniform(-0.5, 0.5, o) / h
    return pack(W1, b1, W2, b2)


def forward(theta, arch, X):
    W1, b1, W2, b2 = unpack(theta, arch)
    a = np.tanh(X @ W1.T + b1)
    return a @ W2.T + b2, a


def objective(theta, arch, X, Y, alpha=0.0, beta=1.0):
    out, _ = forward(theta, arch, X)
    e = out - Y
    return beta * float(np.sum(e * e)) + alpha * float(theta @ theta)


def objective_gradient(theta, arch, X, Y, alpha=0.0, beta=1.0):
    """Backpropagated gradient of :func:`objective`."""
    W1, b1, W2, b2 = unpack(theta, arch)
    out, a = forward(theta, arch, X)
    d_out = 2.0 * beta * (out - Y)
    gW2 = d_out.T @ a
    gb2 = d_out.sum(axis=0)
    d_hid = (d_out @ W2) * (1.0 - a * a)
    gW1 = d_hid.T @ X
    gb1 = d_hid.sum(axis=0)
    return pack(gW1, gb1, gW2, gb2) + 2.0 * alpha * theta


def residual_jacobian(theta, arch, X, Y):
    """Residuals ``e`` (sample-major, then output) and ``de/dtheta``."""
    W1, b1, W2, b2 = unpack(theta, arch)
    out, a = forward(theta, arch, X)
    n, o, h, i = X.shape[0], arch.n_outputs, arch.hidden_nodes, arch.n_inputs
    e = (out - Y).ravel()
    J = np.zeros((n, o, arch.n_params))
    deriv = 1.0 - a * a  # (n, h)
    # hidden layer: de[n,q]/dW1[j,k] = W2[q,j] * deriv[n,j] * X[n,k]
    g = W2[None, :, :] * deriv[:, None, :]  # (n, o, h)
    J[:, :, :h * i] = (g[:, :, :, None] * X[:, None, None, :]).reshape(n, o, h * i)
    J[:, :, h * i:h * i + h] = g
    off = h * i + h
    for q in range(o):
        J[:, q, off + q * h:off + (q + 1) * h] = a
    J[:, :, off + o * h:] = np.eye(o)[None, :, :]
    return e, J.reshape(n * o, arch.n_params)


@dataclass
class Affine:
    """Per-feature normalisation ``(x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data):
        data = np.asarray(data, dtype=float)
        shift = data.mean(axis=0)
        scale = data.std(axis=0)
        scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(shift)), scale, 1.0)
        return cls(shift, scale)

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def to_dict(self):
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["shift"], dtype=float), np.array(data["scale"], dtype=float))


@dataclass
class MlpModel:
    arch: MlpArchitecture
    theta: np.ndarray
    x_norm: Affine
    y_norm: Affine
    report: dict = field(default_factory=dict)
    dataset_hash: str = ""

    def predict_raw(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out, _ = forward(self.theta, self.arch, self.x_norm.apply(X))
        return self.y_norm.invert(out)

    def to_dict(self):
        W1, b1, W2, b2 = unpack(self.theta, self.arch)
        return {
            "architecture": asdict(self.arch),
            "input_normalization": self.x_norm.to_dict(),
            "output_normalization": self.y_norm.to_dict(),
            "weights": [W1.tolist(), W2.tolist()],
            "biases": [b1.tolist(), b2.tolist()],
            "training_report": self.report,
            "dataset_hash": self.dataset_hash,
        }

    @classmethod
    def from_dict(cls, data):
        arch = MlpArchitecture(**data["architecture"])
        W1, W2 = (np.array(w, dtype=float) for w in data["weights"])
        b1, b2 = (np.array(b, dtype=float) for b in data["biases"])
        return cls(arch, pack(W1, b1, W2.reshape(arch.n_outputs, arch.hidden_nodes), b2),
                   Affine.from_dict(data["input_normalization"]),
                   Affine.from_dict(data["output_normalization"]),
                   data.get("training_report", {}), data.get("dataset_hash", ""))


def _lm_train(theta, arch, X, Y, cfg: TrainConfig):
    alpha, beta = float(cfg.alpha_ratio), 1.0
    mu = cfg.mu_init
    n_err = Y.size
    obj = objective(theta, arch, X, Y, alpha, beta)
    if not math.isfinite(obj):
        raise NonFiniteLoss("initial objective is not finite")
    history = [obj]
    gamma = float(arch.n_params)
    epoch = 0
    stop = "max_epochs"
    eye = np.eye(arch.n_params)
    while epoch < cfg.max_epochs:
        epoch += 1
        e, J = residual_jacobian(theta, arch, X, Y)
        H = beta * (J.T @ J) + alpha * eye
        g = beta * (J.T @ e) + alpha * theta
        accepted = False
        while mu <= cfg.mu_max:
            step = np.linalg.solve(H + mu * eye, -g)
            cand = theta + step
            cand_obj = objective(cand, arch, X, Y, alpha, beta)
            if math.isfinite(cand_obj) and cand_obj < obj:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            stop = "mu_max"
            break
        rel = (obj - cand_obj) / max(obj, 1e-300)
        theta, obj = cand, cand_obj
        mu = max(mu * 0.1, 1e-20)
        if cfg.evidence:
            _, Jn = residual_jacobian(theta, arch, X, Y)
            sse = float(np.sum((forward(theta, arch, X)[0] - Y) ** 2))
            ssw = float(theta @ theta)
            hess = 2.0 * beta * (Jn.T @ Jn) + 2.0 * alpha * eye
            gamma = arch.n_params - 2.0 * alpha * float(np.trace(np.linalg.inv(hess)))
            alpha = gamma / (2.0 * max(ssw, 1e-300))
            beta = max(n_err - gamma, 1e-12) / (2.0 * max(sse, 1e-300))
            obj = objective(theta, arch, X, Y, alpha, beta)
        history.append(obj)
        if not math.isfinite(obj):
            raise NonFiniteLoss(f"objective became non-finite at epoch {epoch}")
        if rel < cfg.tolerance:
            stop = "tolerance"
            break
    out, _ = forward(theta, arch, X)
    sse = float(np.sum((out - Y) ** 2))
    report = {"epochs": epoch, "objective": obj, "sse": sse, "ssw": float(theta @ theta),
              "alpha": alpha, "beta": beta, "effective_params": gamma, "stop": stop,
              "history": history}
    return theta, report


def dataset_hash(X, Y) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(Y, dtype=np.float64).tobytes())
    return h.hexdigest()


def train_network(X, Y, hidden_nodes, cfg: TrainConfig = TrainConfig(), seed_offset=0) -> MlpModel:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data contains missing or non-finite values")
    arch = MlpArchitecture(X.shape[1], int(hidden_nodes), Y.shape[1])
    xn, yn = Affine.fit(X), Affine.fit(Y)
    rng = np.random.default_rng([int(cfg.seed), int(seed_offset)])
    theta0 = init_params(arch, rng)
    theta, report = _lm_train(theta0, arch, xn.apply(X), yn.apply(Y), cfg)
    report["config"] = cfg.to_dict()
    return MlpModel(arch, theta, xn, yn, report, dataset_hash(X, Y))


@dataclass
class SurrogateEnsemble:
    mode: str
    nets: list

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        outs = [n.arch.n_outputs for n in self.nets]
        if (self.mode == ONE_MACHINE and outs != [6]) or (self.mode == TWO_MACHINES and outs != [3, 3]):
            raise ValueError(f"{self.mode} ensemble has output sizes {outs}")

    def predict_raw(self, X):
        return np.concatenate([n.predict_raw(X) for n in self.nets], axis=1)

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode, "nets": [n.to_dict() for n in self.nets]},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(data["mode"], [MlpModel.from_dict(n) for n in data["nets"]])


MIN_ROWS = 20


def train(dataset, mode=ONE_MACHINE, hyper: TrainConfig = TrainConfig(), hidden=None,
          workers=1) -> SurrogateEnsemble:
    """Fit the one-machine (one 30-node net, six outputs) or two-machines
    (two independent 15-node nets, three outputs each) surrogate."""
    X, Y = dataset.inputs(), dataset.targets()
    if X.shape[0] < MIN_ROWS:
        raise DatasetTooSmall(f"need at least {MIN_ROWS} rows, got {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("dataset has missing values; drop failed rows first")
    if mode == ONE_MACHINE:
        return SurrogateEnsemble(mode, [train_network(X, Y, hidden or HIDDEN[mode], hyper, 0)])
    if mode != TWO_MACHINES:
        raise ValueError(f"unknown mode {mode!r}")
    jobs = [(Y[:, :3], 1), (Y[:, 3:], 2)]

    def fit(job):
        return train_network(X, job[0], hidden or HIDDEN[mode], hyper, job[1])

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            nets = list(pool.map(fit, jobs))
    else:
        nets = [fit(j) for j in jobs]
    return SurrogateEnsemble(mode, nets)


def predict(model: Optional[SurrogateEnsemble], sys: SystemParams, return_flags=False):
    """Surrogate coefficients for ``sys``, clamped into the coefficient
    bounds.  With ``return_flags`` also returns a boolean array marking the
    clamped coefficients."""
    if model is None or not model.nets:
        raise UntrainedModel("surrogate has not been trained")
    x = np.array([sys.as_tuple()], dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    raw = model.predict_raw(x)[0]
    clamped = np.clip(raw, COEFF_BOUNDS[:, 0], COEFF_BOUNDS[:, 1])
    params = ModelParams.from_array(clamped)
    if return_flags:
        return params, clamped != raw
    return params


@dataclass
class RmseTable:
    """Per-case RMSEs and their means grouped by ``(d, D)``."""

    cases: list  # dicts: d, h, R, D, rmse11, rmse21
    groups: dict  # (d, D) -> (mean rmse11, mean rmse21)


def curve_rmse(model_values, curve) -> float:
    diff = np.asarray(model_values) - curve.mean_fraction
    return float(np.sqrt(np.mean(diff * diff)))


def evaluate_rmse(model, cases, params_for=None) -> RmseTable:
    """RMSE of predicted model curves against simulated mean curves.

    ``cases`` is a sequence of ``(SystemParams, S11, S21)``.  ``params_for``
    overrides the coefficient source (for example fitted coefficients).
    """
    rows = []
    for sys, s11, s21 in cases:
        if s11.time_grid.shape != s21.time_grid.shape or not np.array_equal(s11.time_grid, s21.time_grid):
            raise ValueError("S11 and S21 must share a time grid")
        p = params_for(sys) if params_for is not None else predict(model, sys)
        rows.append({"d": sys.d, "h": sys.h, "R": sys.R, "D": sys.D,
                     "rmse11": curve_rmse(f11_model(s11.time_grid, p, sys), s11),
                     "rmse21": curve_rmse(f21_model(s21.time_grid, p, sys), s21)})
    groups = {}
    for key in sorted({(r["d"], r["D"]) for r in rows}):
        sel = [r for r in rows if (r["d"], r["D"]) == key]
        groups[key] = (float(np.mean([r["rmse11"] for r in sel])),
                       float(np.mean([r["rmse21"] for r in sel])))
    return RmseTable(rows, groups)
