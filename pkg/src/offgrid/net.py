"""Cell-constrained Doppler regressor and its amortized detection score.

The regressor is a two-layer 1D convolutional network (SiLU activations)
followed by a dense layer producing one raw value; ``tanh`` of that value is
the normalized Doppler offset inside the cell. Gradients are hand-derived
and checked against finite differences in the test suite.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import InvalidInputError, TrainingDivergedError
from .numerics import rng_stream
from .scenario import SNR_GRID_DB, draw_balanced, steering, steering_derivative

log = logging.getLogger(__name__)

CE_EPS = 1e-7
PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")


@dataclass(frozen=True)
class Architecture:
    m: int = 16
    channels1: int = 16
    channels2: int = 16
    kernel1: int = 5
    kernel2: int = 5

    def __post_init__(self):
        for k in (self.kernel1, self.kernel2):
            if k < 1 or k % 2 == 0:
                raise InvalidInputError(f"kernel sizes must be odd for same padding, got {k}")

    def shapes(self):
        return {
            "conv1_w": (self.channels1, 2, self.kernel1),
            "conv1_b": (self.channels1,),
            "conv2_w": (self.channels2, self.channels1, self.kernel2),
            "conv2_b": (self.channels2,),
            "fc_w": (self.channels2 * self.m,),
            "fc_b": (1,),
        }


@dataclass
class TrainingConfig:
    lam: float = 1.0
    kappa: float = 1.0
    learning_rate: float = 2e-3
    epochs: int = 40
    batch_size: int = 256
    n_train: int = 10000
    n_val: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    channels1: int = 16
    channels2: int = 16
    kernel1: int = 5
    kernel2: int = 5
    checkpoint: str = "best"
    network_input: str = "u"
    snr_grid: tuple = SNR_GRID_DB

    def __post_init__(self):
        if self.n_train % 2 or self.n_val % 2:
            raise InvalidInputError("n_train and n_val must be even (balanced H0/H1 split)")
        if self.lam < 0 or self.kappa <= 0:
            raise InvalidInputError("need lam >= 0 and kappa > 0")
        if self.checkpoint not in ("best", "last"):
            raise InvalidInputError("checkpoint must be 'best' or 'last'")
        if self.network_input not in ("u", "x"):
            raise InvalidInputError("network_input must be 'u' or 'x'")
        self.snr_grid = tuple(float(s) for s in self.snr_grid)

    def architecture(self, m):
        return Architecture(m, self.channels1, self.channels2, self.kernel1, self.kernel2)

    def snapshot(self):
        d = asdict(self)
        d["snr_grid"] = list(self.snr_grid)
        return d


@dataclass
class NetworkParams:
    arch: Architecture
    arrays: dict = field(default_factory=dict)

    @classmethod
    def init(cls, arch, rng):
        """Fan-in uniform weights; the dense layer starts at zero so raw = 0."""
        arrays = {}
        for name, shape in arch.shapes().items():
            if name.startswith("fc"):
                arrays[name] = np.zeros(shape)
                continue
            w_shape = arch.shapes()[name.replace("_b", "_w")]
            bound = 1.0 / np.sqrt(w_shape[1] * w_shape[2])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(arch, arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self):
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def flat(self):
        return np.concatenate([self.arrays[k].ravel() for k in PARAM_ORDER])

    @classmethod
    def from_flat(cls, arch, flat):
        flat = np.asarray(flat, dtype=float).ravel()
        expected = sum(int(np.prod(s)) for s in arch.shapes().values())
        if flat.size != expected:
            raise InvalidInputError(f"expected {expected} parameters, got {flat.size}")
        arrays, i = {}, 0
        for name in PARAM_ORDER:
            shape = arch.shapes()[name]
            size = int(np.prod(shape))
            arrays[name] = flat[i:i + size].reshape(shape).copy()
            i += size
        return cls(arch, arrays)

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays.values())

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


@dataclass(frozen=True)
class DopplerPrediction:
    delta_hat: float
    theta_hat: float


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------

def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def _im2col(X, k):
    """(n, c, m) -> (n, m, c*k) patches for a same-padded convolution."""
    pad = (k - 1) // 2
    Xp = np.pad(X, ((0, 0), (0, 0), (pad, pad)))
    cols = np.lib.stride_tricks.sliding_window_view(Xp, k, axis=2)  # (n, c, m, k)
    n, c, m, _ = cols.shape
    return np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(n, m, c * k)


def _conv_forward(X, W, b):
    cout, cin, k = W.shape
    cols = _im2col(X, k)
    out = cols @ W.reshape(cout, cin * k).T + b
    return out.transpose(0, 2, 1), cols


def _conv_backward(dout, cols, W, need_input_grad):
    """dout: (n, cout, m). Returns dW, db and optionally dX (n, cin, m)."""
    cout, cin, k = W.shape
    n, _, m = dout.shape
    d = dout.transpose(0, 2, 1).reshape(n * m, cout)
    dW = (d.T @ cols.reshape(n * m, cin * k)).reshape(W.shape)
    db = d.sum(axis=0)
    if not need_input_grad:
        return dW, db, None
    dcols = (d @ W.reshape(cout, cin * k)).reshape(n, m, cin, k)
    pad = (k - 1) // 2
    dXp = np.zeros((n, cin, m + 2 * pad))
    for kk in range(k):
        dXp[:, :, kk:kk + m] += dcols[:, :, :, kk].transpose(0, 2, 1)
    return dW, db, dXp[:, :, pad:pad + m]


def _channels(F):
    """Real/imaginary channels scaled by sqrt(m) so entries are O(1) for unit-norm rows."""
    F = np.atleast_2d(F)
    return np.stack([F.real, F.imag], axis=1) * np.sqrt(F.shape[-1])


def _forward_raw(params, F, keep=False):
    X = _channels(F)
    if X.shape[2] != params.arch.m:
        raise InvalidInputError(f"network was built for m={params.arch.m}, input has length {X.shape[2]}")
    h1, cols1 = _conv_forward(X, params["conv1_w"], params["conv1_b"])
    a1 = silu(h1)
    h2, cols2 = _conv_forward(a1, params["conv2_w"], params["conv2_b"])
    a2 = silu(h2)
    flat = a2.reshape(a2.shape[0], -1)
    raw = flat @ params["fc_w"] + params["fc_b"][0]
    if keep:
        return raw, (cols1, h1, cols2, h2, flat)
    return raw


def _backward_raw(params, cache, g_raw):
    cols1, h1, cols2, h2, flat = cache
    grads = {"fc_w": flat.T @ g_raw, "fc_b": np.array([g_raw.sum()])}
    da2 = (g_raw[:, None] * params["fc_w"][None, :]).reshape(h2.shape)
    dh2 = da2 * silu_grad(h2)
    grads["conv2_w"], grads["conv2_b"], da1 = _conv_backward(dh2, cols2, params["conv2_w"], True)
    dh1 = da1 * silu_grad(h1)
    grads["conv1_w"], grads["conv1_b"], _ = _conv_backward(dh1, cols1, params["conv1_w"], False)
    return grads


def predict_offset(params, F):
    """Raw output and the bounded offset ``tanh(raw)`` for each row of ``F``."""
    raw = _forward_raw(params, F)
    return raw, np.tanh(raw)


def forward(params, u, cell):
    """Single-observation forward pass: ``(raw, DopplerPrediction)``."""
    u = np.asarray(u, dtype=complex)
    if u.ndim != 1 or u.shape[0] != params.arch.m:
        raise InvalidInputError(f"expected a length-{params.arch.m} vector")
    raw, delta = predict_offset(params, u[None, :])
    d = float(delta[0])
    return float(raw[0]), DopplerPrediction(d, float(cell.center + d * cell.half_width))


# --------------------------------------------------------------------------
# Score and its derivative in theta
# --------------------------------------------------------------------------

def _score_and_dtheta(w, U, theta):
    A = w.inv_sqrt
    m = w.m
    a = steering(theta, m) @ A.T
    da = steering_derivative(theta, m) @ A.T
    c = np.einsum("ij,ij->i", a.conj(), U)
    dc = np.einsum("ij,ij->i", da.conj(), U)
    na = np.einsum("ij,ij->i", a.conj(), a).real
    dna = 2.0 * np.einsum("ij,ij->i", a.conj(), da).real
    c2 = c.real ** 2 + c.imag ** 2
    T = c2 / na
    dT = (2.0 * (c.conj() * dc).real * na - c2 * dna) / na ** 2
    return T, dT


def score_at(w, U, theta):
    """``|v(theta)^H u|^2`` row by row."""
    return _score_and_dtheta(w, np.atleast_2d(U), np.atleast_1d(theta))[0]


def score_gradient_wrt_theta(w, u, theta):
    """Analytic d/d theta of ``|v(theta)^H u|^2``."""
    u = np.asarray(u, dtype=complex)
    single = u.ndim == 1
    _, dT = _score_and_dtheta(w, np.atleast_2d(u), np.atleast_1d(theta))
    return float(dT[0]) if single else dT


def amortized_score(params, w, u, cell, features=None):
    """Correlation energy at the predicted Doppler, one template per observation."""
    from .detectors import DetectorScore

    u = np.asarray(u, dtype=complex)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    F = U if features is None else np.atleast_2d(features)
    _, delta = predict_offset(params, F)
    theta_hat = cell.center + delta * cell.half_width
    T = kernels.row_energy(U, w.template(theta_hat))
    if single:
        return DetectorScore(float(T[0]), 1)
    return T


# --------------------------------------------------------------------------
# Loss
# --------------------------------------------------------------------------

def huber(e, kappa):
    a = np.abs(e)
    return np.where(a <= kappa, 0.5 * e ** 2, kappa * (a - 0.5 * kappa))


def huber_grad(e, kappa):
    return np.clip(e, -kappa, kappa)


@dataclass
class Batch:
    """Network-ready batch: whitened unit rows ``U``, features, labels, offsets."""

    U: np.ndarray
    F: np.ndarray
    y: np.ndarray
    delta: np.ndarray

    def __len__(self):
        return self.U.shape[0]

    def take(self, idx):
        return Batch(self.U[idx], self.F[idx], self.y[idx], self.delta[idx])


def make_batch(obs, w, network_input="u"):
    U = w.whiten_normalize(obs.z)
    F = U if network_input == "u" else obs.z @ w.inv_sqrt.T
    return Batch(U, F, obs.y.astype(float), np.nan_to_num(obs.delta))


def loss_and_grad(params, batch, cfg, w, cell, need_grad=True):
    """Cross-entropy on the score plus ``lam`` times the Huber offset loss.

    The Huber term is the batch mean of ``Huber(delta_hat - delta) * 1{y=1}``.
    """
    n = len(batch)
    if n == 0:
        raise InvalidInputError("empty batch")
    raw, cache = _forward_raw(params, batch.F, keep=True)
    delta_hat = np.tanh(raw)
    theta_hat = cell.center + delta_hat * cell.half_width
    T, dT = _score_and_dtheta(w, batch.U, theta_hat)
    Tc = np.clip(T, CE_EPS, 1.0 - CE_EPS)
    y = batch.y
    ce = -(y * np.log(Tc) + (1.0 - y) * np.log(1.0 - Tc))
    err = delta_hat - batch.delta
    hub = huber(err, cfg.kappa) * y
    total = ce.mean() + cfg.lam * hub.mean()
    if not need_grad:
        return float(total), None
    inside = (T > CE_EPS) & (T < 1.0 - CE_EPS)
    dL_dT = np.where(inside, (-y / Tc + (1.0 - y) / (1.0 - Tc)), 0.0) / n
    dL_ddelta = dL_dT * dT * cell.half_width + cfg.lam * y * huber_grad(err, cfg.kappa) / n
    g_raw = dL_ddelta * (1.0 - delta_hat ** 2)
    return float(total), _backward_raw(params, cache, g_raw)


def loss(params, batch, cfg, w, cell):
    return loss_and_grad(params, batch, cfg, w, cell, need_grad=False)[0]


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in PARAM_ORDER:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params.arrays[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TrainingResult:
    params: NetworkParams
    history: list
    best_epoch: int


def train(scenario, cfg, w, seed=None):
    """Minibatch Adam on a freshly drawn balanced set; returns the chosen checkpoint.

    Streams are derived from ``seed`` (default ``cfg.seed``) so a given seed
    always yields identical parameters.
    """
    seed = cfg.seed if seed is None else seed
    cell = scenario.cell
    arch = cfg.architecture(scenario.m)
    train_set = make_batch(draw_balanced(scenario, cfg.n_train, rng_stream(seed, "train", "data"),
                                         cfg.snr_grid), w, cfg.network_input)
    val_set = make_batch(draw_balanced(scenario, cfg.n_val, rng_stream(seed, "train", "val"),
                                       cfg.snr_grid), w, cfg.network_input)
    params = NetworkParams.init(arch, rng_stream(seed, "train", "init"))
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    history = []
    best, best_val, best_epoch = params.copy(), np.inf, 0
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = rng_stream(seed, "train", "shuffle", epoch).permutation(n)
        running = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = train_set.take(order[start:start + cfg.batch_size])
            value, grads = loss_and_grad(params, batch, cfg, w, cell)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            opt.step(params, grads)
            if not params.all_finite():
                raise TrainingDivergedError(f"non-finite parameters at epoch {epoch}, batch {b}", epoch, b)
            running += value * len(batch)
        val = loss(params, val_set, cfg, w, cell)
        if not np.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}", epoch, None)
        history.append({"epoch": epoch, "train_loss": running / n, "val_loss": val})
        log.info("epoch %d train %.5f val %.5f", epoch, running / n, val)
        if val < best_val:
            best, best_val, best_epoch = params.copy(), val, epoch
    if cfg.checkpoint == "last":
        return TrainingResult(params, history, cfg.epochs)
    return TrainingResult(best, history, best_epoch)


class AmortizedDetector:
    """Batch detector wrapping a trained regressor."""

    name = "amortized"
    correlations_per_test = 1
    templates_per_test = 1

    def __init__(self, params, whitener, cell, network_input="u"):
        self.params = params
        self.whitener = whitener
        self.cell = cell
        self.network_input = network_input

    def predict_theta(self, obs, U):
        F = U if self.network_input == "u" else obs.z @ self.whitener.inv_sqrt.T
        _, delta = predict_offset(self.params, F)
        return self.cell.center + delta * self.cell.half_width

    def score_batch(self, obs, U):
        return kernels.row_energy(U, self.whitener.template(self.predict_theta(obs, U)))
