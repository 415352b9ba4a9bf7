"""Gaussian-process regression, shape features and scoring.

Each output dimension gets its own zero-mean GP with an anisotropic
Matern-5/2 kernel. Inputs and outputs are standardised with training
statistics that are stored in the model. Hyperparameters (log length-scales
and log signal variance) maximise the log marginal likelihood with L-BFGS-B
from several seeded starting points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

log = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)
JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class GprError(RuntimeError):
    pass


def matern52(X1, X2, lengthscales, variance):
    """Anisotropic Matern-5/2 kernel matrix."""
    d = (X1[:, None, :] - X2[None, :, :]) / lengthscales
    r = np.sqrt(np.sum(d * d, axis=-1))
    return variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def _chol_with_jitter(K, variance):
    n = len(K)
    for j in JITTERS:
        try:
            c = cho_factor(K + j * variance * np.eye(n), lower=True)
            return c, j
        except np.linalg.LinAlgError:
            continue
    raise GprError("kernel matrix is not positive definite even with jitter 1e-6")


def _neg_log_marginal(theta, X, y):
    """Negative log marginal likelihood and its gradient in log-parameters."""
    p = X.shape[1]
    ls = np.exp(theta[:p])
    s2 = np.exp(theta[p])
    diff = X[:, None, :] - X[None, :, :]
    d2 = (diff / ls) ** 2
    r = np.sqrt(d2.sum(-1))
    e = np.exp(-SQRT5 * r)
    K = s2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    try:
        (L, low), jit = _chol_with_jitter(K, s2)
    except GprError:
        return 1e25, np.zeros_like(theta)
    n = len(y)
    a = cho_solve((L, low), y)
    nll = 0.5 * y @ a + np.log(np.diag(L)).sum() + 0.5 * n * np.log(2 * np.pi)
    Kinv = cho_solve((L, low), np.eye(n))
    W = np.outer(a, a) - Kinv  # d nll = -0.5 tr(W dK)
    grad = np.empty_like(theta)
    common = s2 * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    for k in range(p):
        dK = common * d2[..., k]
        grad[k] = -0.5 * np.sum(W * dK)
    grad[p] = -0.5 * np.sum(W * (K + jit * s2 * np.eye(n)))
    return float(nll), grad


@dataclass
class _Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, A):
        mean = A.mean(axis=0)
        scale = A.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)


@dataclass
class GprModel:
    """Independent GPs over the columns of Y, in standardised coordinates."""

    X: np.ndarray
    Y: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    lengthscales: np.ndarray  # (n_out, p)
    variances: np.ndarray  # (n_out,)
    jitters: np.ndarray  # (n_out,)
    log_likelihood: np.ndarray  # (n_out,)
    _chol: list = field(default_factory=list, repr=False)
    _alpha: list = field(default_factory=list, repr=False)

    @property
    def n_inputs(self):
        return self.X.shape[1]

    @property
    def n_outputs(self):
        return self.Y.shape[1]

    def _prepare(self):
        if self._chol:
            return
        Xs = (self.X - self.x_mean) / self.x_scale
        Ys = (self.Y - self.y_mean) / self.y_scale
        for k in range(self.n_outputs):
            K = matern52(Xs, Xs, self.lengthscales[k], self.variances[k])
            K += self.jitters[k] * self.variances[k] * np.eye(len(Xs))
            c = cho_factor(K, lower=True)
            self._chol.append(c)
            self._alpha.append(cho_solve(c, Ys[:, k]))

    def predict(self, Xq, return_var=False):
        """Posterior mean (and variance) at query inputs ``(m, p)``."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} input features, got {Xq.shape[1]}")
        self._prepare()
        Xs = (self.X - self.x_mean) / self.x_scale
        Qs = (Xq - self.x_mean) / self.x_scale
        mean = np.empty((len(Xq), self.n_outputs))
        var = np.empty_like(mean)
        for k in range(self.n_outputs):
            Ks = matern52(Qs, Xs, self.lengthscales[k], self.variances[k])
            mean[:, k] = Ks @ self._alpha[k]
            v = cho_solve(self._chol[k], Ks.T)
            var[:, k] = np.maximum(self.variances[k] - np.sum(Ks * v.T, axis=1), 0.0)
        mean = mean * self.y_scale + self.y_mean
        var = var * self.y_scale ** 2
        return (mean, var) if return_var else mean

    def to_arrays(self):
        return {k: getattr(self, k) for k in ("X", "Y", "x_mean", "x_scale", "y_mean", "y_scale",
                                              "lengthscales", "variances", "jitters",
                                              "log_likelihood")}

    @classmethod
    def from_arrays(cls, d):
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def gpr_train(X, Y, restarts=5, seed=0):
    """Fit one GP per column of ``Y`` by multi-start marginal-likelihood search.

    With a single training row the model degenerates to a constant predictor.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    if len(Y) != n:
        raise ValueError("X and Y have different numbers of rows")
    if n < 1:
        raise ValueError("no training data")
    _, inv, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    for g in np.nonzero(counts > 1)[0]:
        rows = Y[inv == g]
        if np.any(rows != rows[0]):
            raise ValueError("duplicate inputs with conflicting outputs")
    xs, ys = _Scaler.fit(X), _Scaler.fit(Y)
    Xs = (X - xs.mean) / xs.scale
    Ys = (Y - ys.mean) / ys.scale
    n_out = Y.shape[1]
    ls = np.ones((n_out, p))
    var = np.ones(n_out)
    jit = np.full(n_out, JITTERS[0])
    ll = np.zeros(n_out)
    if n >= 2:
        rng = np.random.default_rng(seed)
        starts = [np.zeros(p + 1)] + [np.concatenate([rng.uniform(-1.5, 1.5, p), rng.uniform(-1, 1, 1)])
                                      for _ in range(max(0, restarts - 1))]
        bounds = [(np.log(1e-2), np.log(1e3))] * p + [(np.log(1e-3), np.log(1e3))]
        for k in range(n_out):
            y = Ys[:, k]
            if not np.any(y):
                var[k] = 1e-3  # constant output: smallest admissible prior
                continue
            best = None
            for s, th0 in enumerate(starts):
                res = minimize(_neg_log_marginal, th0, args=(Xs, y), jac=True, method="L-BFGS-B",
                               bounds=bounds)
                if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                    best = res
            if best is None:
                raise GprError(f"hyperparameter search failed for output {k}")
            ls[k] = np.exp(best.x[:p])
            var[k] = np.exp(best.x[p])
            K = matern52(Xs, Xs, ls[k], var[k])
            _, jit[k] = _chol_with_jitter(K, var[k])
            ll[k] = -best.fun
            log.debug("gp output %d: ls=%s var=%.3g ll=%.3f", k, ls[k], var[k], ll[k])
    return GprModel(X, Y, xs.mean, xs.scale, ys.mean, ys.scale, ls, var, jit, ll)


def predict_init(model, d):
    """Initial generalised coordinates predicted from shape features."""
    return model.predict(np.atleast_2d(d))[0]


def predict_scalar(model, alpha, mu, return_var=False):
    x = np.concatenate([np.ravel(alpha), np.ravel(mu)])[None, :]
    out = model.predict(x, return_var)
    if return_var:
        return out[0][0], out[1][0]
    return out[0]


def q2_score(y_true, y_pred):
    """1 - sum (y - f)^2 / sum (y - mean y)^2."""
    y = np.asarray(y_true, dtype=float).ravel()
    f = np.asarray(y_pred, dtype=float).ravel()
    if len(y) != len(f):
        raise ValueError("y_true and y_pred have different lengths")
    if len(y) < 2:
        raise ValueError("need at least two samples")
    ss = np.sum((y - y.mean()) ** 2)
    if ss == 0:
        raise ValueError("y_true has zero variance")
    return float(1.0 - np.sum((y - f) ** 2) / ss)


def synthetic_scalar_oracle(loop, mu):
    """Drag-like scalar of a closed shape loop: v0^2 times the boundary integral
    of max(0, n . e(theta0)), n the outward normal of the shape."""
    loop = np.asarray(loop, dtype=float)
    if len(loop) < 3:
        raise ValueError("shape loop needs at least three points")
    if np.array_equal(loop[0], loop[-1]):
        raise ValueError("give the loop without repeating the first point")
    v0, th0 = float(mu[0]), float(mu[1])
    nxt = np.roll(loop, -1, axis=0)
    area2 = np.sum(loop[:, 0] * nxt[:, 1] - nxt[:, 0] * loop[:, 1])
    t = nxt - loop
    n = np.stack([t[:, 1], -t[:, 0]], axis=1)  # |n| = segment length, outward for CCW
    if area2 < 0:
        n = -n
    e = np.array([np.cos(th0), np.sin(th0)])
    return v0 * v0 * float(np.sum(np.maximum(0.0, n @ e)))


# -- shape features -------------------------------------------------------

@dataclass
class FeatureBasis:
    """Boundary-mass-orthonormal basis of stacked vector-distance fields."""

    theta: np.ndarray  # (q, 2 * n_vertices)
    eigenvalues: np.ndarray
    coords: np.ndarray  # (n_train, q)

    @property
    def q(self):
        return len(self.theta)

    def project(self, D, M):
        return self.theta @ (M @ np.ravel(D))


def shape_features(reference, target):
    """Vector distance from each reference boundary node to its target line,
    as an interleaved nodal field (zero at interior nodes)."""
    from .distfield import build_index, check_tags
    from .morph import boundary_targets

    index = target if hasattr(target, "project_tagged") else build_index(target)
    check_tags(reference, index)
    nodes, tgt = boundary_targets(reference, index)
    D = np.zeros((reference.n_vertices, 2))
    D[nodes] = tgt - reference.vertices[nodes]
    return D.ravel()


def fit_feature_basis(fields, M, q):
    """Snapshot POD of the feature fields in the boundary mass inner product."""
    from .rom import snapshot_pod

    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    if not np.any(fields):
        z = np.zeros((0, fields.shape[1]))
        return FeatureBasis(z, np.zeros(len(fields)), np.zeros((len(fields), 0)))
    pod = snapshot_pod(fields, M)
    q = min(q, pod.n_modes)
    return FeatureBasis(pod.modes[:q], pod.eigenvalues, pod.coords[:, :q])
