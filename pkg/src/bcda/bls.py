"""Broad learning system used as the critic.

The network is ``Y = [Z | H] W_out`` with random frozen hidden layers

    Z = tanh(X W_f + beta_f)        (feature nodes)
    H = tanh(Z W_e + beta_e)        (enhancement nodes)

and output weights fit by ridge regression. Width can grow after a fit by
appending feature or enhancement nodes; the output weights are then updated
through the block pseudoinverse instead of a full refit.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import numerics
from .errors import DimensionMismatch, StaleCache

_MAGIC = b"BLSNET01"


@dataclass(frozen=True)
class BlsGrowthPlan:
    add_feature: int = 0
    add_enhance: int = 0

    def __post_init__(self):
        if self.add_feature < 0 or self.add_enhance < 0:
            raise ValueError("growth counts must be non-negative")
        if self.add_feature == 0 and self.add_enhance == 0:
            raise ValueError("growth plan adds no nodes")


@dataclass
class FitReport:
    rmse: float
    n_feature: int
    m_enhance: int


@dataclass
class _FitCache:
    # A and factor keep columns in the order they were appended; column j of
    # the [Z | H] layout is column order[j] of A.
    X: np.ndarray
    A: np.ndarray
    factor: tuple
    order: np.ndarray
    pinv: np.ndarray | None = None

    @property
    def layout_A(self):
        return self.A[:, self.order]


@dataclass
class BlsNet:
    W_f: np.ndarray
    beta_f: np.ndarray
    W_e: np.ndarray
    beta_e: np.ndarray
    W_out: np.ndarray
    shrinkage: float
    lam: float
    _cache: _FitCache | None = field(default=None, repr=False)

    @property
    def input_dim(self):
        return self.W_f.shape[0]

    @property
    def out_dim(self):
        return self.W_out.shape[1]

    @property
    def n_feature(self):
        return self.W_f.shape[1]

    @property
    def m_enhance(self):
        return self.W_e.shape[1]

    @property
    def n_nodes(self):
        return self.n_feature + self.m_enhance

    @property
    def cached_A_pinv(self):
        """Regularized pseudoinverse of the last training design matrix.

        Computed on first access from the Cholesky factor kept by the fit, so
        fits that are never followed by growth do not pay for it.
        """
        if self._cache is None:
            return None
        c = self._cache
        if c.pinv is None:
            c.pinv = scipy.linalg.cho_solve(c.factor, c.A.T, check_finite=False)[c.order]
        return c.pinv

    def invalidate_cache(self):
        self._cache = None

    def copy(self):
        return BlsNet(
            self.W_f.copy(), self.beta_f.copy(), self.W_e.copy(), self.beta_e.copy(),
            self.W_out.copy(), self.shrinkage, self.lam,
        )


def _uniform(rng, shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def bls_init(input_dim, out_dim, n_feature, m_enhance, shrinkage, lam, rng):
    if min(input_dim, out_dim, n_feature, m_enhance) < 1:
        raise ValueError("all BLS dimensions must be >= 1")
    if not 0.0 < shrinkage <= 1.0:
        raise ValueError(f"shrinkage must be in (0, 1], got {shrinkage}")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    W_f = _uniform(rng, (input_dim, n_feature))
    beta_f = _uniform(rng, n_feature)
    W_e = shrinkage * _uniform(rng, (n_feature, m_enhance))
    beta_e = _uniform(rng, m_enhance)
    W_out = np.zeros((n_feature + m_enhance, out_dim))
    return BlsNet(W_f, beta_f, W_e, beta_e, W_out, float(shrinkage), float(lam))


def _check_input(net, X):
    X = numerics.as_matrix(X, "X") if np.ndim(X) != 1 else np.asarray(X, dtype=np.float64)[None, :]
    if X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected {net.input_dim} input columns, got {X.shape[1]}")
    return X


def _hidden(net, X):
    Z = np.tanh(X @ net.W_f + net.beta_f)
    H = np.tanh(Z @ net.W_e + net.beta_e)
    return Z, H


def build_design_matrix(net, X):
    Z, H = _hidden(net, _check_input(net, X))
    return np.hstack([Z, H])


def bls_forward(net, X):
    single = np.ndim(X) == 1
    Z, H = _hidden(net, _check_input(net, X))
    n = net.n_feature
    out = Z @ net.W_out[:n] + H @ net.W_out[n:]
    return out[0] if single else out


def _targets(net, Y, rows):
    Y = numerics.as_matrix(Y, "Y")
    if Y.shape != (rows, net.out_dim):
        raise DimensionMismatch(f"Y shape {Y.shape} does not match ({rows}, {net.out_dim})")
    return Y


def _report(net, A, Y):
    return FitReport(numerics.ridge_residual_rmse(A, net.W_out, Y), net.n_feature, net.m_enhance)


def fit_output_weights(net, X, Y, A=None):
    """Ridge-fit ``W_out`` on ``(X, Y)`` and keep what growth needs.

    ``A`` may pass in ``build_design_matrix(net, X)`` when the caller has it.
    """
    X = _check_input(net, X)
    Y = _targets(net, Y, X.shape[0])
    if A is None:
        A = build_design_matrix(net, X)
    elif A.shape != (X.shape[0], net.n_nodes):
        raise DimensionMismatch(f"design matrix shape {A.shape} does not match the net and batch")
    G = A.T @ A
    G[np.diag_indices_from(G)] += net.lam
    factor = numerics.cho_factor_spd(G)
    W = scipy.linalg.cho_solve(factor, A.T @ Y, check_finite=False)
    net.W_out = numerics._finite(W, "fit_output_weights")
    net._cache = _FitCache(X=X, A=A, factor=factor, order=np.arange(A.shape[1]))
    return _report(net, A, Y)


def _fresh_cache(net, X):
    if net._cache is None:
        raise StaleCache("no fit cached; call fit_output_weights on this batch first")
    X = _check_input(net, X)
    if X.shape != net._cache.X.shape or not np.array_equal(X, net._cache.X):
        raise StaleCache("growth batch differs from the batch of the cached fit")
    return X


def _append_columns(net, X, Y, new_cols):
    """Shared tail of both growth ops: block update of the cached fit.

    Returns the updated old rows ``W - D B^T Y`` and the new rows ``B^T Y``,
    both in the cache's append order.
    """
    c = net._cache
    Y = _targets(net, Y, X.shape[0])
    W_app = np.empty_like(net.W_out)
    W_app[c.order] = net.W_out
    upd = numerics.ridge_append_columns(c.A, c.factor, new_cols, Y, net.lam)
    c.A = np.hstack([c.A, new_cols])
    c.factor = upd.factor
    c.pinv = None
    return W_app - upd.D @ upd.BtY, upd.BtY


def add_enhancement_nodes(net, q, X, Y, rng):
    """Append ``q`` enhancement nodes fed by all current feature nodes."""
    if q < 1:
        raise ValueError("q must be >= 1")
    X = _fresh_cache(net, X)
    n = net.n_feature
    W_new = net.shrinkage * _uniform(rng, (n, q))
    b_new = _uniform(rng, q)
    c = net._cache
    Z = c.A[:, c.order[:n]]
    H_new = np.tanh(Z @ W_new + b_new)

    p = c.A.shape[1]
    W_app, BtY = _append_columns(net, X, Y, H_new)
    c.order = np.concatenate([c.order, np.arange(p, p + q)])
    net.W_out = np.vstack([W_app, BtY])[c.order]
    net.W_e = np.hstack([net.W_e, W_new])
    net.beta_e = np.concatenate([net.beta_e, b_new])
    return _report(net, c.layout_A, Y)


def add_feature_nodes(net, q, X, Y, rng, enhance_count=None):
    """Append ``q`` feature nodes plus enhancement nodes wired only to them.

    ``enhance_count`` defaults to ``round(q * m / n)``, keeping the current
    feature to enhancement ratio. Existing enhancement nodes get zero weight
    from the new features, so their columns of the design matrix are unchanged.
    """
    plan = BlsGrowthPlan(q, 0)
    X = _fresh_cache(net, X)
    n, m = net.n_feature, net.m_enhance
    if enhance_count is None:
        enhance_count = int(round(plan.add_feature * m / n))
    if enhance_count < 0:
        raise ValueError("enhance_count must be >= 0")

    Wf_new = _uniform(rng, (net.input_dim, q))
    bf_new = _uniform(rng, q)
    Wx = net.shrinkage * _uniform(rng, (q, enhance_count))
    bx = _uniform(rng, enhance_count)
    Z_new = np.tanh(X @ Wf_new + bf_new)
    H_ex = np.tanh(Z_new @ Wx + bx)

    c = net._cache
    p = c.A.shape[1]
    W_app, BtY = _append_columns(net, X, Y, np.hstack([Z_new, H_ex]))
    # [Z | H] layout: old Z, new Z, old H, new H
    c.order = np.concatenate([c.order[:n], np.arange(p, p + q), c.order[n:],
                              np.arange(p + q, p + q + enhance_count)])
    net.W_out = np.vstack([W_app, BtY])[c.order]

    net.W_f = np.hstack([net.W_f, Wf_new])
    net.beta_f = np.concatenate([net.beta_f, bf_new])
    W_e = np.zeros((n + q, m + enhance_count))
    W_e[:n, :m] = net.W_e
    W_e[n:, m:] = Wx
    net.W_e = W_e
    net.beta_e = np.concatenate([net.beta_e, bx])
    return _report(net, c.layout_A, Y)


def grow(net, plan, X, Y, rng):
    """Apply one growth step.

    With ``plan.add_feature > 0`` the enhancement count is spent on companion
    nodes of the new features; otherwise it adds ordinary enhancement nodes.
    """
    if plan.add_feature:
        return add_feature_nodes(net, plan.add_feature, X, Y, rng, enhance_count=plan.add_enhance)
    return add_enhancement_nodes(net, plan.add_enhance, X, Y, rng)


def input_gradient(net, x):
    """Jacobian of ``bls_forward`` with respect to its input.

    A single input vector gives an ``(out_dim, input_dim)`` matrix; a batch of
    ``N`` rows gives ``(N, out_dim, input_dim)``.
    """
    single = np.ndim(x) == 1
    X = _check_input(net, x)
    Z, H = _hidden(net, X)
    n = net.n_feature
    Wz, Wh = net.W_out[:n], net.W_out[n:]
    dH = 1.0 - H * H
    dZ = 1.0 - Z * Z
    # gradient w.r.t. Z for each output: direct path plus enhancement path
    gZ = Wz.T[None, :, :] + np.einsum("nm,mo,fm->nof", dH, Wh, net.W_e)
    J = np.einsum("nof,nf,df->nod", gZ, dZ, net.W_f)
    return J[0] if single else J


def scalar_input_gradient(net, X):
    """Batch gradient of a single-output net, shape ``(N, input_dim)``.

    Same quantity as ``input_gradient(...)[:, 0, :]`` without the einsum
    overhead; this is the hot path of the actor update.
    """
    X = _check_input(net, X)
    Z, H = _hidden(net, X)
    n = net.n_feature
    gH = (1.0 - H * H) * net.W_out[n:, 0]
    gZ = (1.0 - Z * Z) * (net.W_out[:n, 0] + gH @ net.W_e.T)
    return gZ @ net.W_f.T


def polyak_output_weights(target, source, rho):
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if target.W_out.shape != source.W_out.shape:
        raise DimensionMismatch(
            f"target has {target.W_out.shape} output weights, source {source.W_out.shape}"
        )
    target.W_out *= rho
    target.W_out += (1.0 - rho) * source.W_out


def sync_hidden(target, source):
    """Make ``target`` share ``source``'s hidden weights, keeping its own W_out.

    Output rows for nodes that ``target`` lacks are copied from ``source``.
    Nodes are matched by position within the feature and enhancement blocks.
    """
    n_t, m_t = target.n_feature, target.m_enhance
    n_s = source.n_feature
    W = source.W_out.copy()
    W[:n_t] = target.W_out[:n_t]
    W[n_s:n_s + m_t] = target.W_out[n_t:n_t + m_t]
    target.W_f = source.W_f.copy()
    target.beta_f = source.beta_f.copy()
    target.W_e = source.W_e.copy()
    target.beta_e = source.beta_e.copy()
    target.W_out = W
    target.invalidate_cache()


def _write_array(fh, a):
    fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_array(fh, shape):
    count = int(np.prod(shape))
    buf = fh.read(8 * count)
    if len(buf) != 8 * count:
        raise ValueError("truncated BLS checkpoint")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)


def save_bls(net, path):
    """Write dims header, then W_f, beta_f, W_e, beta_e, W_out row-major as <f8."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4q", net.input_dim, net.out_dim, net.n_feature, net.m_enhance))
        fh.write(struct.pack("<2d", net.shrinkage, net.lam))
        for a in (net.W_f, net.beta_f, net.W_e, net.beta_e, net.W_out):
            _write_array(fh, a)


def load_bls(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a BLS checkpoint")
        d, k, n, m = struct.unpack("<4q", fh.read(32))
        shrinkage, lam = struct.unpack("<2d", fh.read(16))
        W_f = _read_array(fh, (d, n))
        beta_f = _read_array(fh, (n,))
        W_e = _read_array(fh, (n, m))
        beta_e = _read_array(fh, (m,))
        W_out = _read_array(fh, (n + m, k))
    return BlsNet(W_f, beta_f, W_e, beta_e, W_out, shrinkage, lam)
