"""Soft-margin SVM with a polynomial kernel, trained by SMO.

The solver is sequential minimal optimization with maximal-violating-pair
working-set selection: each step picks the (i, j) pair with the largest
KKT violation across the up/down index sets and solves the two-variable
subproblem in closed form.  Everything is deterministic; the seed argument
is accepted for interface stability but never consulted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, ParameterError

MODEL_FORMAT_VERSION = 1

# (dot + offset) beyond this would overflow/denormalize a degree-6 power;
# unit-normalized descriptor blocks keep dots far inside the envelope.
_KERNEL_DOT_LIMIT = 1e3

_SV_EPS = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    degree: int = 6
    offset: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ParameterError(f"degree must be an integer >= 1, got {self.degree}")
        if self.offset < 0:
            raise ParameterError(f"offset must be >= 0, got {self.offset}")


def poly_kernel(xi: np.ndarray, xj: np.ndarray, spec: KernelSpec) -> float:
    base = float(np.dot(xi, xj)) + spec.offset
    if abs(base) > _KERNEL_DOT_LIMIT:
        raise ParameterError(f"kernel base {base:.3g} outside the overflow envelope")
    return base**spec.degree


def gram_matrix(x: np.ndarray, spec: KernelSpec) -> np.ndarray:
    base = x @ x.T + spec.offset
    if np.abs(base).max() > _KERNEL_DOT_LIMIT:
        raise ParameterError("kernel base outside the overflow envelope")
    return base**spec.degree


def _kernel_cross(a: np.ndarray, b: np.ndarray, spec: KernelSpec) -> np.ndarray:
    base = a @ b.T + spec.offset
    if base.size and np.abs(base).max() > _KERNEL_DOT_LIMIT:
        raise ParameterError("kernel base outside the overflow envelope")
    return base**spec.degree


@dataclass
class SvmModel:
    kernel: KernelSpec
    c: float
    bias: float
    support_vectors: np.ndarray
    signed_alphas: np.ndarray  # alpha_i * y_i per support vector
    converged: bool = True
    n_updates: int = 0

    @property
    def sv_dim(self) -> int:
        return int(self.support_vectors.shape[1])

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.sv_dim:
            raise DimensionError(f"sample dim {x.shape[1]} != model dim {self.sv_dim}")
        k = _kernel_cross(x, self.support_vectors, self.kernel)
        return k @ self.signed_alphas + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        scores = self.decision_function(x)
        return np.where(scores >= 0.0, 1, -1)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": MODEL_FORMAT_VERSION,
                "kernel": {"degree": int(self.kernel.degree), "offset": float(self.kernel.offset)},
                "c": float(self.c),
                "bias": float(self.bias),
                "sv_dim": self.sv_dim,
                "svs": [[float(v) for v in row] for row in self.support_vectors],
                "signed_alphas": [float(v) for v in self.signed_alphas],
            }
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def load_model(path) -> SvmModel:
    try:
        with open(path, encoding="ascii") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path!r}: {exc}") from exc
    try:
        if raw["format_version"] != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model format_version {raw['format_version']}")
        kernel = KernelSpec(degree=raw["kernel"]["degree"], offset=raw["kernel"]["offset"])
        svs = np.array(raw["svs"], dtype=np.float64)
        alphas = np.array(raw["signed_alphas"], dtype=np.float64)
        if svs.ndim != 2 or svs.shape != (len(alphas), raw["sv_dim"]):
            raise DataError("model support vectors inconsistent with sv_dim/signed_alphas")
        return SvmModel(
            kernel=kernel,
            c=float(raw["c"]),
            bias=float(raw["bias"]),
            support_vectors=svs,
            signed_alphas=alphas,
        )
    except KeyError as exc:
        raise DataError(f"model {path!r} missing field {exc}") from exc


def train(
    x: np.ndarray,
    y: np.ndarray,
    c: float = 0.1,
    kernel: KernelSpec = None,
    seed: int = 0,
    tol: float = 1e-3,
    max_updates: int = 100_000,
) -> SvmModel:
    """Fit the dual soft-margin problem by SMO.

    Runs until the maximal KKT violation gap drops to tol or the pair
    update budget is exhausted (converged=False then; the model is still
    usable).  Bias is the mean KKT estimate over free support vectors
    (0 < alpha < C), falling back to the violation-gap midpoint when the
    margin carries none.
    """
    del seed  # deterministic solver; kept for interface stability
    if kernel is None:
        kernel = KernelSpec()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2:
        raise DimensionError(f"training matrix must be 2-D, got {x.shape}")
    if y.shape != (len(x),):
        raise DimensionError(f"labels shape {y.shape} does not match {len(x)} samples")
    if not np.isin(y, (-1, 1)).all():
        raise DataError("labels must be -1 or +1")
    if not ((y == 1).any() and (y == -1).any()):
        raise DataError("training data must contain both classes")
    if c <= 0:
        raise ParameterError(f"C must be positive, got {c}")
    y = y.astype(np.float64)
    n = len(x)
    k = gram_matrix(x, kernel)

    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - sum(a) at a = 0
    updates = 0
    converged = False
    while updates < max_updates:
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        m_val = np.where(up, yg, -np.inf)
        i = int(m_val.argmax())
        mm = m_val[i]
        m_low = np.where(low, yg, np.inf)
        j = int(m_low.argmin())
        ml = m_low[j]
        if mm - ml <= tol:
            converged = True
            break
        quad = max(k[i, i] + k[j, j] - 2.0 * k[i, j], 1e-12)
        t = (mm - ml) / quad
        # step t moves alpha_i by +y_i t and alpha_j by -y_j t
        if y[i] > 0:
            t = min(t, c - alpha[i])
        else:
            t = min(t, alpha[i])
        if y[j] > 0:
            t = min(t, alpha[j])
        else:
            t = min(t, c - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        grad += t * y * (k[:, i] - k[:, j])
        updates += 1

    scores = k @ (alpha * y)
    # Optimal alphas scale inversely with the kernel magnitude, so the
    # support-vector cutoff has to be relative to the solution, not absolute.
    sv_cut = _SV_EPS * float(alpha.max())
    free = (alpha > sv_cut) & (alpha < c * (1.0 - 1e-9))
    if free.any():
        bias = float((y[free] - scores[free]).mean())
    else:
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        hi = np.where(up, yg, -np.inf).max()
        lo = np.where(low, yg, np.inf).min()
        bias = float(0.5 * (hi + lo))

    keep = alpha > sv_cut
    return SvmModel(
        kernel=kernel,
        c=float(c),
        bias=bias,
        support_vectors=x[keep].copy(),
        signed_alphas=(alpha * y)[keep],
        converged=converged,
        n_updates=updates,
    )


def dual_objective(alphas: np.ndarray, y: np.ndarray, gram: np.ndarray) -> float:
    """W(a) = sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij (to be maximized)."""
    ay = np.asarray(alphas) * np.asarray(y, dtype=np.float64)
    return float(alphas.sum() - 0.5 * ay @ gram @ ay)


def model_dual_objective(model: SvmModel) -> float:
    """Dual objective recovered from a trained model's support set."""
    sa = model.signed_alphas
    k = gram_matrix(model.support_vectors, model.kernel)
    return float(np.abs(sa).sum() - 0.5 * sa @ k @ sa)
