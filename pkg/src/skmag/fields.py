"""Coefficient fields (b, sigma, alpha) with closed-form derivatives.

The magnetic term is alpha(q) * A0 with A0 the 2x2 rotation generator.  Models
come from a small registry of analytically bounded parametric families, so
every derivative is exact and the positivity hypothesis on alpha can be
certified on a probe grid.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, ValidationError

TWO_PI = 2.0 * np.pi

# rotation generator: A0 @ (x, y) = (-y, x); A0^2 = -I, A0^T = -A0 = A0^-1
A0 = np.array([[0.0, -1.0], [1.0, 0.0]])


def a0_apply(v):
    """A0 @ v for v of shape (..., 2)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def rotation(theta):
    """exp(theta * A0) as a (..., 2, 2) array of plane rotations."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(np.shape(theta) + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def magnetic_matrix(model, q):
    """A(q) = alpha(q) * A0, shape (..., 2, 2)."""
    return np.asarray(model.alpha(q))[..., None, None] * A0


def magnetic_inverse(model, q):
    """A(q)^-1 = -A0 / alpha(q)."""
    return -A0 / np.asarray(model.alpha(q))[..., None, None]


def _wrap_unit(x):
    # exact periodization: floor() is exact, so alpha(q + e_i) == alpha(q)
    # bit for bit and trig arguments stay small under epsilon rescaling
    return x - np.floor(x)


@dataclass
class FieldModel:
    """Force b, noise matrix sigma, and magnetic intensity alpha on R^2.

    All callables accept arrays of shape (..., 2) and broadcast.  Dsigma is the
    directional derivative (q, v) -> (D sigma(q)) v as a (..., 2, 2) matrix.
    Declared sup-norm bounds back the phase-bound and step-control rules.
    """

    name: str
    b: Callable
    Db: Callable
    sigma: Callable
    Dsigma: Callable
    alpha: Callable
    grad_alpha: Callable
    alpha_lower: float
    b_sup: float
    sigma_sup: float
    alpha_sup: float
    grad_alpha_sup: float
    periodic: bool = False
    sigma_identity: bool = False
    params: dict = field(default_factory=dict)

    def sigma_apply(self, q, v):
        """sigma(q) @ v without materializing matrices when sigma is I."""
        if self.sigma_identity:
            return v
        s = self.sigma(q)
        out = np.empty_like(v)
        out[..., 0] = s[..., 0, 0] * v[..., 0] + s[..., 0, 1] * v[..., 1]
        out[..., 1] = s[..., 1, 0] * v[..., 0] + s[..., 1, 1] * v[..., 1]
        return out


@dataclass
class HypothesisReport:
    """Grid summary used to certify the boundedness/positivity hypothesis."""

    min_alpha: float
    max_abs_b: float
    max_sigma_norm: float
    max_grad_alpha: float
    alpha_positive: bool
    violations: list


def _const2(value):
    value = np.asarray(value, dtype=float)

    def f(q):
        q = np.asarray(q)
        return np.broadcast_to(value, q.shape).copy()

    return f


def _const_matrix(mat):
    mat = np.asarray(mat, dtype=float)

    def f(q):
        q = np.asarray(q)
        return np.broadcast_to(mat, q.shape[:-1] + (2, 2)).copy()

    return f


def _zero_matrix(q, v=None):
    q = np.asarray(q)
    return np.zeros(q.shape[:-1] + (2, 2))


def _make_constant(params):
    bx = float(params.get("bx", 1.0))
    by = float(params.get("by", 0.0))
    sig = float(params.get("sigma", 1.0))
    alpha = float(params.get("alpha", 2.0))
    b_vec = np.array([bx, by])

    def alpha_fn(q):
        q = np.asarray(q)
        return np.full(q.shape[:-1], alpha)

    return FieldModel(
        name="constant",
        b=_const2(b_vec),
        Db=_zero_matrix,
        sigma=_const_matrix(sig * np.eye(2)),
        Dsigma=lambda q, v: _zero_matrix(q),
        alpha=alpha_fn,
        grad_alpha=_const2(np.zeros(2)),
        alpha_lower=alpha,
        b_sup=float(np.hypot(bx, by)),
        sigma_sup=abs(sig),
        alpha_sup=alpha,
        grad_alpha_sup=0.0,
        sigma_identity=(sig == 1.0),
        params={"bx": bx, "by": by, "sigma": sig, "alpha": alpha},
    )


def _make_rotational(params):
    # b(q) = c * A0 q / sqrt(1 + |q|^2 / R^2): a rotational force clipped
    # smoothly so Hypothesis-style boundedness holds on all of R^2
    c = float(params.get("c", 1.0))
    radius = float(params.get("radius", 5.0))
    sig = float(params.get("sigma", 1.0))
    alpha = float(params.get("alpha", 2.0))

    def phi(q):
        return 1.0 / np.sqrt(1.0 + (q ** 2).sum(axis=-1) / radius ** 2)

    def b_fn(q):
        q = np.asarray(q, dtype=float)
        return c * phi(q)[..., None] * a0_apply(q)

    def Db_fn(q):
        q = np.asarray(q, dtype=float)
        p = phi(q)
        grad_phi = -(q / radius ** 2) * (p ** 3)[..., None]
        out = np.empty(q.shape[:-1] + (2, 2))
        rot_q = a0_apply(q)
        out[..., :, :] = c * p[..., None, None] * A0
        out += c * rot_q[..., :, None] * grad_phi[..., None, :]
        return out

    def alpha_fn(q):
        q = np.asarray(q)
        return np.full(q.shape[:-1], alpha)

    return FieldModel(
        name="rotational",
        b=b_fn,
        Db=Db_fn,
        sigma=_const_matrix(sig * np.eye(2)),
        Dsigma=lambda q, v: _zero_matrix(q),
        alpha=alpha_fn,
        grad_alpha=_const2(np.zeros(2)),
        alpha_lower=alpha,
        b_sup=abs(c) * radius,
        sigma_sup=abs(sig),
        alpha_sup=alpha,
        grad_alpha_sup=0.0,
        sigma_identity=(sig == 1.0),
        params={"c": c, "radius": radius, "sigma": sig, "alpha": alpha},
    )


def _make_periodic1d(params):
    base = float(params.get("base", 2.0))
    amp = float(params.get("amp", 1.0))
    bx = float(params.get("bx", 0.0))
    by = float(params.get("by", 0.0))
    sig = float(params.get("sigma", 1.0))

    def alpha_fn(q):
        q = np.asarray(q, dtype=float)
        return base + amp * np.sin(TWO_PI * _wrap_unit(q[..., 0]))

    def grad_fn(q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape)
        out[..., 0] = TWO_PI * amp * np.cos(TWO_PI * _wrap_unit(q[..., 0]))
        return out

    return FieldModel(
        name="periodic1d",
        b=_const2(np.array([bx, by])),
        Db=_zero_matrix,
        sigma=_const_matrix(sig * np.eye(2)),
        Dsigma=lambda q, v: _zero_matrix(q),
        alpha=alpha_fn,
        grad_alpha=grad_fn,
        alpha_lower=base - abs(amp),
        b_sup=float(np.hypot(bx, by)),
        sigma_sup=abs(sig),
        alpha_sup=base + abs(amp),
        grad_alpha_sup=TWO_PI * abs(amp),
        periodic=True,
        sigma_identity=(sig == 1.0),
        params={"base": base, "amp": amp, "bx": bx, "by": by, "sigma": sig},
    )


def _make_smooth2d(params):
    base = float(params.get("base", 2.0))
    amp = float(params.get("amp", 0.5))
    b_amp = float(params.get("b_amp", 0.5))
    sig = float(params.get("sigma", 1.0))
    sig_amp = float(params.get("sigma_amp", 0.0))

    def alpha_fn(q):
        q = np.asarray(q, dtype=float)
        u = TWO_PI * _wrap_unit(q[..., 0])
        v = TWO_PI * _wrap_unit(q[..., 1])
        return base + amp * np.sin(u) * np.cos(v)

    def grad_fn(q):
        q = np.asarray(q, dtype=float)
        u = TWO_PI * _wrap_unit(q[..., 0])
        v = TWO_PI * _wrap_unit(q[..., 1])
        out = np.empty(q.shape)
        out[..., 0] = TWO_PI * amp * np.cos(u) * np.cos(v)
        out[..., 1] = -TWO_PI * amp * np.sin(u) * np.sin(v)
        return out

    def b_fn(q):
        q = np.asarray(q, dtype=float)
        out = np.empty(q.shape)
        out[..., 0] = b_amp * np.cos(TWO_PI * _wrap_unit(q[..., 1]))
        out[..., 1] = b_amp * np.sin(TWO_PI * _wrap_unit(q[..., 0]))
        return out

    def Db_fn(q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 1] = -TWO_PI * b_amp * np.sin(TWO_PI * _wrap_unit(q[..., 1]))
        out[..., 1, 0] = TWO_PI * b_amp * np.cos(TWO_PI * _wrap_unit(q[..., 0]))
        return out

    def sigma_fn(q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = sig + sig_amp * np.sin(TWO_PI * _wrap_unit(q[..., 1]))
        out[..., 1, 1] = sig + sig_amp * np.cos(TWO_PI * _wrap_unit(q[..., 0]))
        return out

    def Dsigma_fn(q, v):
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = sig_amp * TWO_PI * np.cos(TWO_PI * _wrap_unit(q[..., 1])) * v[..., 1]
        out[..., 1, 1] = -sig_amp * TWO_PI * np.sin(TWO_PI * _wrap_unit(q[..., 0])) * v[..., 0]
        return out

    identity = (sig == 1.0 and sig_amp == 0.0)
    return FieldModel(
        name="smooth2d",
        b=b_fn,
        Db=Db_fn,
        sigma=sigma_fn,
        Dsigma=Dsigma_fn,
        alpha=alpha_fn,
        grad_alpha=grad_fn,
        alpha_lower=base - abs(amp),
        b_sup=abs(b_amp) * np.sqrt(2.0),
        sigma_sup=abs(sig) + abs(sig_amp),
        alpha_sup=base + abs(amp),
        grad_alpha_sup=TWO_PI * abs(amp) * np.sqrt(2.0),
        periodic=True,
        sigma_identity=identity,
        params={"base": base, "amp": amp, "b_amp": b_amp, "sigma": sig, "sigma_amp": sig_amp},
    )


_FAMILIES = {
    "constant": _make_constant,
    "rotational": _make_rotational,
    "periodic1d": _make_periodic1d,
    "smooth2d": _make_smooth2d,
}


def model_from_config(spec, validate=True, box=None, grid_size=64):
    """Build a FieldModel from {"family": name, "params": {...}}.

    With validate=True the positivity/boundedness hypothesis is checked on a
    probe grid over `box` (defaults to [-2, 2]^2, or the unit cell for
    periodic families).
    """
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigurationError("model spec must be a dict with a 'family' key")
    family = spec["family"]
    if family not in _FAMILIES:
        raise ConfigurationError(
            f"unknown model family {family!r}; registered: {sorted(_FAMILIES)}")
    params = spec.get("params", {}) or {}
    model = _FAMILIES[family](params)
    if validate:
        if box is None:
            box = ((0.0, 1.0), (0.0, 1.0)) if model.periodic else ((-2.0, 2.0), (-2.0, 2.0))
        report = check_hypothesis(model, box, grid_size)
        if not report.alpha_positive or model.alpha_lower <= 0:
            raise ValidationError(
                f"alpha is not uniformly positive (declared lower bound "
                f"{model.alpha_lower}, grid minimum {report.min_alpha})")
    return model


def check_hypothesis(model, box, n):
    """Evaluate min alpha and the sup norms of b, sigma, grad alpha on a grid.

    Report-only: violations are flagged, never raised.
    """
    if n < 16:
        raise ValueError(f"probe grid size must be >= 16, got {n}")
    (x0, x1), (y0, y1) = box
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    q = np.stack([X, Y], axis=-1)
    a = np.asarray(model.alpha(q))
    bnorm = np.sqrt((np.asarray(model.b(q)) ** 2).sum(axis=-1))
    smat = np.asarray(model.sigma(q))
    snorm = np.linalg.norm(smat, axis=(-2, -1))
    gnorm = np.sqrt((np.asarray(model.grad_alpha(q)) ** 2).sum(axis=-1))
    min_alpha = float(a.min())
    violations = []
    if min_alpha <= 0:
        violations.append(f"alpha has minimum {min_alpha} <= 0 on the probe grid")
    if min_alpha < model.alpha_lower * (1 - 1e-9):
        violations.append(
            f"grid minimum {min_alpha} undercuts declared lower bound {model.alpha_lower}")
    return HypothesisReport(
        min_alpha=min_alpha,
        max_abs_b=float(bnorm.max()),
        max_sigma_norm=float(snorm.max()),
        max_grad_alpha=float(gnorm.max()),
        alpha_positive=min_alpha > 0,
        violations=violations,
    )


def rescale_periodic(model, epsilon):
    """Model with the magnetic intensity oscillating on scale epsilon.

    alpha_eps(q) = alpha(q / epsilon); grad alpha picks up the 1/epsilon
    chain-rule factor; b and sigma are unchanged.
    """
    if not model.periodic:
        raise ValidationError(f"model {model.name!r} is not periodic; cannot rescale")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    eps = float(epsilon)

    def alpha_fn(q):
        return model.alpha(np.asarray(q, dtype=float) / eps)

    def grad_fn(q):
        return model.grad_alpha(np.asarray(q, dtype=float) / eps) / eps

    return FieldModel(
        name=f"{model.name}/eps={eps}",
        b=model.b,
        Db=model.Db,
        sigma=model.sigma,
        Dsigma=model.Dsigma,
        alpha=alpha_fn,
        grad_alpha=grad_fn,
        alpha_lower=model.alpha_lower,
        b_sup=model.b_sup,
        sigma_sup=model.sigma_sup,
        alpha_sup=model.alpha_sup,
        grad_alpha_sup=model.grad_alpha_sup / eps,
        periodic=False,
        sigma_identity=model.sigma_identity,
        params=dict(model.params, epsilon=eps),
    )
