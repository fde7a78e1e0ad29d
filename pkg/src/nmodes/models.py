"""Planar soft-arm models: piecewise constant curvature (PCC) arms and rigid
chains with elastic revolute joints, plus a constant-mass polynomial
oscillator used as a reference system.

Geometry lives in the (x, z) plane and is handled with complex numbers
``x + i z``.  The rest backbone hangs along -z with gravity, so the straight
configuration is a strict potential minimum.  A backbone tangent at angle
``theta`` (measured from -z toward +x) is ``-i exp(i theta)``.

Mass matrix, Coriolis/centrifugal vector and gravity gradient all come from
line-density integrals evaluated with per-segment Gauss-Legendre quadrature::

    M(q)     = int rho A  J_p^T J_p        ds
    c(q, qd) = int rho A  J_p^T (dJ_p qd)  ds
    dV_g/dq  = -int rho A J_p^T g          ds
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import jsonschema
import numpy as np

from ._kernels import PCC, RIGID, chain_dop853, chain_eval, chain_points, chain_rhs_batch
from .dynamics import MechanicalModel, _solve_mass
from .errors import ContractViolation, ModelSpecError

DEFAULT_GRAVITY = 9.81
DEFAULT_QUAD_POINTS = 7


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------
def _to_xyz(P: np.ndarray) -> np.ndarray:
    return np.stack([P.real, np.zeros_like(P.real), P.imag], axis=-1)


class PlanarChainModel(MechanicalModel):
    """Serial planar chain of PCC arcs or rigid links with uniform line density.

    Parameters
    ----------
    kind : {"pcc", "rigid_chain"}
        Segment kinematics.  PCC segments bend as circular arcs subtending
        angle ``q_i``; rigid links rotate by ``q_i`` at their proximal joint.
    segment_lengths : array_like
        Rest length of each segment (m).
    line_density : float
        Mass per unit length ``rho A`` (kg/m).
    joint_stiffness : array_like
        Elastic coefficient per coordinate, ``V_el = 0.5 sum k_i q_i^2``.
    gravity : float
        Gravitational acceleration magnitude (m/s^2).
    gravity_direction : tuple of float
        Unit (x, z) direction of gravity; default points along -z.
    quad_points : int
        Gauss-Legendre nodes per curved segment (rigid links always use two,
        which integrate their quadratic moments exactly).
    spec : dict, optional
        Normative description used for the fingerprint.
    """

    def __init__(
        self,
        kind,
        segment_lengths,
        line_density,
        joint_stiffness,
        gravity=DEFAULT_GRAVITY,
        gravity_direction=(0.0, -1.0),
        quad_points=DEFAULT_QUAD_POINTS,
        spec=None,
    ):
        if kind not in ("pcc", "rigid_chain"):
            raise ModelSpecError(f"unknown model kind {kind!r}")
        self.kind = kind
        self._kind = PCC if kind == "pcc" else RIGID
        self.segment_lengths = np.asarray(segment_lengths, dtype=float)
        self.n_dofs = self.segment_lengths.size
        self.length = float(self.segment_lengths.sum())
        self.line_density = float(line_density)
        self.joint_stiffness = np.broadcast_to(np.asarray(joint_stiffness, dtype=float), (self.n_dofs,)).copy()
        self.gravity = float(gravity)
        gx, gz = gravity_direction
        norm = math.hypot(gx, gz)
        self.gravity_direction = (gx / norm, gz / norm)
        self._gvec = complex(self.gravity * gx / norm, self.gravity * gz / norm)
        # rigid-link integrands are quadratic in arc length: two nodes are exact
        x, w = np.polynomial.legendre.leggauss(2 if self._kind == RIGID else quad_points)
        half = self.segment_lengths[:, None] / 2
        self._sig = half * (x[None, :] + 1)
        self._wts = self.line_density * half * w[None, :]
        self.quad_points = quad_points
        self._spec = spec
        for a in (self.segment_lengths, self.joint_stiffness, self._sig, self._wts):
            a.flags.writeable = False

    def spec(self):
        if self._spec is not None:
            return dict(self._spec)
        return {
            "kind": self.kind,
            "segment_lengths": self.segment_lengths.tolist(),
            "line_density": self.line_density,
            "joint_stiffness": self.joint_stiffness.tolist(),
            "gravity": self.gravity,
            "gravity_direction": list(self.gravity_direction),
            "quad_points": self.quad_points,
        }

    def _eval(self, q, qd):
        n = self.n_dofs
        M, c, g = np.empty((n, n)), np.empty(n), np.empty(n)
        V = chain_eval(
            np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(qd, dtype=float),
            self._kind, self.segment_lengths, self._sig, self._wts, self._gvec, self.joint_stiffness,
            M, c, g,
        )
        return V, M, c, g

    def _terms(self, q, qd):
        return self._eval(q, qd)[1:]

    def _raw_potential(self, q):
        q = np.asarray(q, dtype=float)
        return self._eval(q, np.zeros_like(q))[0]

    def rhs_batch(self, Y):
        Y = np.ascontiguousarray(Y, dtype=float)
        out = np.empty_like(Y)
        bad = chain_rhs_batch(
            Y, self._kind, self.segment_lengths, self._sig, self._wts, self._gvec, self.joint_stiffness, out
        )
        if bad >= 0:
            # Cholesky failed; the generic path warns and uses full-pivot LU
            return super().rhs_batch(Y)
        return out

    def rhs(self, t, y):
        return self.rhs_batch(y[None, :])[0]

    def _compiled_solve(self, Y0, t_out, rtol, atol):
        out, status, _ = chain_dop853(
            np.ascontiguousarray(Y0, dtype=float).ravel(), 2 * self.n_dofs, np.asarray(t_out, dtype=float),
            rtol, atol, self._kind, self.segment_lengths, self._sig, self._wts, self._gvec, self.joint_stiffness,
        )
        return out.reshape((len(t_out),) + Y0.shape), status

    def _points(self, q, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        P = np.empty(s.size, np.complex128)
        J = np.empty((s.size, self.n_dofs), np.complex128)
        chain_points(np.ascontiguousarray(q, dtype=float), self._kind, self.segment_lengths, s, P, J)
        return P, J

    def backbone(self, q, s):
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            return _to_xyz(self._points(q, s)[0])
        return np.stack([_to_xyz(self._points(qb, s)[0]) for qb in q])

    def backbone_jacobian(self, q, s) -> np.ndarray:
        """Positional Jacobian ``dp/dq`` at arc length ``s``, shape ``(3, n)``."""
        J = self._points(q, [s])[1][0]
        return np.stack([J.real, np.zeros(self.n_dofs), J.imag])

    def joint_positions(self, q) -> np.ndarray:
        """Segment end points (including the base), shape ``(n + 1, 3)``."""
        bounds = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])
        return self.backbone(q, bounds)


class PolynomialOscillator(MechanicalModel):
    """Constant-mass system ``V = 0.5 q^T K q + 0.25 sum eps_i q_i^4``.

    The backbone map places coordinate ``q[0]`` as a lateral deflection that
    grows linearly along a straight rod of length ``length``.
    """

    def __init__(self, M, K, quartic=None, length=1.0):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.n_dofs = self.M.shape[0]
        self.quartic = np.zeros(self.n_dofs) if quartic is None else np.broadcast_to(
            np.asarray(quartic, dtype=float), (self.n_dofs,)).copy()
        self.length = float(length)

    def spec(self):
        return {"kind": "polynomial_oscillator", "M": self.M.tolist(), "K": self.K.tolist(),
                "quartic": self.quartic.tolist(), "length": self.length}

    def _raw_potential(self, q):
        return 0.5 * q @ self.K @ q + 0.25 * np.sum(self.quartic * q**4)

    def _terms(self, q, qd):
        return self.M, np.zeros(self.n_dofs), self.K @ q + self.quartic * q**3

    def stiffness_matrix(self, q):
        q = self._check(q)
        return self.K + np.diag(3 * self.quartic * q**2)

    def rhs_batch(self, Y):
        n = self.n_dofs
        Q = Y[:, :n]
        F = Q @ self.K.T + self.quartic * Q**3
        return np.concatenate([Y[:, n:], -_solve_mass(self.M, F.T).T], axis=1)

    def backbone(self, q, s):
        q = np.asarray(q, dtype=float)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lateral = q[..., :1] * (s / self.length)
        out = np.zeros(lateral.shape + (3,))
        out[..., 0] = lateral
        out[..., 2] = -s
        return out


# ---------------------------------------------------------------------------
# parameter blocks and builders
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SoftArmParams:
    """Uniform cylindrical soft arm.  ``poisson`` is stored but unused by the
    planar pure-bending models."""

    radius: float
    density: float
    rest_length: float
    young_modulus: float
    poisson: float = 0.5
    n_bodies: int = 1
    gravity: float = DEFAULT_GRAVITY
    gravity_direction: tuple = (0.0, -1.0)
    quad_points: int = DEFAULT_QUAD_POINTS

    def __post_init__(self):
        for name in ("radius", "density", "rest_length", "young_modulus", "gravity"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ModelSpecError(f"{name} must be a positive finite number, got {v!r}")
        if not (isinstance(self.n_bodies, int) and self.n_bodies >= 1):
            raise ModelSpecError(f"n_bodies must be a positive integer, got {self.n_bodies!r}")
        if self.quad_points < 1:
            raise ModelSpecError("quad_points must be positive")

    @property
    def bending_stiffness(self) -> float:
        """Euler-Bernoulli ``EI = Y pi r^4 / 4`` (N m^2)."""
        return self.young_modulus * math.pi * self.radius**4 / 4

    @property
    def line_density(self) -> float:
        """``rho pi r^2`` (kg/m)."""
        return self.density * math.pi * self.radius**2

    def file_spec(self, kind: str) -> dict:
        return {
            "kind": kind,
            "radius_m": self.radius,
            "density_kg_m3": self.density,
            "rest_length_m": self.rest_length,
            "young_modulus_pa": self.young_modulus,
            "poisson": self.poisson,
            "n_bodies": self.n_bodies,
            "gravity_m_s2": self.gravity,
        }


@dataclass(frozen=True)
class RigidChainParams:
    """Chain of equal thin rods joined by linear torsional springs."""

    n_links: int
    link_length: float
    link_mass: float
    joint_stiffness: float
    gravity: float = DEFAULT_GRAVITY
    gravity_direction: tuple = (0.0, -1.0)
    quad_points: int = DEFAULT_QUAD_POINTS

    def __post_init__(self):
        if not (isinstance(self.n_links, int) and self.n_links >= 1):
            raise ModelSpecError(f"n_links must be a positive integer, got {self.n_links!r}")
        for name in ("link_length", "link_mass", "joint_stiffness"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ModelSpecError(f"{name} must be positive, got {v!r}")
        if not (math.isfinite(self.gravity) and self.gravity >= 0):
            raise ModelSpecError("gravity must be non-negative")

    @classmethod
    def from_soft_arm(cls, arm: SoftArmParams, n_links: int = 10) -> "RigidChainParams":
        """Lumped rigid counterpart: ``m = rho pi r^2 L/n``, ``k = Y pi r^4 n / (4 L)``."""
        ell = arm.rest_length / n_links
        return cls(
            n_links=n_links,
            link_length=ell,
            link_mass=arm.line_density * ell,
            joint_stiffness=arm.bending_stiffness * n_links / arm.rest_length,
            gravity=arm.gravity,
            gravity_direction=arm.gravity_direction,
            quad_points=arm.quad_points,
        )


def build_pcc(params: SoftArmParams, spec=None) -> PlanarChainModel:
    """PCC arm with one bending angle per segment of length ``L / n_bodies``."""
    n = params.n_bodies
    seg = params.rest_length / n
    return PlanarChainModel(
        "pcc", np.full(n, seg), params.line_density, params.bending_stiffness / seg,
        gravity=params.gravity, gravity_direction=params.gravity_direction,
        quad_points=params.quad_points, spec=spec if spec is not None else params.file_spec("pcc"),
    )


def build_rigid_chain(params: RigidChainParams, spec=None) -> PlanarChainModel:
    """Rigid chain with relative joint angles and thin-rod links."""
    n = params.n_links
    if spec is None:
        spec = {"kind": "rigid_chain", **asdict(params)}
        spec["gravity_direction"] = list(spec["gravity_direction"])
    return PlanarChainModel(
        "rigid_chain", np.full(n, params.link_length), params.link_mass / params.link_length,
        params.joint_stiffness, gravity=params.gravity, gravity_direction=params.gravity_direction,
        quad_points=params.quad_points, spec=spec,
    )


def backbone_position(model: MechanicalModel, q, s: float) -> np.ndarray:
    """Backbone point ``(x, y, z)`` at arc length ``s`` in ``[0, L]``."""
    if not 0.0 <= s <= model.length:
        raise ContractViolation(f"s={s} outside [0, {model.length}]")
    q = model._check(q)
    return model.backbone(q, [s])[0]


# ---------------------------------------------------------------------------
# model-spec files
# ---------------------------------------------------------------------------
MODEL_SPEC_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["pcc", "rigid_chain"]},
        "radius_m": {"type": "number", "exclusiveMinimum": 0},
        "density_kg_m3": {"type": "number", "exclusiveMinimum": 0},
        "rest_length_m": {"type": "number", "exclusiveMinimum": 0},
        "young_modulus_pa": {"type": "number", "exclusiveMinimum": 0},
        "poisson": {"type": "number"},
        "n_bodies": {"type": "integer", "minimum": 1},
        "gravity_m_s2": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["kind", "radius_m", "density_kg_m3", "rest_length_m", "young_modulus_pa", "n_bodies"],
    "additionalProperties": False,
}


def validate_model_spec(doc) -> dict:
    """Validate a parsed model-spec document; return it with defaults filled in."""
    try:
        jsonschema.validate(doc, MODEL_SPEC_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path)
        raise ModelSpecError(f"model spec invalid{' at ' + where if where else ''}: {exc.message}") from None
    out = dict(doc)
    out.setdefault("poisson", 0.5)
    out.setdefault("gravity_m_s2", DEFAULT_GRAVITY)
    out["n_bodies"] = int(out["n_bodies"])
    for key in ("radius_m", "density_kg_m3", "rest_length_m", "young_modulus_pa", "poisson", "gravity_m_s2"):
        out[key] = float(out[key])
    return out


def model_from_spec(doc: dict) -> PlanarChainModel:
    spec = validate_model_spec(doc)
    arm = SoftArmParams(
        radius=spec["radius_m"],
        density=spec["density_kg_m3"],
        rest_length=spec["rest_length_m"],
        young_modulus=spec["young_modulus_pa"],
        poisson=spec["poisson"],
        n_bodies=spec["n_bodies"],
        gravity=spec["gravity_m_s2"],
    )
    if spec["kind"] == "pcc":
        return build_pcc(arm, spec=spec)
    return build_rigid_chain(RigidChainParams.from_soft_arm(arm, spec["n_bodies"]), spec=spec)


def load_model_spec(file) -> PlanarChainModel:
    """Read a JSON model-spec (path or open file) and build the model.

    Raises
    ------
    ModelSpecError
        On malformed JSON, schema violations or an unknown ``kind``.
    """
    try:
        if hasattr(file, "read"):
            doc = json.load(file)
        else:
            with open(Path(file), encoding="utf-8") as fh:
                doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelSpecError(f"cannot parse model spec: {exc}") from None
    return model_from_spec(doc)


def reference_arm(n_bodies: int = 1, **overrides) -> SoftArmParams:
    """The reference soft arm: r = 2 cm, rho = 1062 kg/m^3, L = 0.4 m, Y = 0.66 MPa."""
    base = dict(radius=0.02, density=1062.0, rest_length=0.4, young_modulus=0.66e6, poisson=0.5)
    base.update(overrides)
    return SoftArmParams(n_bodies=n_bodies, **base)


def reference_models(max_pcc: int = 5, rigid_links: int = 10) -> dict[str, PlanarChainModel]:
    """PCC arms of order 1..max_pcc and the rigid chain, keyed by name."""
    models = {f"pcc{n}": build_pcc(reference_arm(n)) for n in range(1, max_pcc + 1)}
    rigid_arm = reference_arm(rigid_links)
    models[f"rigid{rigid_links}"] = build_rigid_chain(
        RigidChainParams.from_soft_arm(rigid_arm, rigid_links), spec=rigid_arm.file_spec("rigid_chain")
    )
    return models
