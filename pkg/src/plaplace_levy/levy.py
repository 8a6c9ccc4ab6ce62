"""Jump-noise model: truncated intensity measure, per-step jump sampling, and
compensated increments of the noise coefficient eta.

The intensity measure is either a finite list of point masses (z_j, lam_j) or
a density with small-jump truncation |z| > eps.  Densities are discretized
once by a composite midpoint rule (256 nodes by default) on
[-z_max, -eps] u [eps, z_max]; the same discretization drives both the
compensator integral and the jump-mark sampler, so the two stay consistent.

Sampling is counter-based (Philox keyed by the path seed, counter = step), so
paths are reproducible bitwise and independent across steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .grid import Field, ZERO_BOUNDARY

_KEY_SALT = 0x9E3779B97F4A7C15


class InfiniteMassError(ValueError):
    """Truncated measure has non-finite total mass."""


@dataclass(frozen=True)
class LevyModel:
    """Jump model: intensity measure, noise coefficient eta(u; z), and the
    contraction constant lambda_star of eta in u.

    eta must be vectorized in its first argument (nodal arrays) and satisfy
    eta(0; z) = 0 and |eta(u;z) - eta(v;z)| <= lambda_star |u-v| (1 ^ |z|)
    with 0 < lambda_star < 1; `validate` spot-checks both.
    """

    eta: callable
    lambda_star: float
    point_masses: tuple = ()  # ((z, lam), ...)
    density: callable = None
    eps: float = 1e-3
    z_max: float = 1.0
    n_quad: int = 256

    @cached_property
    def atoms(self) -> tuple:
        """(marks, masses) arrays of the discretized truncated measure."""
        if self.density is None:
            if not self.point_masses:
                return np.array([]), np.array([])
            z = np.array([zm[0] for zm in self.point_masses], dtype=float)
            lam = np.array([zm[1] for zm in self.point_masses], dtype=float)
            return z, lam
        return self._quad_atoms()

    def _quad_atoms(self):
        if self.eps <= 0:
            raise InfiniteMassError(
                "density measures need a positive truncation eps"
            )
        if self.z_max <= self.eps:
            raise ValueError("z_max must exceed eps")
        half = self.n_quad // 2
        width = (self.z_max - self.eps) / half
        pos = self.eps + (np.arange(half) + 0.5) * width
        z = np.concatenate([-pos[::-1], pos])
        lam = np.array([self.density(zz) for zz in z], dtype=float) * width
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise InfiniteMassError("density must be finite and nonnegative")
        return z, lam

    @property
    def total_mass(self) -> float:
        _, lam = self.atoms
        return float(lam.sum())

    @property
    def c_eta(self) -> float:
        """Quadrature of (1 ^ z^2) against the truncated measure."""
        z, lam = self.atoms
        if len(z) == 0:
            return 0.0
        return float(np.sum(np.minimum(1.0, z * z) * lam))

    def compensator(self, u: np.ndarray) -> np.ndarray:
        """integral eta(u; z) m(dz) over the truncated measure, per node."""
        z, lam = self.atoms
        out = np.zeros_like(u, dtype=float)
        for zz, ll in zip(z, lam):
            out += ll * self.eta(u, zz)
        return out

    def eta_sq_compensator(self, u: np.ndarray) -> np.ndarray:
        """integral eta(u; z)^2 m(dz), per node (isometry right-hand side)."""
        z, lam = self.atoms
        out = np.zeros_like(u, dtype=float)
        for zz, ll in zip(z, lam):
            out += ll * self.eta(u, zz) ** 2
        return out

    def validate(self, rng_seed: int = 0, n_checks: int = 200):
        """Spot-check the structural assumptions; raises ValueError naming
        the violated one (A3 for eta, A4 for the measure)."""
        if not (0.0 < self.lambda_star < 1.0):
            raise ValueError(
                f"A3 violated: lambda_star must lie in (0,1), got {self.lambda_star}"
            )
        rng = np.random.default_rng(rng_seed)
        z_grid = np.concatenate(
            [np.linspace(-2.0, 2.0, 17), rng.uniform(-5, 5, n_checks // 4)]
        )
        zero = np.zeros(1)
        for z in z_grid:
            if abs(float(np.asarray(self.eta(zero, z)).ravel()[0])) > 1e-14:
                raise ValueError(f"A3 violated: eta(0; z) != 0 at z={z}")
        u = rng.normal(0, 2, n_checks)
        v = rng.normal(0, 2, n_checks)
        for z in rng.uniform(-3, 3, 8):
            lhs = np.abs(self.eta(u, z) - self.eta(v, z))
            rhs = self.lambda_star * np.abs(u - v) * min(1.0, abs(z)) + 1e-12
            if np.any(lhs > rhs):
                raise ValueError(
                    "A3 violated: eta is not lambda_star-Lipschitz in u"
                )
        c = self.c_eta
        if not np.isfinite(c):
            raise ValueError("A4 violated: c_eta is not finite")
        return self


def eta_zero():
    return lambda u, z: np.zeros_like(u, dtype=float)


def eta_linear(coef: float):
    """eta(u; z) = coef * u * (1 ^ |z|); Lipschitz constant coef."""
    return lambda u, z: coef * np.asarray(u, dtype=float) * min(1.0, abs(z))


def eta_sine(coef: float):
    """eta(u; z) = coef * sin(u) * (1 ^ |z|); Lipschitz constant coef."""
    return lambda u, z: coef * np.sin(u) * min(1.0, abs(z))


@dataclass(frozen=True)
class PrmPath:
    """Sampled jump events of one noise path on a uniform step grid.

    events[k] is a pair (times, marks) of equal-length arrays with
    t in (t_k, t_{k+1}], times strictly increasing.  Regenerating with the
    same (model, T, dt, seed) reproduces the path bitwise.
    """

    dt: float
    n_steps: int
    seed: int
    eps: float
    events: tuple = field(repr=False)

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    def jump_count(self, k: int = None) -> int:
        if k is None:
            return sum(len(t) for t, _ in self.events)
        return len(self.events[k][0])


def _step_rng(seed: int, step: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, _KEY_SALT], dtype=np.uint64)
    counter = np.array([step, 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def sample_prm(model: LevyModel, T: float, dt: float, seed: int) -> PrmPath:
    """Sample the truncated jump measure on [0, T] with step dt.

    Per step the jump count is Poisson(total_mass * dt) and marks are drawn
    i.i.d. proportional to the (discretized) measure.  T/dt must be integral.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T/dt must be a positive integer, got T={T}, dt={dt}")
    z, lam = model.atoms
    total = float(lam.sum()) if len(lam) else 0.0
    if not np.isfinite(total):
        raise InfiniteMassError("truncated measure has infinite mass")
    probs = lam / total if total > 0 else None
    events = []
    for k in range(n_steps):
        if total == 0.0:
            events.append((np.array([]), np.array([])))
            continue
        rng = _step_rng(seed, k)
        count = int(rng.poisson(total * dt))
        if count == 0:
            events.append((np.array([]), np.array([])))
            continue
        # uniform in (t_k, t_{k+1}]: 1 - U with U in [0, 1)
        times = k * dt + dt * np.sort(1.0 - rng.random(count))
        if len(z) == 1:
            marks = np.full(count, z[0])
        else:
            marks = z[rng.choice(len(z), size=count, p=probs)]
        events.append((times, marks))
    return PrmPath(dt=dt, n_steps=n_steps, seed=seed, eps=model.eps, events=tuple(events))


def compensated_increment(model: LevyModel, u: Field, path: PrmPath, k: int) -> Field:
    """Nodal increment of the compensated jump integral over step k with the
    integrand frozen at u:

        sum_{jumps in step k} eta(u(x); z_i)  -  dt * integral eta(u(x); z) m(dz)

    Returns a zero-boundary Field (eta(0; z) = 0 keeps the boundary flat; the
    boundary rows are zeroed explicitly so lifted traces stay untouched).
    """
    if not 0 <= k < path.n_steps:
        raise IndexError(f"step {k} outside path range 0..{path.n_steps - 1}")
    vals = np.zeros(u.grid.n_nodes)
    idx = u.grid.interior_nodes
    u_int = u.flat[idx]
    acc = np.zeros_like(u_int)
    _, marks = path.events[k]
    for z in marks:
        acc += model.eta(u_int, z)
    acc -= path.dt * model.compensator(u_int)
    vals[idx] = acc
    return Field(u.grid, vals.reshape(u.grid.node_shape), ZERO_BOUNDARY)


def isometry_rhs(model: LevyModel, u: Field, dt: float) -> float:
    """Closed-form second moment of the compensated increment:
    dt * integral ||eta(u; z)||_{L^2}^2 m(dz)."""
    idx = u.grid.interior_nodes
    per_node = model.eta_sq_compensator(u.flat[idx])
    return float(dt * np.sum(per_node) * u.grid.cell_weight)
