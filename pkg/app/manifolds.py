'''Closed-form geometry of the manifold catalog, densities and test functions.

Points are ambient coordinates. Every geometric routine accepts a single
point of shape (m,) or a batch of shape (N, m) and answers in kind.
'''

import logging
import math

import numpy as np
from scipy import optimize, special

try:
    from app.exceptions import DomainException
    from app.kernels import c0, unit_sphere_area
    from app.rules import Rules
except ImportError:
    from exceptions import DomainException
    from kernels import c0, unit_sphere_area
    from rules import Rules

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def _rows(points):
    '''Returns (2-D array, True if the input was a single point).'''
    array = np.asarray(points, dtype=float)
    if array.ndim == 1:
        return array[np.newaxis, :], True
    return array, False


def _restore(values, single):
    return values[0] if single else values


def _kronecker(count, dims):
    '''Returns a (count, dims) low-discrepancy sequence in [0, 1)^dims.'''
    # generalised golden ratio: root of t^(dims+1) = t + 1
    phi = 2.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (dims + 1))
    alpha = (1.0 / phi) ** np.arange(1, dims + 1)
    index = np.arange(count)[:, np.newaxis] + 0.5
    return np.mod(index * alpha, 1.0)


class Manifold:
    '''Base class for a catalog manifold embedded in R^m.'''

    def __init__(self, name, d, m, radii):
        '''
        Args:
            name (str): catalog name (e.g. "s2")
            d (int): intrinsic dimension
            m (int): ambient dimension
            radii (tuple): per-factor radii
        '''
        if not d < m:
            raise DomainException(f"Intrinsic dimension {d} must be below ambient dimension {m}.")
        if any(r <= 0 for r in radii):
            raise DomainException(f"Radii must be positive, got {radii}.")
        self.name = name
        self.d = d
        self.m = m
        self.radii = tuple(float(r) for r in radii)
        self.rules = Rules()

    def __str__(self):
        return self.get_id()

    def __repr__(self):
        return f"{type(self).__name__}(name='{self.name}', d={self.d}, m={self.m}, radii={self.radii})"

    def get_id(self):
        '''Returns an identifier such as "s2(1.0)".'''
        return f"{self.name}({','.join(repr(r) for r in self.radii)})"

    def describe(self):
        '''Returns the manifold descriptor echoed into reports.'''
        return {
            "name": self.name,
            "d": self.d,
            "m": self.m,
            "radii": list(self.radii),
            "volume": self.get_volume(),
            "diameter_chord": self.get_diameter_chord(),
            "c1": self.get_c1()
        }

    def get_volume(self):
        raise NotImplementedError("Subclasses must implement get_volume()")

    def get_diameter_chord(self):
        raise NotImplementedError("Subclasses must implement get_diameter_chord()")

    def get_c1(self):
        '''Returns the radius of the normal-coordinate balls used everywhere.'''
        raise NotImplementedError("Subclasses must implement get_c1()")

    def constraint_residual(self, points):
        '''Returns the embedding-constraint violation of each point.'''
        raise NotImplementedError("Subclasses must implement constraint_residual()")

    def check_on_manifold(self, points, tolerance=None):
        '''Raises DomainException if any point is farther than tolerance from M.'''
        if tolerance is None:
            tolerance = self.rules.get_tolerances()["on_manifold"]
        residual = np.atleast_1d(self.constraint_residual(points))
        if np.any(~np.isfinite(residual)) or residual.max(initial=0.0) > tolerance:
            raise DomainException(
                f"Point off {self.get_id()}: embedding residual {residual.max():.3e} exceeds {tolerance:.1e}.")

    def normals(self, points):
        '''Returns unit normals, shape (N, m - d, m) (or (m - d, m) for one point).'''
        raise NotImplementedError("Subclasses must implement normals()")

    def project_tangent(self, points, vectors):
        '''Projects ambient vectors onto the tangent spaces at points.'''
        rows, single = _rows(points)
        vecs = np.atleast_2d(np.asarray(vectors, dtype=float))
        normals = self.normals(rows)
        coefficients = np.einsum('nkm,nm->nk', normals, vecs)
        projected = vecs - np.einsum('nk,nkm->nm', coefficients, normals)
        return _restore(projected, single)

    def tangent_frame(self, x):
        '''Returns d orthonormal ambient vectors spanning T_xM, shape (d, m).'''
        raise NotImplementedError("Subclasses must implement tangent_frame()")

    def exp_map(self, x, v):
        '''Returns E_x(v) for tangent coefficients v in the frame at x.'''
        raise NotImplementedError("Subclasses must implement exp_map()")

    def geodesic_distance(self, x, y):
        raise NotImplementedError("Subclasses must implement geodesic_distance()")

    def metric_det_normal(self, r):
        '''Returns sqrt(det g) in normal coordinates at radius r (isotropic for the catalog).'''
        raise NotImplementedError("Subclasses must implement metric_det_normal()")

    def mean_curvature(self, points):
        '''Returns the mean-curvature vector (trace of the second fundamental form).'''
        raise NotImplementedError("Subclasses must implement mean_curvature()")

    def exp_second_derivative(self, x, v):
        '''Returns the second derivative of t -> E_x(t v) at t = 0.'''
        raise NotImplementedError("Subclasses must implement exp_second_derivative()")

    def radius_for_chord(self, x, direction, chord):
        '''Returns the geodesic radius along the unit direction at which the chord to x reaches chord.'''
        raise NotImplementedError("Subclasses must implement radius_for_chord()")

    def uniform_sample(self, rng, n):
        '''Draws n points from the normalised volume measure.'''
        raise NotImplementedError("Subclasses must implement uniform_sample()")

    def eval_grid(self, count):
        '''Returns count deterministic quasi-uniform points.'''
        raise NotImplementedError("Subclasses must implement eval_grid()")

    def quadrature(self, nodes):
        '''Returns (points, weights) of a product rule for the volume measure.'''
        raise NotImplementedError("Subclasses must implement quadrature()")

    def _check_tangent_norm(self, v):
        norms = np.linalg.norm(np.atleast_2d(v), axis=1)
        c1 = self.get_c1()
        if np.any(norms >= c1):
            raise DomainException(f"Tangent vector norm {norms.max():.6g} must be below c1 = {c1:.6g}.")
        return norms

    def _check_radius(self, r):
        radius = np.asarray(r, dtype=float)
        if np.any(radius < 0) or np.any(radius >= self.get_c1()):
            raise DomainException(f"Radius must lie in [0, c1 = {self.get_c1():.6g}), got {r}.")
        return radius


class Sphere(Manifold):
    '''The round sphere S^d of radius R in R^(d+1).'''

    NAMES = {1: "circle", 2: "s2", 3: "s3"}

    def __init__(self, d=2, radius=1.0):
        if d not in self.NAMES:
            raise DomainException(f"Sphere dimension must be 1, 2 or 3, got {d}.")
        super().__init__(self.NAMES[d], d, d + 1, (radius,))
        self.radius = float(radius)

    def get_volume(self):
        return unit_sphere_area(self.m) * self.radius ** self.d

    def get_diameter_chord(self):
        return 2.0 * self.radius

    def get_c1(self):
        return self.rules.get_c1_factor() * math.pi * self.radius

    def constraint_residual(self, points):
        rows, single = _rows(points)
        return _restore(np.abs(np.linalg.norm(rows, axis=1) - self.radius), single)

    def normals(self, points):
        rows, single = _rows(points)
        unit = rows / np.linalg.norm(rows, axis=1)[:, np.newaxis]
        return _restore(unit[:, np.newaxis, :], single)

    def tangent_frame(self, x):
        x = np.asarray(x, dtype=float)
        normal = x / np.linalg.norm(x)
        threshold = self.rules.get_tolerances()["frame_threshold"]
        basis = [normal]
        frame = []
        for axis in np.eye(self.m):
            if abs(axis @ normal) > threshold:
                continue
            w = axis.copy()
            # two Gram-Schmidt passes keep the Gram matrix at machine precision
            for _ in range(2):
                for b in basis:
                    w = w - (w @ b) * b
            norm = np.linalg.norm(w)
            if norm < 1e-8:
                continue
            w = w / norm
            basis.append(w)
            frame.append(w)
            if len(frame) == self.d:
                break
        return np.array(frame)

    def exp_map(self, x, v):
        x = np.asarray(x, dtype=float)
        vs, single = _rows(v)
        norms = self._check_tangent_norm(vs)
        tangent = vs @ self.tangent_frame(x)
        angle = norms / self.radius
        # R sin(t/R)/t written with np.sinc so that t = 0 needs no special case
        points = (np.cos(angle)[:, np.newaxis] * x
                  + np.sinc(angle / math.pi)[:, np.newaxis] * tangent)
        return _restore(points, single)

    def geodesic_distance(self, x, y):
        self.check_on_manifold(x)
        self.check_on_manifold(y)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        # half-angle form of R arccos(<x,y>/R^2), accurate near 0 and near antipodes
        difference = np.linalg.norm(x - y, axis=-1)
        total = np.linalg.norm(x + y, axis=-1)
        return 2.0 * self.radius * np.arctan2(difference, total)

    def metric_det_normal(self, r):
        radius = self._check_radius(r)
        values = np.sinc(radius / (math.pi * self.radius)) ** (self.d - 1)
        return float(values) if np.ndim(r) == 0 else values

    def mean_curvature(self, points):
        rows, single = _rows(points)
        return _restore(-self.d * rows / self.radius ** 2, single)

    def exp_second_derivative(self, x, v):
        x = np.asarray(x, dtype=float)
        vs, single = _rows(v)
        squared = np.sum(vs * vs, axis=1)
        return _restore(-squared[:, np.newaxis] * x / self.radius ** 2, single)

    def radius_for_chord(self, x, direction, chord):
        ratio = min(chord / (2.0 * self.radius), 1.0)
        return 2.0 * self.radius * math.asin(ratio)

    def uniform_sample(self, rng, n):
        gaussian = rng.standard_normal((n, self.m))
        return self.radius * gaussian / np.linalg.norm(gaussian, axis=1)[:, np.newaxis]

    def eval_grid(self, count):
        if count < 1:
            raise DomainException(f"Grid size must be at least 1, got {count}.")
        R = self.radius
        if self.d == 1:
            angle = 2.0 * math.pi * np.arange(count) / count
            return R * np.column_stack([np.cos(angle), np.sin(angle)])
        if self.d == 2:
            # Fibonacci lattice
            index = np.arange(count)
            z = 1.0 - (2.0 * index + 1.0) / count
            ring = np.sqrt(1.0 - z * z)
            phi = index * GOLDEN_ANGLE
            return R * np.column_stack([ring * np.cos(phi), ring * np.sin(phi), z])
        sequence = _kronecker(count, 2)
        u = (np.arange(count) + 0.5) / count
        return self._from_hopf(u, 2.0 * math.pi * sequence[:, 0], 2.0 * math.pi * sequence[:, 1])

    def _from_hopf(self, u, a, b):
        '''Maps Hopf coordinates (u, a, b), uniform for the volume of S^3, to points.'''
        outer = np.sqrt(1.0 - u)
        inner = np.sqrt(u)
        return self.radius * np.column_stack(
            [outer * np.cos(a), outer * np.sin(a), inner * np.cos(b), inner * np.sin(b)])

    def quadrature(self, nodes=32):
        R = self.radius
        if self.d == 1:
            angle = 2.0 * math.pi * np.arange(nodes) / nodes
            points = R * np.column_stack([np.cos(angle), np.sin(angle)])
            return points, np.full(nodes, 2.0 * math.pi * R / nodes)
        z, wz = special.roots_legendre(nodes)
        azimuth = 2.0 * math.pi * np.arange(2 * nodes) / (2 * nodes)
        step = 2.0 * math.pi / (2 * nodes)
        if self.d == 2:
            zz, aa = np.meshgrid(z, azimuth, indexing='ij')
            ring = np.sqrt(1.0 - zz * zz)
            points = R * np.column_stack([(ring * np.cos(aa)).ravel(), (ring * np.sin(aa)).ravel(), zz.ravel()])
            weights = (R * R * np.outer(wz, np.full(azimuth.size, step))).ravel()
            return points, weights
        u = 0.5 * (z + 1.0)
        uu, aa, bb = np.meshgrid(u, azimuth, azimuth, indexing='ij')
        points = self._from_hopf(uu.ravel(), aa.ravel(), bb.ravel())
        weights = (R ** 3 / 2.0) * np.einsum('i,j,k->ijk', 0.5 * wz, np.full(azimuth.size, step),
                                             np.full(azimuth.size, step)).ravel()
        return points, weights


class FlatTorus(Manifold):
    '''Product of circles of radii r_1, ..., r_k embedded in R^(2k).'''

    def __init__(self, radii=(1.0, 1.0)):
        radii = tuple(radii)
        super().__init__("torus", len(radii), 2 * len(radii), radii)

    def angles(self, points):
        '''Returns the factor angles of each point.'''
        rows, single = _rows(points)
        theta = np.arctan2(rows[:, 1::2], rows[:, 0::2])
        return _restore(theta, single)

    def from_angles(self, theta):
        '''Returns ambient points from factor angles.'''
        rows, single = _rows(theta)
        radii = np.array(self.radii)
        points = np.empty((rows.shape[0], self.m))
        points[:, 0::2] = radii * np.cos(rows)
        points[:, 1::2] = radii * np.sin(rows)
        return _restore(points, single)

    def get_volume(self):
        return float(np.prod([2.0 * math.pi * r for r in self.radii]))

    def get_diameter_chord(self):
        return 2.0 * math.sqrt(sum(r * r for r in self.radii))

    def get_c1(self):
        return self.rules.get_c1_factor() * math.pi * min(self.radii)

    def constraint_residual(self, points):
        rows, single = _rows(points)
        factor_norms = np.hypot(rows[:, 0::2], rows[:, 1::2])
        return _restore(np.abs(factor_norms - np.array(self.radii)).max(axis=1), single)

    def normals(self, points):
        rows, single = _rows(points)
        theta = self.angles(rows)
        normals = np.zeros((rows.shape[0], self.d, self.m))
        for k in range(self.d):
            normals[:, k, 2 * k] = np.cos(theta[:, k])
            normals[:, k, 2 * k + 1] = np.sin(theta[:, k])
        return _restore(normals, single)

    def tangent_frame(self, x):
        theta = self.angles(x)
        frame = np.zeros((self.d, self.m))
        for k in range(self.d):
            frame[k, 2 * k] = -math.sin(theta[k])
            frame[k, 2 * k + 1] = math.cos(theta[k])
        return frame

    def exp_map(self, x, v):
        vs, single = _rows(v)
        self._check_tangent_norm(vs)
        theta = self.angles(x) + vs / np.array(self.radii)
        return _restore(self.from_angles(theta), single)

    def geodesic_distance(self, x, y):
        self.check_on_manifold(x)
        self.check_on_manifold(y)
        delta = self.angles(y) - self.angles(x)
        # wrapped-angle minimum across the cut locus
        wrapped = np.remainder(delta + math.pi, 2.0 * math.pi) - math.pi
        return np.sqrt(np.sum((np.array(self.radii) * wrapped) ** 2, axis=-1))

    def metric_det_normal(self, r):
        radius = self._check_radius(r)
        return 1.0 if np.ndim(r) == 0 else np.ones_like(radius)

    def mean_curvature(self, points):
        rows, single = _rows(points)
        normals = self.normals(rows)
        curvature = -np.einsum('k,nkm->nm', 1.0 / np.array(self.radii), normals)
        return _restore(curvature, single)

    def exp_second_derivative(self, x, v):
        vs, single = _rows(v)
        normals = self.normals(x)
        radii = np.array(self.radii)
        return _restore(-np.einsum('nk,km->nm', vs * vs / radii, normals), single)

    def _ray_chord(self, direction, rho):
        radii = np.array(self.radii)
        return math.sqrt(float(np.sum((2.0 * radii * np.sin(rho * direction / (2.0 * radii))) ** 2)))

    def radius_for_chord(self, x, direction, chord):
        direction = np.asarray(direction, dtype=float)
        radii = np.array(self.radii)
        active = np.abs(direction) > 0
        # along the ray the chord increases until one factor reaches its antipode
        upper = float(np.min(math.pi * radii[active] / np.abs(direction[active])))
        if self._ray_chord(direction, upper) <= chord:
            return upper
        if chord <= 0:
            return 0.0
        return optimize.brentq(lambda rho: self._ray_chord(direction, rho) - chord, 0.0, upper,
                               xtol=1e-14, rtol=1e-14)

    def uniform_sample(self, rng, n):
        theta = rng.uniform(-math.pi, math.pi, size=(n, self.d))
        return self.from_angles(theta)

    def eval_grid(self, count):
        if count < 1:
            raise DomainException(f"Grid size must be at least 1, got {count}.")
        side = int(round(count ** (1.0 / self.d)))
        if side ** self.d == count:
            axis = 2.0 * math.pi * np.arange(side) / side
            mesh = np.meshgrid(*([axis] * self.d), indexing='ij')
            theta = np.column_stack([grid.ravel() for grid in mesh])
        else:
            theta = 2.0 * math.pi * _kronecker(count, self.d)
        return self.from_angles(theta)

    def quadrature(self, nodes=32):
        axis = 2.0 * math.pi * np.arange(nodes) / nodes
        mesh = np.meshgrid(*([axis] * self.d), indexing='ij')
        theta = np.column_stack([grid.ravel() for grid in mesh])
        weights = np.full(theta.shape[0], self.get_volume() / theta.shape[0])
        return self.from_angles(theta), weights


def get_manifold(name, radii=None):
    '''Returns a catalog manifold.

    Args:
        name: one of circle, s2, s3, torus
        radii: list of radii (one for spheres, one per factor for the torus)

    Returns:
        Manifold: the manifold
    '''
    if isinstance(name, Manifold):
        return name
    spheres = {"circle": 1, "s1": 1, "s2": 2, "s3": 3}
    if name in spheres:
        radius = 1.0 if not radii else float(radii[0])
        if radii and len(radii) != 1:
            raise DomainException(f"Sphere '{name}' takes one radius, got {radii}.")
        return Sphere(spheres[name], radius)
    if name == "torus":
        return FlatTorus(radii or (1.0, 1.0))
    raise DomainException(f"Unknown manifold '{name}'. Available: {', '.join(Rules().get_manifold_names())}")


# Densities

class Density:
    '''Base class for a C^2 density p with respect to the volume measure.'''

    def __init__(self, manifold, name, params=None):
        self.manifold = manifold
        self.name = name
        self.params = dict(params or {})
        self.normalizer = 1.0 / manifold.get_volume()

    def __repr__(self):
        return f"{type(self).__name__}(name='{self.name}', params={self.params})"

    def get_id(self):
        '''Returns an identifier such as "tilted(beta=0.5)".'''
        if not self.params:
            return self.name
        return f"{self.name}({';'.join(f'{k}={v!r}' for k, v in sorted(self.params.items()))})"

    def shape(self, points):
        '''Returns the unnormalised density.'''
        raise NotImplementedError("Subclasses must implement shape()")

    def shape_gradient(self, points):
        '''Returns the ambient gradient of the unnormalised density.'''
        raise NotImplementedError("Subclasses must implement shape_gradient()")

    def value(self, points):
        return self.normalizer * self.shape(points)

    def grad_ambient(self, points):
        return self.normalizer * self.shape_gradient(points)

    def grad_manifold(self, points):
        return self.manifold.project_tangent(points, self.grad_ambient(points))

    def get_p_min(self):
        raise NotImplementedError("Subclasses must implement get_p_min()")

    def get_p_max(self):
        raise NotImplementedError("Subclasses must implement get_p_max()")

    def get_expected_acceptance(self):
        '''Returns the acceptance probability of rejection sampling from the uniform law.'''
        return 1.0 / (self.get_p_max() * self.manifold.get_volume())

    def total_mass(self, nodes=32):
        '''Returns the integral of p over M by product quadrature.'''
        points, weights = self.manifold.quadrature(nodes)
        return float(np.sum(weights * self.value(points)))


class UniformDensity(Density):
    def __init__(self, manifold):
        super().__init__(manifold, "uniform")

    def shape(self, points):
        rows, single = _rows(points)
        return _restore(np.ones(rows.shape[0]), single)

    def shape_gradient(self, points):
        rows, single = _rows(points)
        return _restore(np.zeros_like(rows), single)

    def get_p_min(self):
        return self.normalizer

    def get_p_max(self):
        return self.normalizer


class TiltedDensity(Density):
    '''p proportional to 1 + beta x^1 / r_1, where r_1 is the radius of the first factor.

    The first coordinate integrates to zero on every catalog manifold, so the
    normaliser is 1 / vol(M).
    '''

    def __init__(self, manifold, beta=0.5):
        if not 0.0 <= beta < 1.0:
            raise DomainException(f"Tilt beta must lie in [0, 1), got {beta}.")
        super().__init__(manifold, "tilted", {"beta": float(beta)})
        self.beta = float(beta)
        self.scale = manifold.radii[0]

    def shape(self, points):
        rows, single = _rows(points)
        return _restore(1.0 + self.beta * rows[:, 0] / self.scale, single)

    def shape_gradient(self, points):
        rows, single = _rows(points)
        gradient = np.zeros_like(rows)
        gradient[:, 0] = self.beta / self.scale
        return _restore(gradient, single)

    def get_p_min(self):
        return self.normalizer * (1.0 - self.beta)

    def get_p_max(self):
        return self.normalizer * (1.0 + self.beta)


def get_density(manifold, spec="uniform"):
    '''Returns a density from a name or a {"name": ..., "beta": ...} dict.'''
    if isinstance(spec, Density):
        return spec
    params = {}
    if isinstance(spec, dict):
        params = {k: v for k, v in spec.items() if k != "name"}
        spec = spec.get("name", "uniform")
    if spec == "uniform":
        return UniformDensity(manifold)
    if spec == "tilted":
        return TiltedDensity(manifold, params.get("beta", 0.5))
    raise DomainException(f"Unknown density '{spec}'. Available: {', '.join(Rules().get_density_names())}")


# Test functions

class TestFunction:
    '''Base class for an ambient C^3 function with closed-form derivatives.

    The Laplace-Beltrami operator of the restriction to M is
    tr_{T_xM}(Hess f) + <grad f, H(x)> with H the mean-curvature vector.
    '''

    __test__ = False

    def __init__(self, manifold, name, params=None):
        self.manifold = manifold
        self.name = name
        self.params = dict(params or {})

    def __repr__(self):
        return f"{type(self).__name__}(name='{self.name}', params={self.params})"

    def get_id(self):
        if not self.params:
            return self.name
        return f"{self.name}({';'.join(f'{k}={v!r}' for k, v in sorted(self.params.items()))})"

    def value(self, points):
        raise NotImplementedError("Subclasses must implement value()")

    def grad_ambient(self, points):
        raise NotImplementedError("Subclasses must implement grad_ambient()")

    def hess_ambient(self, points):
        raise NotImplementedError("Subclasses must implement hess_ambient()")

    def third_deriv_bound(self):
        '''Returns a bound on the sup norm of the third ambient derivative.'''
        return 0.0

    def __call__(self, points):
        return self.value(points)

    def grad_manifold(self, points):
        return self.manifold.project_tangent(points, self.grad_ambient(points))

    def laplace_beltrami(self, points):
        rows, single = _rows(points)
        hessian = self.hess_ambient(rows)
        normals = self.manifold.normals(rows)
        normal_part = np.einsum('nkm,nml,nkl->n', normals, hessian, normals)
        trace = np.trace(hessian, axis1=1, axis2=2)
        curvature = np.einsum('nm,nm->n', self.grad_ambient(rows), self.manifold.mean_curvature(rows))
        return _restore(trace - normal_part + curvature, single)


class ConstantFunction(TestFunction):
    def __init__(self, manifold, constant=1.0):
        super().__init__(manifold, "constant", {"value": float(constant)})
        self.constant = float(constant)

    def value(self, points):
        rows, single = _rows(points)
        return _restore(np.full(rows.shape[0], self.constant), single)

    def grad_ambient(self, points):
        rows, single = _rows(points)
        return _restore(np.zeros_like(rows), single)

    def hess_ambient(self, points):
        rows, single = _rows(points)
        return _restore(np.zeros((rows.shape[0], rows.shape[1], rows.shape[1])), single)


class CoordinateFunction(TestFunction):
    '''f(x) = scale * x^index (index counted from 1).'''

    def __init__(self, manifold, index=1, scale=1.0):
        if not 1 <= index <= manifold.m:
            raise DomainException(f"Coordinate index must lie in 1..{manifold.m}, got {index}.")
        super().__init__(manifold, "coordinate", {"index": int(index), "scale": float(scale)})
        self.axis = int(index) - 1
        self.scale = float(scale)

    def value(self, points):
        rows, single = _rows(points)
        return _restore(self.scale * rows[:, self.axis], single)

    def grad_ambient(self, points):
        rows, single = _rows(points)
        gradient = np.zeros_like(rows)
        gradient[:, self.axis] = self.scale
        return _restore(gradient, single)

    def hess_ambient(self, points):
        rows, single = _rows(points)
        return _restore(np.zeros((rows.shape[0], rows.shape[1], rows.shape[1])), single)


class ProductFunction(TestFunction):
    '''f(x) = scale * x^i * x^j.'''

    def __init__(self, manifold, first=1, second=2, scale=1.0):
        for index in (first, second):
            if not 1 <= index <= manifold.m:
                raise DomainException(f"Coordinate index must lie in 1..{manifold.m}, got {index}.")
        super().__init__(manifold, "product", {"first": int(first), "second": int(second), "scale": float(scale)})
        self.i = int(first) - 1
        self.j = int(second) - 1
        self.scale = float(scale)

    def value(self, points):
        rows, single = _rows(points)
        return _restore(self.scale * rows[:, self.i] * rows[:, self.j], single)

    def grad_ambient(self, points):
        rows, single = _rows(points)
        gradient = np.zeros_like(rows)
        gradient[:, self.i] += self.scale * rows[:, self.j]
        gradient[:, self.j] += self.scale * rows[:, self.i]
        return _restore(gradient, single)

    def hess_ambient(self, points):
        rows, single = _rows(points)
        hessian = np.zeros((rows.shape[0], rows.shape[1], rows.shape[1]))
        hessian[:, self.i, self.j] += self.scale
        hessian[:, self.j, self.i] += self.scale
        return _restore(hessian, single)


class ZonalHarmonic(TestFunction):
    '''Degree-l zonal harmonic in the last coordinate of a sphere.

    Chebyshev T_l on the circle, Gegenbauer C_l^alpha with alpha = (d-1)/2 on
    S^d for d >= 2; an eigenfunction with eigenvalue -l(l+d-1)/R^2.
    '''

    def __init__(self, manifold, degree=1, scale=1.0):
        if not isinstance(manifold, Sphere):
            raise DomainException("Zonal harmonics are defined on spheres only.")
        if degree < 0 or int(degree) != degree:
            raise DomainException(f"Harmonic degree must be a nonnegative integer, got {degree}.")
        super().__init__(manifold, "zonal", {"degree": int(degree), "scale": float(scale)})
        self.degree = int(degree)
        self.scale = float(scale)
        self.alpha = (manifold.d - 1) / 2.0

    def derivative(self, order, t):
        '''Returns the order-th derivative of the profile polynomial at t.'''
        n = self.degree - order
        if n < 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        if self.alpha == 0:
            # T_l = C_l^0 limit: T_l^(k) = l 2^(k-1) (k-1)! C_{l-k}^k for k >= 1
            if order == 0:
                return special.eval_chebyt(self.degree, t)
            factor = self.degree * 2.0 ** (order - 1) * math.factorial(order - 1)
            return factor * special.eval_gegenbauer(n, float(order), t)
        factor = 2.0 ** order * special.poch(self.alpha, order)
        return factor * special.eval_gegenbauer(n, self.alpha + order, t)

    def eigenvalue(self):
        '''Returns -l(l+d-1)/R^2.'''
        d = self.manifold.d
        return -self.degree * (self.degree + d - 1) / self.manifold.radius ** 2

    def value(self, points):
        rows, single = _rows(points)
        t = rows[:, -1] / self.manifold.radius
        return _restore(self.scale * self.derivative(0, t), single)

    def grad_ambient(self, points):
        rows, single = _rows(points)
        t = rows[:, -1] / self.manifold.radius
        gradient = np.zeros_like(rows)
        gradient[:, -1] = self.scale * self.derivative(1, t) / self.manifold.radius
        return _restore(gradient, single)

    def hess_ambient(self, points):
        rows, single = _rows(points)
        t = rows[:, -1] / self.manifold.radius
        hessian = np.zeros((rows.shape[0], rows.shape[1], rows.shape[1]))
        hessian[:, -1, -1] = self.scale * self.derivative(2, t) / self.manifold.radius ** 2
        return _restore(hessian, single)

    def third_deriv_bound(self):
        t = np.linspace(-1.0, 1.0, 2001)
        return float(abs(self.scale) * np.abs(self.derivative(3, t)).max() / self.manifold.radius ** 3)


def get_test_function(manifold, spec="coordinate"):
    '''Returns a test function from a family name or a dict of parameters.

    Args:
        manifold: the manifold the function lives on
        spec: family name or dict such as {"name": "zonal", "degree": 2}

    Returns:
        TestFunction: the function
    '''
    if isinstance(spec, TestFunction):
        return spec
    params = {}
    if isinstance(spec, dict):
        params = {k: v for k, v in spec.items() if k != "name"}
        spec = spec.get("name")
    scale = params.get("scale", 1.0)
    if spec == "constant":
        return ConstantFunction(manifold, params.get("value", 1.0))
    if spec == "coordinate":
        return CoordinateFunction(manifold, params.get("index", 1), scale)
    if spec == "product":
        return ProductFunction(manifold, params.get("first", 1), params.get("second", 2), scale)
    if spec == "zonal":
        return ZonalHarmonic(manifold, params.get("degree", 1), scale)
    raise DomainException(f"Unknown test function '{spec}'. Available: {', '.join(Rules().get_function_names())}")


# Module-level operations

def chord_distance(x, y):
    '''Returns the Euclidean distance of R^m.'''
    return np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)


def geodesic_distance(manifold, x, y):
    return manifold.geodesic_distance(x, y)


def exp_map(manifold, x, v):
    return manifold.exp_map(x, v)


def tangent_frame(manifold, x):
    return manifold.tangent_frame(x)


def metric_det_normal(manifold, r):
    return manifold.metric_det_normal(r)


def manifold_grad(manifold, g, x, step=1e-7):
    '''Projects the ambient gradient of g onto T_xM.

    Args:
        manifold: the manifold
        g: object with grad_ambient(), or a plain callable R^m -> R
        x: point(s) on M
        step: finite-difference step for plain callables

    Returns:
        ndarray: tangent vector(s)
    '''
    if hasattr(g, "grad_ambient"):
        gradient = g.grad_ambient(x)
    else:
        rows, single = _rows(x)
        gradient = np.array([optimize.approx_fprime(row, lambda y: float(g(y)), step) for row in rows])
        gradient = _restore(gradient, single)
    return manifold.project_tangent(x, gradient)


def manifold_laplacian(manifold, f, x):
    '''Returns the closed-form Laplace-Beltrami operator of f at x.'''
    return f.laplace_beltrami(x)


def limit_operator(manifold, p, f, kernel, x):
    '''Returns c0 (<grad_M p, grad_M f> + p Delta_M f / 2) at x.'''
    rows, single = _rows(x)
    drift = np.einsum('nm,nm->n', p.grad_manifold(rows), f.grad_manifold(rows))
    diffusion = 0.5 * p.value(rows) * f.laplace_beltrami(rows)
    return _restore(c0(kernel, manifold.d) * (drift + diffusion), single)
