'''Bounded-variation kernel profiles, their total variation and moment integrals.'''

import logging
import math

import numpy as np
from scipy import integrate, special

try:
    from app.exceptions import DomainException, NumericalFailureException
    from app.rules import Rules
except ImportError:
    from exceptions import DomainException, NumericalFailureException
    from rules import Rules

logger = logging.getLogger(__name__)


class Kernel:
    '''Base class for a kernel profile K: [0, inf) -> [0, inf) of bounded variation.

    The total-variation measure dH is split into a finite list of jumps and an
    absolutely continuous density. At a jump location K takes its left-limit
    value, so a jump at a0 contributes to H(a) only for a > a0.
    '''

    def __init__(self, name, support_radius=None):
        '''
        Args:
            name (str): identifier used by the CLI and configs
            support_radius (float): radius beyond which K vanishes, None if unbounded
        '''
        self.name = name
        self.support_radius = support_radius

    def __str__(self):
        return self.name

    def __repr__(self):
        return f"{type(self).__name__}(name='{self.name}', support_radius={self.support_radius})"

    def profile(self, a):
        '''Returns K(a) for an array of nonnegative radii.'''
        raise NotImplementedError("Subclasses must implement profile()")

    def get_jumps(self):
        '''Returns the jumps of K as (location, K(location+) - K(location)) pairs.'''
        return []

    def variation_density(self, a):
        '''Returns the density of the absolutely continuous part of dH.'''
        return np.zeros_like(np.asarray(a, dtype=float))

    def continuous_variation(self, a):
        '''Returns the absolutely continuous part of H on [0, a].'''
        if a <= 0:
            return 0.0
        value, _ = integrate.quad(lambda t: float(self.variation_density(t)), 0.0, a,
                                  points=self._points_below(a), limit=200)
        return value

    def get_panel_points(self):
        '''Returns the radii where K jumps or loses smoothness, sorted.'''
        points = {location for location, _ in self.get_jumps()}
        if self.support_radius is not None:
            points.add(self.support_radius)
        return sorted(points)

    def get_scale(self):
        '''Returns the support radius, or 1 for kernels of unbounded support.'''
        return self.support_radius if self.support_radius is not None else 1.0

    def get_sup(self):
        '''Returns the sup norm of K.'''
        raise NotImplementedError("Subclasses must implement get_sup()")

    def closed_form_moment(self, q):
        '''Returns the closed form of int_0^inf K(a) a^q da, or None.'''
        return None

    def closed_form_tail_moment(self, q, b):
        '''Returns the closed form of int_b^inf K(a) a^q da, or None.'''
        return None

    def closed_form_bv_moment(self, r):
        '''Returns the closed form of int_0^inf a^r dH(a), or None.'''
        return None

    def _points_below(self, upper):
        points = [p for p in self.get_panel_points() if 0.0 < p < upper]
        return points or None


class PiecewiseConstantKernel(Kernel):
    '''Kernel defined by (breakpoint, value) pairs.

    K(a) = v_i on (b_{i-1}, b_i] with b_0 = 0, K(0) = v_1 and K = 0 beyond the
    last breakpoint. The jumps of H are read off the breakpoints.
    '''

    def __init__(self, pieces, name="piecewise"):
        breaks = []
        values = []
        for piece in pieces:
            if len(piece) != 2:
                raise DomainException(f"Kernel piece {piece} must be a (breakpoint, value) pair.")
            breaks.append(float(piece[0]))
            values.append(float(piece[1]))
        if not breaks:
            raise DomainException("A piecewise kernel needs at least one (breakpoint, value) pair.")
        if breaks[0] <= 0 or any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise DomainException("Kernel breakpoints must be positive and strictly increasing.")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise DomainException("Kernel values must be finite and nonnegative.")
        super().__init__(name, support_radius=breaks[-1])
        self.breaks = np.array(breaks)
        self.values = np.array(values)

    def profile(self, a):
        a = np.asarray(a, dtype=float)
        index = np.searchsorted(self.breaks, a, side='left')
        return np.append(self.values, 0.0)[index]

    def get_pieces(self):
        '''Returns the (breakpoint, value) pairs.'''
        return [(float(b), float(v)) for b, v in zip(self.breaks, self.values)]

    def get_jumps(self):
        extended = np.append(self.values, 0.0)
        jumps = []
        for i, location in enumerate(self.breaks):
            size = extended[i + 1] - extended[i]
            if size != 0.0:
                jumps.append((float(location), float(size)))
        return jumps

    def continuous_variation(self, a):
        return 0.0

    def get_sup(self):
        return float(self.values.max())

    def closed_form_moment(self, q):
        lower = np.append(0.0, self.breaks[:-1])
        return float(np.sum(self.values * (self.breaks ** (q + 1) - lower ** (q + 1))) / (q + 1))

    def closed_form_tail_moment(self, q, b):
        lower = np.maximum(np.append(0.0, self.breaks[:-1]), b)
        upper = np.maximum(self.breaks, b)
        return float(np.sum(self.values * (upper ** (q + 1) - lower ** (q + 1))) / (q + 1))

    def closed_form_bv_moment(self, r):
        return float(sum(abs(size) * location ** r for location, size in self.get_jumps()))


class IndicatorKernel(PiecewiseConstantKernel):
    '''K = 1 on [0, 1], the geometric-graph kernel.'''

    def __init__(self):
        super().__init__([(1.0, 1.0)], name="indicator")


class AnnulusKernel(PiecewiseConstantKernel):
    '''K = 1 on (1/2, 1]: discontinuous and not monotone.'''

    def __init__(self):
        super().__init__([(0.5, 0.0), (1.0, 1.0)], name="annulus")


class GaussianKernel(Kernel):
    '''K(a) = exp(-a^2).'''

    def __init__(self):
        super().__init__("gaussian", support_radius=None)

    def profile(self, a):
        a = np.asarray(a, dtype=float)
        return np.exp(-a * a)

    def variation_density(self, a):
        a = np.asarray(a, dtype=float)
        return 2.0 * a * np.exp(-a * a)

    def continuous_variation(self, a):
        return float(-np.expm1(-a * a))

    def get_sup(self):
        return 1.0

    def closed_form_moment(self, q):
        return 0.5 * special.gamma((q + 1) / 2.0)

    def closed_form_tail_moment(self, q, b):
        s = (q + 1) / 2.0
        return float(0.5 * special.gamma(s) * special.gammaincc(s, b * b))

    def closed_form_bv_moment(self, r):
        return float(special.gamma(r / 2.0 + 1.0))


class TriangularKernel(Kernel):
    '''K(a) = (1 - a)_+.'''

    def __init__(self):
        super().__init__("triangular", support_radius=1.0)

    def profile(self, a):
        a = np.asarray(a, dtype=float)
        return np.maximum(1.0 - a, 0.0)

    def variation_density(self, a):
        a = np.asarray(a, dtype=float)
        return np.where(a < 1.0, 1.0, 0.0)

    def continuous_variation(self, a):
        return float(min(a, 1.0))

    def get_sup(self):
        return 1.0

    def closed_form_moment(self, q):
        return 1.0 / ((q + 1) * (q + 2))

    def closed_form_tail_moment(self, q, b):
        if b >= 1.0:
            return 0.0
        return (1.0 - b ** (q + 1)) / (q + 1) - (1.0 - b ** (q + 2)) / (q + 2)

    def closed_form_bv_moment(self, r):
        return 1.0 / (r + 1)


def get_kernel(spec):
    '''Returns a kernel from a catalog name or a {"pieces": [[b, v], ...]} dict.

    Args:
        spec: catalog name, Kernel instance, or dict with "pieces" (and optional "name")

    Returns:
        Kernel: the kernel
    '''
    if isinstance(spec, Kernel):
        return spec
    if isinstance(spec, dict):
        if "pieces" in spec:
            return PiecewiseConstantKernel(spec["pieces"], name=spec.get("name", "piecewise"))
        spec = spec.get("name")
    catalog = {
        "indicator": IndicatorKernel,
        "gaussian": GaussianKernel,
        "triangular": TriangularKernel,
        "annulus": AnnulusKernel
    }
    if spec not in catalog:
        raise DomainException(f"Unknown kernel '{spec}'. Available: {', '.join(Rules().get_kernel_names())}")
    return catalog[spec]()


def unit_sphere_area(d):
    '''Returns S_{d-1}, the area of the unit sphere of R^d.'''
    if d < 1:
        raise DomainException(f"Dimension must be at least 1, got {d}.")
    return 2.0 * math.pi ** (d / 2.0) / special.gamma(d / 2.0)


def unit_ball_volume(d):
    '''Returns V_d, the volume of the unit ball of R^d.'''
    if d < 1:
        raise DomainException(f"Dimension must be at least 1, got {d}.")
    return math.pi ** (d / 2.0) / special.gamma(d / 2.0 + 1.0)


def _check_radius(a, label="a"):
    values = np.asarray(a, dtype=float)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise DomainException(f"{label} must be nonnegative, got {a}.")
    return values


def _as_output(values, a):
    if np.ndim(a) == 0:
        return float(values)
    return values


def _adaptive_quad(func, lower, upper, points, what):
    rtol = Rules().get_tolerances()["moment_rel"]
    kwargs = {"epsabs": 0.0, "epsrel": rtol, "limit": 500, "full_output": 1}
    if points and math.isfinite(upper):
        kwargs["points"] = points
    result = integrate.quad(func, lower, upper, **kwargs)
    value, error = result[0], result[1]
    if len(result) > 3 or not math.isfinite(value):
        message = result[3] if len(result) > 3 else "non-finite value"
        raise NumericalFailureException(
            f"Quadrature of {what} did not converge: {message}",
            {"value": value, "abs_error": error, "lower": lower, "upper": upper})
    return value


def _integrate_profile(kernel, q, lower):
    '''Integrates K(a) a^q on [lower, inf) by quadrature split at the panel points.'''
    integrand = lambda t: float(kernel.profile(t)) * t ** q
    points = [p for p in kernel.get_panel_points() if p > lower]
    if kernel.support_radius is not None:
        upper = kernel.support_radius
        if upper <= lower:
            return 0.0
        return _adaptive_quad(integrand, lower, upper, points[:-1], f"K(a) a^{q}")
    split = max([lower + 1.0] + points)
    finite = _adaptive_quad(integrand, lower, split, points, f"K(a) a^{q}")
    return finite + _adaptive_quad(integrand, split, math.inf, None, f"K(a) a^{q} tail")


def eval_kernel(kernel, a):
    '''Returns K(a); at a jump the left-limit value.

    Args:
        kernel: Kernel instance
        a: nonnegative radius (scalar or array)

    Returns:
        float or ndarray: K(a)
    '''
    values = _check_radius(a)
    return _as_output(kernel.profile(values), a)


def total_variation(kernel, a):
    '''Returns H(a), the total variation of K on [0, a].'''
    values = _check_radius(a)
    jumps = kernel.get_jumps()
    flat = np.atleast_1d(values)
    result = np.empty_like(flat)
    for i, point in enumerate(flat):
        jump_part = sum(abs(size) for location, size in jumps if location < point)
        result[i] = jump_part + kernel.continuous_variation(float(point))
    return _as_output(result.reshape(values.shape), a)


def kernel_moment(kernel, q):
    '''Returns int_0^inf K(a) a^q da (closed form when known, else adaptive quadrature).'''
    if q < 0:
        raise DomainException(f"Moment order must be nonnegative, got {q}.")
    closed = kernel.closed_form_moment(q)
    if closed is not None:
        return float(closed)
    return _integrate_profile(kernel, q, 0.0)


def tail_moment(kernel, q, b):
    '''Returns int_b^inf K(a) a^q da.'''
    if q < 0:
        raise DomainException(f"Moment order must be nonnegative, got {q}.")
    _check_radius(b, "b")
    closed = kernel.closed_form_tail_moment(q, b)
    if closed is not None:
        return float(closed)
    return _integrate_profile(kernel, q, float(b))


def c0(kernel, d):
    '''Returns the diffusion constant (1/d) S_{d-1} int_0^inf K(a) a^{d+1} da.'''
    if d < 1 or int(d) != d:
        raise DomainException(f"Dimension must be a positive integer, got {d}.")
    return unit_sphere_area(d) * kernel_moment(kernel, d + 1) / d


def bv_moment(kernel, r):
    '''Returns int_0^inf a^r dH(a): exact jump contributions plus quadrature of the continuous part.'''
    if r < 0:
        raise DomainException(f"Moment order must be nonnegative, got {r}.")
    closed = kernel.closed_form_bv_moment(r)
    if closed is not None:
        return float(closed)
    jump_part = sum(abs(size) * location ** r for location, size in kernel.get_jumps())
    integrand = lambda t: t ** r * float(kernel.variation_density(t))
    points = kernel.get_panel_points()
    if kernel.support_radius is not None:
        continuous = _adaptive_quad(integrand, 0.0, kernel.support_radius, points[:-1], f"a^{r} dH")
    else:
        split = max([1.0] + points)
        continuous = (_adaptive_quad(integrand, 0.0, split, points, f"a^{r} dH")
                      + _adaptive_quad(integrand, split, math.inf, None, f"a^{r} dH tail"))
    return jump_part + continuous


def _flag_increase(sequence):
    '''True when the sequence fails to decrease somewhere while still positive.'''
    return any(later >= earlier and earlier > 0 for earlier, later in zip(sequence, sequence[1:]))


def tail_decay_check(kernel, d, b_grid):
    '''Tabulates K(b) b^{d+3} and b int_b^inf K(a) a^{d+1} da over an increasing grid.

    Args:
        kernel: Kernel instance
        d: intrinsic dimension
        b_grid: increasing positive radii

    Returns:
        dict: grid, both sequences and a non-decreasing flag per sequence
    '''
    grid = [float(b) for b in b_grid]
    if not grid or grid[0] <= 0 or any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
        raise DomainException("b_grid must be positive and strictly increasing.")
    kernel_tail = [float(kernel.profile(b)) * b ** (d + 3) for b in grid]
    moment_tail = [b * tail_moment(kernel, d + 1, b) for b in grid]
    report = {
        "kernel": kernel.name,
        "d": d,
        "b": grid,
        "kernel_tail": kernel_tail,
        "moment_tail": moment_tail,
        "kernel_tail_non_decreasing": _flag_increase(kernel_tail),
        "moment_tail_non_decreasing": _flag_increase(moment_tail)
    }
    if report["kernel_tail_non_decreasing"] or report["moment_tail_non_decreasing"]:
        logger.warning("Kernel %s: tail sequence not decreasing on %s", kernel.name, grid)
    return report
