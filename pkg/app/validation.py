import logging
import math

try:
    from app.exceptions import DomainException, InvalidConfigException
except ImportError:
    from exceptions import DomainException, InvalidConfigException

logger = logging.getLogger(__name__)


class validation:

    @staticmethod
    def window_quantity(n, h, d) -> float:
        '''Returns log(1/h) / (n h^(d+2)), the variance term of the bandwidth window.'''
        return math.log(1.0 / h) / (n * h ** (d + 2))

    @staticmethod
    def validate_window(n, h, d, field="h") -> bool:
        '''Validate that (n, h) lies inside the bandwidth window at this finite n.'''
        if not 0.0 < h < 1.0:
            raise InvalidConfigException(f"Bandwidth must lie in (0, 1), got {h}.", field)
        value = validation.window_quantity(n, h, d)
        if value > 1.0:
            raise InvalidConfigException(
                f"Window condition violated at n = {n}, h = {h:.6g}: log(1/h)/(n h^{d + 2}) = {value:.4g} > 1.", field)
        if value > 0.5:
            logger.warning("Window quantity %.3g at n = %d, h = %.4g is close to its limit", value, n, h)
        return True

    @staticmethod
    def validate_knn_rule(n, k, d, field="k") -> bool:
        '''Validate k against both asymptotic conditions of the kNN pipeline at this finite n.

        k/n must be small, (1/n)(k/n)^(-1-2/d) log(n/k) at most 1, and k above log n.
        '''
        if int(k) != k or not 1 <= k <= n:
            raise InvalidConfigException(f"k must be an integer in 1..{n}, got {k}.", field)
        if k >= n or k / n > 0.5:
            raise InvalidConfigException(f"k = {k} is not small against n = {n} (k/n = {k / n:.3g}).", field)
        ratio = k / n
        spread = ratio ** (-1.0 - 2.0 / d) * math.log(1.0 / ratio) / n
        if spread > 1.0:
            raise InvalidConfigException(
                f"k = {k} is too small for n = {n}: (1/n)(k/n)^(-1-2/d) log(n/k) = {spread:.4g} > 1.", field)
        if k <= math.log(n):
            raise InvalidConfigException(f"k = {k} must exceed log(n) = {math.log(n):.3g}.", field)
        return True

    @staticmethod
    def delta_interval(n, h, d) -> tuple:
        '''Returns the admissible deviation levels [max(h, sqrt(log(1/h)/(n h^(d+2)))), 1].'''
        return max(h, math.sqrt(validation.window_quantity(n, h, d))), 1.0

    @staticmethod
    def validate_deltas(deltas, n, h, d, field="deltas") -> bool:
        '''Validate that every deviation level lies in the admissible interval.'''
        lower, upper = validation.delta_interval(n, h, d)
        if not deltas:
            raise InvalidConfigException("The deviation grid is empty.", field)
        for delta in deltas:
            if not lower - 1e-12 <= delta <= upper:
                raise InvalidConfigException(
                    f"Deviation level {delta} lies outside [{lower:.6g}, {upper}].", field)
        return True

    @staticmethod
    def validate_positive_int(value, field) -> bool:
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise InvalidConfigException(f"Expected a positive integer, got {value!r}.", field)
        return True

    @staticmethod
    def validate_seed(value, field="seeds") -> bool:
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2 ** 64:
            raise InvalidConfigException(f"Seeds must be unsigned 64-bit integers, got {value!r}.", field)
        return True

    @staticmethod
    def validate_on_manifold(manifold, points, field="points") -> bool:
        '''Validate that points lie on the manifold within the embedding tolerance.'''
        try:
            manifold.check_on_manifold(points)
        except DomainException as e:
            raise InvalidConfigException(str(e), field)
        return True
