"""Smallness thresholds, correctly rounded to double precision.

Plain float arithmetic loses several ulps to cancellation in expressions such
as ``1.5 - sqrt(2)``, so each constant is evaluated with 50 significant
digits and rounded once.
"""

import math
from decimal import Decimal, localcontext

with localcontext() as _ctx:
    _ctx.prec = 50
    _R2 = Decimal(2).sqrt()
    #: bound on the distance to Pareto optimality
    PARETO_DISTANCE = float(Decimal("1.5") - _R2)
    #: bound on max_i |G^i - xi^c|_inf
    LINF = float(((3 - 2 * _R2) / 4) ** 2)
    #: radius of the ball the excess-demand map preserves
    CONTRACTION_RADIUS = float((_R2 - 1) / 2)
    #: Lipschitz constant of the excess-demand map on that ball
    LIPSCHITZ = float(5 - 3 * _R2)
    #: numerator of the weighted-bmo smallness level, times (1 - 2/kappa)
    ETA_LEVEL = float(Decimal(23).sqrt() / 64)

def eta_threshold(kappa: float) -> float:
    return ETA_LEVEL * (1.0 - 2.0 / kappa) if math.isfinite(kappa) else ETA_LEVEL


def horizon_bound(sup_sq: float) -> float:
    """``T* = PARETO_DISTANCE**2 / sup_sq`` (infinite when ``sup_sq == 0``)."""
    return math.inf if sup_sq == 0 else PARETO_DISTANCE**2 / sup_sq


ALL = {
    "pareto_distance": PARETO_DISTANCE,
    "linf": LINF,
    "contraction_radius": CONTRACTION_RADIUS,
    "lipschitz": LIPSCHITZ,
    "eta_level": ETA_LEVEL,
}
