"""Exception hierarchy.  Verdicts that are not failures (``Unreached``,
``Unreliable``) live on report objects instead."""


class CcgeoError(Exception):
    """Base class for all library errors."""


class NotInvolutive(CcgeoError):
    def __init__(self, i, j, x, residual):
        self.i, self.j, self.x, self.residual = i, j, x, residual
        super().__init__(
            f"[Y_{i + 1}, Y_{j + 1}] not in span of the commutators at x={list(map(float, x))} (residual {residual:.3e})"
        )


class DegenerateTuple(CcgeoError):
    pass


class NotInSpan(CcgeoError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"vector is not in the span of the tuple (residual {residual:.3e})")


class DegeneratePoint(CcgeoError):
    pass


class EscapedDomain(CcgeoError):
    def __init__(self, exit_time, point=None):
        self.exit_time = exit_time
        self.point = point
        super().__init__(f"trajectory left the domain box at t={exit_time:.6g}")


class IntegrationStalled(CcgeoError):
    pass


class FrameCollapse(CcgeoError):
    pass


class LiftDiverged(CcgeoError):
    def __init__(self, t, residual=None):
        self.t, self.residual = t, residual
        super().__init__(f"lift lost track of the path at t={t:.4f}")


class RadiusTooLarge(CcgeoError):
    def __init__(self, rho):
        self.rho = rho
        super().__init__(f"A-ODE solution blew up at rho={rho:.4g}")


class NotInjective(CcgeoError):
    def __init__(self, pair, distance):
        self.pair, self.distance = pair, distance
        super().__init__(f"E maps {pair[0]} and {pair[1]} within {distance:.3e} of each other")
