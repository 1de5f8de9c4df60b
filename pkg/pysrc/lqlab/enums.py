import enum


class Differencing(enum.Enum):
    """
    Enumeration of the finite-difference modes used to approximate :math:`\\partial_x V`.
    """

    #: Forward difference where the drift is nonnegative, backward difference where it is
    #: negative. This is the monotone choice.
    UPWIND = "upwind"

    #: The wrong-sided mirror of :attr:`UPWIND`. Kept as the unstable control case.
    DOWNWIND = "downwind"

    #: Centred difference on both sides of the node. Not monotone whenever the drift is nonzero.
    CENTRAL = "central"


class Region(enum.Enum):
    """
    The two halves of the control line split by the sign of the drift at a node.
    """

    #: Controls with ``drift(x, u) >= 0``. Closed, so it also owns the region boundary.
    R1 = "R1"

    #: Controls with ``drift(x, u) < 0``.
    R2 = "R2"


class Stencil(enum.Enum):
    """
    The difference quotient actually applied at a node.
    """

    #: ``(V[i+1] - V[i]) / dx``
    FORWARD = enum.auto()

    #: ``(V[i] - V[i-1]) / dx``
    BACKWARD = enum.auto()

    #: ``(V[i+1] - V[i-1]) / (2 dx)``
    CENTRAL = enum.auto()


class FixedPointForm(enum.Enum):
    """
    Selects the self-coefficient of the relaxed fixed-point update.
    """

    #: ``(gamma - beta) / gamma``. The form whose fixed points solve the HJB equation.
    CONSISTENT = "consistent"

    #: ``(beta + gamma) / gamma``, as commonly printed. Its fixed points solve the equation with
    #: the discount term's sign flipped, so it is only useful for side-by-side comparison.
    LITERAL = "literal"


class PolicyEvaluation(enum.Enum):
    """
    How policy iteration evaluates each frozen policy.
    """

    #: Solve the frozen-policy linear system directly, then confirm it with relaxed sweeps.
    EXACT = "exact"

    #: Relaxed sweeps only, from the previous round's values. The value error left behind is
    #: roughly ``theta_v * gamma_s / beta``, which can keep the policy change above ``theta_u``.
    SWEEPS = "sweeps"


class ExperimentKind(enum.Enum):
    """
    Enumeration of the experiments the command-line runner knows about.
    """

    #: Value iteration on the HJB grid.
    HJB_VI = "hjb-vi"

    #: Policy iteration on the HJB grid.
    HJB_PI = "hjb-pi"

    #: Tabular Q-learning on the Euler MDP.
    QLEARN = "qlearn"

    #: Semi-gradient Q-learning with the quadratic feature map.
    LINFA = "linfa"

    #: Monotonicity probes of the scheme operator.
    PROBE = "probe"

    #: A parameter sweep over one of the other kinds.
    SWEEP = "sweep"


class LearningRateSchedule(enum.Enum):
    """
    Learning-rate schedules for tabular Q-learning.
    """

    #: The same learning rate for every update.
    CONSTANT = "constant"

    #: ``1 / (1 + n)`` where ``n`` counts the previous visits to the ``(s, a)`` pair. Satisfies
    #: the usual square-summability conditions.
    VISIT_COUNT = "visit-count"


class StepSizeMode(enum.Enum):
    """
    Step-size modes for linear function approximation.
    """

    #: A fixed learning rate ``c``.
    CONSTANT = "constant"

    #: ``fraction * step_bound(x, u)`` at every sample.
    BOUND_SCALED = "bound-scaled"


def stencil_for(differencing: Differencing, region: Region, i: int, n_nodes: int) -> Stencil:
    """
    Picks the difference quotient used on ``region`` at node ``i``.

    Boundary nodes only have one neighbour, so they always use the one-sided quotient that
    exists, whatever the differencing mode asks for.
    """

    if i == 0:
        return Stencil.FORWARD

    if i == n_nodes - 1:
        return Stencil.BACKWARD

    match differencing:
        case Differencing.UPWIND:
            return Stencil.FORWARD if region is Region.R1 else Stencil.BACKWARD

        case Differencing.DOWNWIND:
            return Stencil.BACKWARD if region is Region.R1 else Stencil.FORWARD

        case Differencing.CENTRAL:
            return Stencil.CENTRAL
