"""Exception hierarchy shared across the package.

Numerical failures (blow-ups, exhausted windows, singular systems) are kept
distinct from input errors so the command line tool can map them to exit
codes: bad input -> 1, numerical failure -> 2, tolerance gate -> 3.
"""


class GeodixError(Exception):
    """Base class for all package errors."""


class InputError(GeodixError):
    """Bad arguments, malformed configs or files. CLI exit code 1."""


class NumericalError(GeodixError):
    """A computation failed or left its validity region. CLI exit code 2."""


# ---- metric field / tensors ----

class DomainError(InputError):
    """Point (or a path through it) left the chart domain."""


class DegenerateMetric(NumericalError):
    """Metric not positive definite at the requested point."""


class ZeroVector(InputError):
    """A direction argument has (near-)zero length."""


# ---- geodesics ----

class StepError(NumericalError):
    """Adaptive integrator could not meet its tolerance."""


class SingularFrame(NumericalError):
    """Transported frame lost linear independence."""


class InjectivityError(NumericalError):
    """Chart inversion did not converge inside the trusted window."""


# ---- forward data ----

class ConjugatePoint(NumericalError):
    """Shape operator undefined: evaluation at (or too near) a caustic."""


class BlowUp(NumericalError):
    """Trajectory norm exceeded the blow-up threshold."""


class EmptySurface(InputError):
    """No sampled surface point landed inside the requested region."""


# ---- inversion ----

class SingularShape(NumericalError):
    """A shape-operator sample is not invertible."""


class NoiseError(NumericalError):
    """Derivative estimation rejected the data as too rough."""


class OutOfWindow(NumericalError):
    """Evaluation point left the current data window."""


class WindowExhausted(NumericalError):
    """No usable data window remains before the requested range is covered."""


class BadBound(InputError):
    """Step-bound inputs must be strictly positive and finite."""


# ---- metric recovery ----

class GridMismatch(InputError):
    """Charts under comparison do not share grids."""


# ---- surface data ----

class Disconnected(NumericalError):
    """No chain of surfaces joins the two query points."""


class SnapError(InputError):
    """Query point has no sample within the snap radius."""


class DegenerateLandmarks(NumericalError):
    """Distance-coordinate Jacobian is numerically rank deficient."""


class IllConditioned(NumericalError):
    """Least-squares system too ill conditioned to trust."""


class InsufficientSamples(InputError):
    """Not enough probe points near the evaluation point."""


class ConfigError(InputError):
    """Experiment configuration failed validation."""
