"""geodix: curvature and metric recovery from wavefront shape operators."""

from . import (cli, errors, forward, geodesics, inversion, manifold,
               metric_recovery, surfacedata)

__all__ = ["cli", "errors", "forward", "geodesics", "inversion", "manifold",
           "metric_recovery", "surfacedata"]
__version__ = "0.1.0"
