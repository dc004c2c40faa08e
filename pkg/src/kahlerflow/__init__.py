"""Finite-difference lab for parabolic complex Monge-Ampere and modified Kaehler-Ricci flows."""

from .errors import (CompatibilityError, ConfigError, DegenerateMetricError, KahlerFlowError,
                     NumericBlowupError, ShapeError, UnsupportedError)
from .geometry import (HermitianField, ModelGeometry, complex_hessian, curvature_norm,
                       distance_like, eigen_range, laplacian, ricci_form)
from .background import (BackgroundPath, Forcing, PrescribedForm, forcing_profile, make_schedule,
                         normalize_initial_data, potential_from_form, prescribed_form)
from .flow import (FlowProblem, FlowState, RunSettings, Trajectory, ma_rhs, psh_gauge_transform,
                   run, stable_dt, step)
from .monitor import MonitorRecord, MonitorReport

__version__ = "0.1.0"
