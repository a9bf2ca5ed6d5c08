"""Event-camera pose tracking against a known semi-dense map.

Time-surface and event-map representations, forward compositional
Gauss-Newton alignment on SE(3), a degeneracy-driven switch between the two,
a synthetic event-camera rig and trajectory evaluation.
"""

from .errors import (
    DomainError,
    EvtrackError,
    FormatError,
    InsufficientConstraintsError,
    KindError,
    NumericalFailure,
    ParseError,
    SamplingRateError,
    TrackingFailure,
)
from .events import Event, EventStream, events_in_window, last_n_events, parse_events, write_events
from .geometry import CameraIntrinsics, PoseSE3, TemplateView, exp_map, log_map, project, back_project, warp, warp_jacobian
from .representations import (
    EventFrame,
    FrameKind,
    RepresentationConfig,
    TimeSurfaceState,
    bilinear_sample,
    gaussian_blur,
    image_gradient,
    negate,
    render_event_map,
    render_time_surface,
    update_t_last,
)
from .tracker import (
    Representation,
    TrackerConfig,
    TrackResult,
    align,
    degeneracy_factor,
    linearize,
    track_em,
    track_sequence,
    track_ts,
    track_tsem,
)
from .simulator import SequenceConfig, simulate_sequence
from .evaluation import Trajectory, ate, calibrate_lambda_threshold, lambda_sweep, run_trials

__version__ = "0.1.0"
