"""Event-based motion deblurring and high-frame-rate video reconstruction.

The event-based double integral (EDI) model recovers a sharp latent image
from one blurred frame and the events recorded during its exposure; the
multiple-frame variant (mEDI) couples neighbouring frames into a small
tridiagonal system per pixel. Events then carry each latent image forward
and backward in time to produce a dense video.
"""

from .edi import LatentFrame, LatentSequence, edi_deblur, expand_video, frame_windows, stitch
from .events import (
    Event,
    EventIndex,
    FrameRecord,
    ParseError,
    ValidationError,
    events_between,
    parse_event_stream,
    parse_frame_manifest,
    read_event_file,
    write_event_file,
)
from .imaging import IDENTICAL, ImageBuffer, psnr, read_pgm, sobel_edges, ssim, total_variation, write_pgm
from .integrals import ExposureProfile, ExposureSegments, IntegralRangeError, build_exposure_profile, double_integral_J, event_sum_signal_M
from .medi import MediProblem, medi_energy, medi_reconstruct, solve_fibonacci_lu, solve_oracle
from .optimize import EdiEnergy, EnergyTrace, NonFiniteEnergyError, SearchConfig, edi_energy, fibonacci_search, golden_section, sweep_c
from .simulator import SimConfig, make_test_scene, simulate, simulate_blur, simulate_events

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventIndex",
    "FrameRecord",
    "ParseError",
    "ValidationError",
    "events_between",
    "parse_event_stream",
    "parse_frame_manifest",
    "read_event_file",
    "write_event_file",
    "ExposureProfile",
    "ExposureSegments",
    "IntegralRangeError",
    "build_exposure_profile",
    "double_integral_J",
    "event_sum_signal_M",
    "IDENTICAL",
    "ImageBuffer",
    "psnr",
    "ssim",
    "read_pgm",
    "write_pgm",
    "sobel_edges",
    "total_variation",
    "LatentFrame",
    "LatentSequence",
    "edi_deblur",
    "expand_video",
    "frame_windows",
    "stitch",
    "MediProblem",
    "medi_energy",
    "medi_reconstruct",
    "solve_fibonacci_lu",
    "solve_oracle",
    "EdiEnergy",
    "EnergyTrace",
    "NonFiniteEnergyError",
    "SearchConfig",
    "edi_energy",
    "fibonacci_search",
    "golden_section",
    "sweep_c",
    "SimConfig",
    "make_test_scene",
    "simulate",
    "simulate_blur",
    "simulate_events",
    "__version__",
]
