"""Independent oracles, accounting, and introspection for the engine."""

from mlfpn.tracing import ShapeTrace, TraceRecord
from mlfpn.verify.gradcheck import GradCheckResult, fd_gradient_harness
from mlfpn.verify.nms_oracle import soft_nms_oracle
from mlfpn.verify.params import ParamReport, count_params
from mlfpn.verify.profile import activation_profile, profile_csv
from mlfpn.verify.trace import compare_traces, trace_shapes

__all__ = [
    "GradCheckResult",
    "ParamReport",
    "ShapeTrace",
    "TraceRecord",
    "activation_profile",
    "compare_traces",
    "count_params",
    "fd_gradient_harness",
    "profile_csv",
    "soft_nms_oracle",
    "trace_shapes",
]
