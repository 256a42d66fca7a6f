"""End-to-end audit pipeline: configuration, staged runner, report emission."""

from .config import EndpointSpec, RunConfig, desk_preset
from .report import emit_report
from .runner import AuditResult, AuditRunner, load_run_config, run_audit

__all__ = [
    "EndpointSpec",
    "RunConfig",
    "desk_preset",
    "AuditResult",
    "AuditRunner",
    "load_run_config",
    "run_audit",
    "emit_report",
]
