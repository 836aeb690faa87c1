from horizon_rl.verify.checks_runner import (
    CheckBase,
    CheckError,
    CheckReport,
    ChecksRunner,
    make_report,
    reports_frame,
    write_reports,
)

__all__ = [
    "CheckBase",
    "CheckError",
    "CheckReport",
    "ChecksRunner",
    "make_report",
    "reports_frame",
    "write_reports",
]
