"""Sandboxed executor for generated Python reference models."""

from .runner import check_syntax, execute_job, run_job_dict

__all__ = ["check_syntax", "execute_job", "run_job_dict"]
