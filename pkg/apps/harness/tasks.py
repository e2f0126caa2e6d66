"""
Celery tasks for parallel sweeps.
"""

from celery import shared_task

from .services import cell_payload


@shared_task
def run_sweep_cell(base_path, config, task, t, method, seed):
    """
    Run one (t, method, seed) sweep cell against the checkpoint at base_path.
    Returns the cell's result as a plain dict.
    """
    return cell_payload(base_path, config, task, t, method, seed)
