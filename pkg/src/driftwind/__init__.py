"""Wind-field estimation from gridded image sequences with a space-time drift model."""

__version__ = "0.1.0"

from .covmodel import DriftParams, correlation, cov_matrix, cross_cov
from .dmwa import DmwaConfig, dbscan, dmwa_scan, mean_displacement, nested_track, ssd_match
from .evaluate import (ExperimentReport, Table1Config, Table2Config,
                       baseline_persistence, cv_window_size, mspe, predict_frame,
                       run_table1, run_table2, vector_difference)
from .gridstore import (GridGeometry, GridStack, TargetWindow, read_gridstack,
                        slice_window, write_gridstack)
from .likelihood import FitResult, fit_window, loglik
from .preprocess import fit_standardization, standardize
from .scanner import ScanConfig, WindField, read_windfield, scan, write_windfield
from .simulator import SimConfig, WindFieldSpec, simulate_domain, simulate_window
from .smoother import SmoothConfig, select_bandwidth, smooth_field

__all__ = [name for name in dir() if not name.startswith("_")]
