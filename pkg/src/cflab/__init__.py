"""Robust joint AP clustering and beamforming lab for cell-free downlink.

Modules cover channel simulation with bounded CSI errors (sysmodel),
worst-case SINR certification via LMI feasibility (certifier), a WMMSE
baseline (baseline), the RJAPCBN neural pipeline with a self-contained
reverse-mode engine (network, autodiff, kernels), unsupervised training
(trainer), and metrics/experiments/CLI (metrics, experiments, cli).
"""

from . import (  # noqa: F401
    autodiff,
    baseline,
    certifier,
    experiments,
    kernels,
    metrics,
    network,
    sysmodel,
    trainer,
)

__version__ = "0.1.0"
