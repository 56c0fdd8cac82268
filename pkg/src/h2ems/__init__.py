"""H2/NOx-optimal energy management for hybrid hydrogen-combustion vehicles.

Quasi-static drivetrain models, driving missions, a dynamic-programming
optimizer with a NOx-weight sweep, and KPI extraction.
"""
__version__ = "0.1.0"

from .analysis import Baseline, KpiReport, compute_baseline, extract_calibrations, operating_point_stats
from .cycles import DrivingMission, load_mission, make_highway_cycle, make_mountain_cycle, mixed_load_cycle
from .maps import ComponentMap2D, MapSet, load_map_set, synthetic_map_set
from .optimizer import DpConfig, Infeasible, ParetoFront, brute_force_oracle, solve_dp, sweep_pareto
from .powertrain import Architecture, ArchitectureSpec, BatterySpec, evaluate_stage, make_architecture

__all__ = [
    "Architecture", "ArchitectureSpec", "Baseline", "BatterySpec", "ComponentMap2D", "DpConfig", "DrivingMission",
    "Infeasible", "KpiReport", "MapSet", "ParetoFront", "brute_force_oracle", "compute_baseline",
    "evaluate_stage", "extract_calibrations", "load_map_set", "load_mission", "make_architecture",
    "make_highway_cycle", "make_mountain_cycle", "mixed_load_cycle", "operating_point_stats", "solve_dp",
    "sweep_pareto", "synthetic_map_set",
]
