"""Multi-agent path finding on roadmaps."""

from safenav.mapf.cbs import (CBS_BUDGET, RHO_CONFLICT, AgentTask, BudgetExceeded, Conflict,
                              Infeasible, MapfProblem, MultiAgentPlan, cbs, detect_conflicts)
from safenav.mapf.joint import StateSpaceExceeded, joint_astar
from safenav.mapf.search import (Constraint, NoPath, TimedPath, dijkstra, heuristic_table,
                                 path_weight, shortest_path, space_time_astar)

__all__ = [
    "AgentTask", "BudgetExceeded", "CBS_BUDGET", "Conflict", "Constraint", "Infeasible",
    "MapfProblem", "MultiAgentPlan", "NoPath", "RHO_CONFLICT", "StateSpaceExceeded", "TimedPath",
    "cbs", "detect_conflicts", "dijkstra", "heuristic_table", "joint_astar", "path_weight",
    "shortest_path", "space_time_astar",
]
