"""k-commodity min-cost and max-throughput flow by a robust interior point method."""
from .errors import *  # noqa: F401,F403
from .instance import (DirectedGraph, KCommodityInstance, augment_initial,
                       build_incidence, reduce_full_rank, swap_costs,
                       truncate_solution)
from .io import format_instance, format_solution, parse_instance, \
    parse_solution
from .kernels import BACKEND
from .solver import (FlowSolution, SolveConfig, generate_instance,
                     repair_demands, solve_mincost, solve_throughput,
                     verify_certificate)

__version__ = "0.1.0"
