"""Distributed optimal energy flow for integrated electricity and gas systems.

Submodules:

* :mod:`iegsopt.model`: network data types and the JSON file format.
* :mod:`iegsopt.formulation`: centralized problem and node-wise decomposition.
* :mod:`iegsopt.qcqp1`: exact solver for one-constraint quadratic programs.
* :mod:`iegsopt.localsolve`: box, equality and convex quadratic subproblems.
* :mod:`iegsopt.admm`: the consensus ADMM engine.
* :mod:`iegsopt.oracle`: centralized nonconvex reference solver.
* :mod:`iegsopt.cli`: the ``iegsopt`` command.
"""

from .admm import AdmmConfig, AdmmResult, run
from .formulation import BIDIRECTIONAL, UNIDIRECTIONAL, assemble_centralized, decompose, lift_to_feasibility
from .model import NetworkSpec, load_network, save_network, validate
from .oracle import solve_reference

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "AdmmResult",
    "run",
    "BIDIRECTIONAL",
    "UNIDIRECTIONAL",
    "assemble_centralized",
    "decompose",
    "lift_to_feasibility",
    "NetworkSpec",
    "load_network",
    "save_network",
    "validate",
    "solve_reference",
]
