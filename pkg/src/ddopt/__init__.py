"""Doubly-distributed solvers for regularized linear models.

Datasets are partitioned across both observations (P row blocks) and
features (Q column blocks); the two solvers — dual coordinate ascent with
local SDCA passes, and a variance-reduced stochastic primal method with
rotating sub-blocks — run on a deterministic in-process cluster simulation
with metered tree reductions.
"""

from .d3ca import D3caConfig, ZeroDenominator, local_sdca, run_d3ca, sdca_hinge_step
from .data import (Dataset, InvalidDensity, assemble, generate_synthetic,
                   partition_dataset, standardize, synthetic_shape)
from .engine import ClusterSim, EmptyGroup, TaskPanic, rng_stream, tree_reduce
from .harness import (ConfigError, MaxIterationsExceeded, NonPositiveReference,
                      NonPositiveTime, reference_solve, relative_optimality,
                      run_experiment, weak_scaling_efficiency)
from .losses import (LossEval, dual_objective, duality_gap, evaluate,
                     loss_derivatives, loss_values, primal_from_dual,
                     primal_objective, stochastic_gradient)
from .model import (DataBlock, DimensionMismatch, DualVector, IndexOutOfRange,
                    InfeasibleDual, InvalidPartitionCount, IterationRecord,
                    LabelMismatch, Loss, MissingBlock, PartitionGrid,
                    PrimalVector, ProblemSpec, RunHistory, validate_dataset)
from .partition import assign_subblocks, make_grid
from .radisa import (MissingSlice, RadisaConfig, full_gradient, merge_solutions,
                     run_radisa, step_size, svrg_inner)

__version__ = "0.1.0"
