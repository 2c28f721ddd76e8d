"""PV hosting capacity of radial feeders: SOCP relaxation plus convex iteration."""

from .branchflow import (AngleRecoveryError, BranchFlowState, FlowResiduals, GapVector,
                         SweepDivergence, bisect_hosting, brute_force_hosting,
                         feasibility_gap, flow_residuals, power_flow_sweep,
                         recover_angles, substation_export, zero_state)
from .cones import ConeProgram, ConeSolution, SolveOptions, solve
from .feeder import (BUNDLED, Edge, FeederFormatError, FeederModel, LoadScaling, Node,
                     bundled_feeder, load_feeder, parse_feeder, scale_loads,
                     serialize_feeder)
from .hosting import (HostingProgramIndex, InfeasibleModelError, binding_constraints,
                      build_lindistflow, build_loss_min, build_relaxed_hosting,
                      extract_state, lindistflow_init)
from .iteration import (HostingResult, IterationConfig, IterationError, IterationRecord,
                        IterationTrace, build_delta_program, contraction_cut,
                        realized_limits_ok, run, update_state)

__version__ = "0.1.0"
