"""Momentum-compensated asynchronous first-order solvers.

Convex composite optimization with delayed gradients: accelerated
full-gradient, coordinate-descent and variance-reduced loops that push
stale reads forward by the momentum they missed, next to their serial
and unaccelerated counterparts.  A deterministic bounded-delay simulator
covers bound-level checks; a shared-memory runtime measures real
asynchrony.
"""

from .delay import (DelaySchedule, make_schedule, measure_overlap,
                    verify_schedule, load_trace_schedule)
from .momentum import (ScaledScalar, ThetaSchedule, comp_sum_aagd,
                       comp_sum_aascd, comp_sum_aasvrg, scaled_mul,
                       solve_theta_sc, step_size, asvrg_step_size)
from .problem import (CompositeProblem, CsrMatrix, Dataset, DualSvmProblem,
                      NonsmoothPart, estimate_constants, hessian_vec,
                      load_libsvm, make_dual_svm, make_erm, prox_step,
                      save_libsvm, vr_grad)
from .solvers import (EpochState, SolverResult, Trace, dual_gap, run_aagd,
                      run_aascd, run_aasvrg, run_agd, run_apcg_reference,
                      run_accel_svrg_reference, run_asvrg_baseline,
                      run_sgd_baseline, snapshot_update, solve_reference)
from .runtime import (SharedState, UpdateOrderQueue, apply_coordinate_delta,
                      contention_test, deadlock_stress, measure_delay,
                      read_delay_log, run_parallel, speedup, write_delay_log)

__version__ = "0.1.0"
