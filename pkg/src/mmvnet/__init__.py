"""Two-stage unrolled thresholding networks for jointly row-sparse
multiple-measurement-vector channel estimation in the angular domain."""

from .config import ConfigError, RunConfig, SystemConfig, TrainConfig, config_hash
from .estimator import (CoarseNetParams, EstimateResult, FineNetParams, SparsityModel,
                        bcd_mmv_solve, coarse_forward, expected_row_sparsity,
                        extract_support, fine_forward, init_params, largest_eigenvalue,
                        two_stage_estimate)
from .simgen import (Dataset, DatasetSample, MeasurementSet, MultiFrameChannel, PilotMatrix,
                     RealLifted, SupportSequence, complex_unlift, gen_channel, gen_dataset,
                     gen_pilot, gen_support_sequence, make_unitary_dft, measure, real_lift)
from .thresholding import (RowMatrix, SupportSelection, bss_threshold, select_support_fsj,
                           select_support_ss, selection_fraction, soft_row_threshold,
                           weighted_bss_threshold)
from .training import (GradientSet, LossReport, backward_pass, mse_loss, train_pipeline,
                       train_stage)
from .bench import (NmseReport, OpCount, SCHEMES, SchemeSpec, SupportMetrics, SweepResult,
                    analytic_op_count, instrumented_op_count, monte_carlo_union_rows, nmse,
                    run_sweep, support_metrics)

__version__ = "0.1.0"
