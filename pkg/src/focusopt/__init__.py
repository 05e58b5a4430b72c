"""Uncertainty-gated test-time refinement of classifier predictions.

When a forward pass leaves the top two classes nearly tied, a single
large-learning-rate gradient step on a focus-class loss (applied to a clone
of the weights, then discarded) can flip the prediction to the better of the
likely candidates.  This package contains the refinement pipeline, a minimal
tape autodiff to drive it, the closed-form linear-model analysis of why
shared features are amplified, and a synthetic-data harness measuring when
the step helps.
"""

from .bench import (DatasetSpec, Dataset, EvalReport, evaluate_config,
                    gen_synthetic, lr_sweep, partition_uncertain, sign_test,
                    single_vs_multi, topk_accuracy)
from .focus import (FocusConfig, FocusOutcome, focus_predict, loss_ce_focus,
                    loss_dofo, loss_entropy, loss_ifo, select_focus,
                    uncertainty_gap)
from .gradcore import Tape, backward, finite_diff_grad, forward_mlp
from .network import (MlpSpec, Parameters, Snapshot, argmax_class,
                      init_params, load_checkpoint, restore, save_checkpoint,
                      sgd_step, snapshot, softmax_stable, train_base)
from .theory import (AmplificationReport, CoefficientCurve, GradReport,
                     ToyModel, amplification_report, coefficient_curve,
                     entropy_coeffs, toy_forward, toy_grad)

__version__ = "0.1.0"
