"""forgetlab: machine unlearning by neuron masking, with baselines.

A trained model's memorization of chosen samples is removed by
optimizing a parameter-shaped mask that pushes those samples' posteriors
toward what the model produces on data it never saw, while an L1 penalty
weighted by retained-data gradient magnitudes protects everything else.
Removal quality is audited by a shadow-model membership oracle and
scored as forgetting rate / catastrophic forgetting rate.

Ships with full retraining, per-epoch gradient-ledger subtraction and
shard/slice checkpoint retraining as baselines, a federated round
simulator in which unlearning updates are indistinguishable from
learning updates on the wire, synthetic scenario generators, and a CLI
(`forgetlab run`) that drives seeded multi-trial benchmarks.
"""

from .baselines import (GradientLedger, record_unlearn_contributions,
                        retrain_full, smu_record, smu_unlearn)
from .checkpoint import (CheckpointError, checkpoint_size, load_checkpoint,
                         params_from_bytes, params_to_bytes, save_checkpoint)
from .configfile import (ConfigError, ExperimentConfig, apply_overrides,
                         default_config, forsaken_from_config, load_config,
                         parse_config, serialize_config)
from .datasets import (KINDS, ROLES, ScenarioDataset, ScenarioSpec,
                       build_scenario, check_dataset, dump_role_csvs,
                       gen_gaussian_mixture, load_csv_dataset, poison_labels,
                       sample_reference_set, select_unlearn_set, split_shadow)
from .estimators import MLPClassifier
from .experiment import (TrialResult, build_trial_parts, emit_report,
                         read_trials_csv, run_experiment, run_trial,
                         write_trials_csv)
from .fedsim import (ClientState, RoundMessage, client_round,
                     deserialize_messages, message_schema, partition_clients,
                     run_simulation, serialize_messages, server_aggregate)
from .forsaken import (Forsaken, ForsakenResult, TargetDistribution,
                       average_posteriors_by_class, client_mask_scale,
                       estimate_target_posteriors, forgetting_loss,
                       penalty_weights, write_trace)
from .gbdt import GradientBoostingBinaryClassifier
from .membership import (MembershipOracle, OracleQuality, build_oracle,
                         dump_probes, evaluate_oracle, extract_features,
                         infer_membership, load_oracle, save_oracle,
                         train_attack_classifier, train_shadow)
from .metrics import (UnlearnReport, accuracy_drop, aggregate_trials,
                      catastrophic_forgetting_rate,
                      catastrophic_forgetting_rate_from_counts,
                      forgetting_rate, forgetting_rate_from_counts,
                      make_report)
from .model import (PROB_FLOOR, ModelSpec, ParamVector, build_model,
                    cross_entropy, evaluate, finite_difference_gradient,
                    forward_batch, grad_cross_entropy, grad_from_output,
                    predict_labels, softmax)
from .optim import Adam, Lbfgs, Sgd, make_optimizer
from .sisa import (SisaEnsemble, assign_cells, load_ensemble, save_ensemble,
                   sisa_predict, sisa_train, sisa_unlearn, stage_epochs)
from .training import BatchContext, TrainConfig, train
from .utils import derive_seed, rng_from, splitmix64, stable_index_hash

__version__ = "0.1.0"
