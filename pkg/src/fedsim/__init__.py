"""Desk-scale federated text classification under label-flipping attacks."""

from .aggregation import ClientUpdate, FedAvg, Krum, MultiKrum, fedavg, krum_scores, krum_select, multi_krum
from .attack import AttackSpec, FlipMap, apply_attack, iid_attack_assignment, noniid_attack_assignment
from .data import Dataset, Example, SyntheticCorpusSpec, generate_synthetic, load_tsv, preprocess
from .metrics import ConfusionMatrix, Metrics, evaluate, macro_f1, micro_f1, per_language_eval
from .model import FeatureVector, ParameterVector, TrainConfig, featurize, local_train, loss_and_gradient, predict
from .orchestrator import FLConfig, RoundRecord, payload_estimate, run_centralized, run_fl
from .partition import ClientShard, partition_iid, partition_noniid, pool

__version__ = "0.1.0"
