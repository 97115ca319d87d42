"""shopsim: multi-category retail shopping simulator and offline-RL benchmark
for coupon-targeting agents."""

from .agents import Policy, PolicySpec, TransitionBatch, build_policy
from .catalog import (Catalog, CustomerPopulation, PricingState, generate_catalog,
                      generate_customers, load_world, save_world, step_shelf_prices)
from .config import SimConfig, config_hash, sim_config_from_file
from .dataset import OfflineDataset
from .env import EnvSnapshot, Observation, RetailEnv, effective_price, reset, restore
from .features import (FEATURE_NAMES, FeatureSchema, SummaryAccumulator,
                       mutual_information, rank_features)
from .metrics import EvalRun, MetricsReport, compute_metrics
from .mlp import Mlp
from .workflows import (collect_offline, evaluate_policy, segment_analysis,
                        sensitivity_sweep, static_sweep, train_and_eval,
                        train_policy, tune)

__version__ = "0.1.0"
