"""Crowd anomaly detection from optical flow via anticipatory interaction forces.

Pipeline: optical flow -> one characteristic particle per grid cell ->
time-to-collision repulsion between particles -> per-cell force time
series (visual words) -> a group of small least-squares dictionaries that
flags words it cannot reconstruct.
"""

from .advect import CharacteristicParticle, GridSpec, ParticleSet, advect_frame, make_block_grid, make_grid
from .codebook import (Dictionary, GroupDictionary, OnlineCodebook, TrainingParams, WordPool, classify_word,
                       classify_words, deposit_word, global_update, least_squares_code, load_model,
                       local_update, save_model, train_group)
from .config import PROFILES, Config
from .errors import *  # noqa: F401,F403
from .evaluation import EvalReport, auc, eer, evaluate, roc_curve
from .features import ForceFlowMatrix, VisualWord, build_force_flow, extract_words
from .flow_io import FlowField, load_flo, read_flo, sample_flow, save_flo, write_flo
from .force import (InteractionParams, energy_derivative, frame_forces, interaction_energy, net_force,
                    repulsive_force, time_to_collision)
from .pipeline import DetectionRecord, FrameVerdict, run_detect, run_train
from .synth import Scenario, ScenarioConfig, rasterize_flow, simulate_scenario

__version__ = "0.1.0"
