"""Hypergraph temporal graph networks: streaming hyperedge construction,
hyperedge memory, and dynamic link prediction on a small numpy autodiff core."""

from ._accel import backend, set_backend, use_numba
from .cliques import enumerate_maximal_cliques
from .graph import (BIPARTITE, HOMOGENEOUS, Event, EventFormatError, SplitSpec, TemporalGraph,
                    chronological_split, load_events, save_events, temporal_neighbors)
from .hyperedges import HyperedgeBuilder, HyperedgeRegistry, MergeEvent, memory_footprint
from .htsbm import HtsbmParams, duration_sweep, evaluate_reconstruction, sample_htsbm
from .model import HTGN, BuilderConfig, MemoryBank, ModelConfig, StreamState
from .train import EvalResult, TrainConfig, Trainer, fit, sample_negatives

__version__ = "0.1.0"
