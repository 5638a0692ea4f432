"""Stochastic gradient push on directed graphs: simulation, stability experiments and bounds."""
from .errors import ConfigError, ContractViolation
from .topology import DirectedGraph, TopologyKind, build_topology
from .mixing import MixingMatrix, SpectralProfile, build_mixing, spectral_profile
from .objectives import LogisticL2, PLQuadratic, Sample
from .engine import Constant, Diminishing, TrainConfig, run_training
from .data_io import Dataset, ShardedDataset, load_a9a, shard

__version__ = "0.1.0"
