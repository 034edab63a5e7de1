"""La-MAML and its ablations (C-MAML, Sync, ER, La-ER, online SGD) on
continual-learning task streams, with RA/BTI evaluation and an experiment CLI."""

from .harness import ExperimentConfig, load_config, report, run, sweep
from .learners import AlgorithmConfig, Learner, NumericalDivergence, meta_step
from .metrics import AccuracyMatrix, RunRecord, aggregate, bti, retained_accuracy
from .replay import Example, ReplayBuffer
from .streams import StreamSchedule, TaskStream, iterate, load_idx, make_permutations, make_rotations, make_synthetic

__version__ = "0.1.0"
