"""Joint generative/predictive sequence models with advantage-tilted sampling without replacement."""

from .baselines import ReinventConfig, best_of_n, reinvent_finetune, reinvent_loss
from .jsi import JsiConfig, JsiTrace, ScoreFn, jsi_sample, oracle_score_fn, predictor_score_fn
from .models import NeuralJointModel, TabularJointModel, TrainConfig, train_joint
from .objectives import (BudgetExhausted, BudgetLedger, Oracle, SyntheticLandscape, ZScoreStats,
                         aggregate_score, hit_criterion)
from .sbs import sbs_sample
from .seqcore import ConfigError, LabeledExample, SequenceError, Vocabulary, make_rng
from .tilt_trie import TiltedModelView

__version__ = "0.1.0"
