from .base import (NEG_INF, CountingView, TemperedView, enumerate_support, log_softmax,
                   sample_sequences, sequence_logprob, step_logprobs)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .neural import (NeuralJointModel, TrainConfig, TrainingError, grad_check, joint_loss,
                     joint_loss_grad, train_joint)
from .tabular import LogitTabularModel, TabularJointModel
