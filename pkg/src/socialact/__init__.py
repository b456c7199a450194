"""Joint social grouping, action and social-activity recognition on actor feature grids."""
from .attention import GATParams, SelfAttentionParams, gat_forward, grad_check, self_attention_forward
from .config import RunConfig, load_config
from .features import FeatureBatch, SynthConfig, load_corpus, save_corpus, synth_corpus
from .losses import LossWeights, edge_bce_loss, total_loss_group, total_loss_social
from .metrics import EvalReport, SocialPrediction, average_precision, membership_accuracy, mpca, social_accuracy
from .model import ModelConfig, SocialModel, load_checkpoint, save_checkpoint
from .partition import spectral_partition
from .scene import LabelSet, Partition, Scene, majority_vote_groups
from .trainer import EVAL_MODES, TrainConfig, evaluate, infer_social, train

__version__ = "0.1.0"
