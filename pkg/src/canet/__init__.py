"""Component-attention networks (CANet, GCN-CANet) for multimodal movement
classification, on a small numpy autodiff core."""

from .data import SyntheticSpec, WindowSet, load_dataset, make_windows, split_by_segment, synthesize_segments
from .fusion import VotePanel, late_fuse_evaluate, majority_vote
from .models import forward, init_canet, init_gcn_canet, load_model, save_model
from .train import TrainConfig, evaluate, fit

__version__ = "0.1.0"
