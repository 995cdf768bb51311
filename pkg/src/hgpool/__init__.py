"""Hierarchical graph pooling with learned sparse structure.

A small numpy/scipy library that stacks graph convolution, information-score
pooling, and sparsemax-based structure learning into a graph classifier,
differentiated end to end by its own reverse-mode tape.
"""

from .autodiff import Tape, Variable, constant, grad_check, parameter
from .data import (Dataset, GraphInstance, SplitSpec, dataset_stats,
                   fetch_dataset, parse_tu_dataset, split, synth_dataset)
from .layers import (KktReport, PoolResult, SparseVariable, StructureLearnParams,
                     ThresholdResult, hop_neighborhood, kkt_check,
                     learned_struct_conv, node_info_score, readout, softmax_row,
                     sparsemax_row, structure_learn, sym_norm_conv, tau_threshold,
                     top_rank_pool)
from .model import (LevelOutput, ModelConfig, ModelParams, cross_entropy_loss,
                    forward, init_params, load_checkpoint, predict,
                    save_checkpoint)
from .tensor import ShapeError, SparseMatrix, as_tensor
from .training import (AdamSettings, ExperimentSummary, OptimState, TrainReport,
                       adam_step, evaluate, run_experiment, train)

__version__ = "0.1.0"
