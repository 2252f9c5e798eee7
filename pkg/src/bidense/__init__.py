"""Bi-dense convolutional super-resolution engine.

A self-contained numpy implementation: reverse-mode autodiff over 4-D
tensors, the bi-dense network family (deconvolution and sub-pixel
upsamplers plus two structural ablations), MATLAB-convention bicubic
degradation, the Adam training recipe, and the Y-channel PSNR/SSIM
evaluation protocol.
"""

from .autograd import (ConvParams, ShapeError, Tape, Tensor, add,
                       concat_channels, conv2d, conv2d_transpose, l1_loss,
                       pixel_shuffle, relu, sum_all)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DatasetIndex, SamplePair, augment, batch_to_tensors,
                   bicubic_resize, dihedral_transform, load_image, load_index,
                   prepare_dataset, sample_batch, save_image)
from .metrics import (EvalReport, bicubic_upscaler, evaluate,
                      evaluate_upscaler, network_upscaler, psnr, rgb_to_y,
                      ssim, write_report_csv)
from .model import (IntraDenseBlock, ModelConfig, Network, Upsampler, Variant,
                    audit_shapes, base_config, build_ablation, build_network,
                    count_params, forward, inter_forward, intra_block_forward,
                    param_breakdown, wo_comp_config)
from .train import (AdamState, TrainResult, TrainSchedule, TrainingDiverged,
                    adam_step, lr_at, train, training_patch_psnr)

__version__ = "0.1.0"
