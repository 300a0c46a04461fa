"""Unsupervised cross-domain motion retargeting through a joint keypoint
bottleneck: shared landmark extraction with affine-invariant domain
confusion, silhouette generation, texture refinement, and keypoint-level
editing."""

from .config import (AugmentRanges, IngestConfig, LossWeights, ModelConfig,
                     RunConfig, TrainConfig, load_run_config)
from .data import (Batch, VideoPairDataset, load_pair, mask_from_external,
                   mask_from_threshold, register_mask_provider,
                   register_video_decoder, sample_batch)
from .infer import (RetargetRequest, edit_frame, render_from_keypoints,
                    retarget, retarget_frames, synchronize)
from .keypoints import (apply_affine, expect_keypoints, invert_affine,
                        keypoints_from_json, keypoints_to_json,
                        project_keypoints, sample_random_affine,
                        sample_random_affines, spatial_softmax, warp_frame)
from .losses import (ConvFeatures, IdentityFeatures, LinearFeatures,
                     combine_stage1, combine_stage2, loss_discriminator,
                     loss_domain_confusion, loss_equivariance, loss_l1,
                     loss_lpips, loss_seg, loss_separation, loss_silhouette,
                     loss_temporal, make_extractor)
from .metrics import (DisplacementReport, distribution_distance,
                      frechet_distance, reconstruction_report,
                      temporal_displacement)
from .models import (JokrModels, KeypointDiscriminator, KeypointExtractor,
                     LearnedAffine, RefinerPair, SilhouetteGeneratorPair,
                     build_models, load_checkpoint, save_checkpoint)
from .train import Trainer, resume, total_stage1, total_stage2

__version__ = "0.1.0"
