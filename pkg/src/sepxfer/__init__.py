"""sepxfer: transfer learning for music source separation at desk scale.

Pretrains a two-headed (embedding + mask) recurrent separation network
with a deep clustering objective, fine-tunes it on small corpora (whole
network or mask layer only), and evaluates with SI-SDR plus one-sided
Wilcoxon significance tests.
"""

__version__ = "0.1.0"

from .signal import AudioSignal, ComplexSpectrogram, StftConfig, istft, resample, sqrt_hann, stft
from .masking import (BinWeights, IdealAssignment, Mask, apply_mask,
                      ideal_binary_assignment, magnitude_weights, reconstruct_sources)
from .network import (ChimeraConfig, ChimeraModel, ForwardOutput, forward, init_model,
                      load_checkpoint, log_magnitude, save_checkpoint, set_trainable)
from .losses import combined_loss, deep_clustering_loss, mask_inference_loss
from .datapipe import (MixSpec, StemCorpus, TrainingExample, draw_coherent,
                       draw_incoherent, load_corpus, make_synthetic_corpus,
                       pitch_shift, time_stretch)
from .training import (AutoClipState, LrSchedule, OptimizerState, RunBudget, adam_step,
                       autoclip_threshold, finetune, pretrain, schedule_step)
from .evaluation import (ComparisonReport, SiSdrResult, compare_systems, evaluate_system,
                         mean_si_sdr, si_sdr, wilcoxon_one_sided)
from .manifest import ExperimentManifest, ManifestError, parse_manifest
