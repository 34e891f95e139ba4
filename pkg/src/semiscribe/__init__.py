"""semiscribe: desk-scale semi-supervised sequence transcription.

A supervised teacher with a joint CTC + attention objective pseudo-labels
unlabeled utterances through LM-fused beam search; a noisy student then
retrains on true plus pseudo labels under an alpha-weighted combined loss,
iterated across generations.
"""

from .data import (DatasetSplit, ManifestError, ToyCorpusConfig, Utterance,
                   ValidationError, Vocabulary, build_vocabulary, filter_by_duration,
                   generate_toy_corpus, load_manifest, normalize_transcript,
                   write_manifest)
from .decode import (Hypothesis, NgramLM, beam_search, greedy_ctc_decode, lm_score,
                     load_ngram_lm, save_ngram_lm, train_ngram_lm)
from .eval import (AblationRow, AlphaSweepResult, WERReport, ablation_run,
                   alpha_sweep, word_error_rate)
from .features import (AugmentationPolicy, RngStream, apply_noisy_augmentation,
                       default_augmentation_policy, disabled_augmentation_policy,
                       extract_features, freq_mask, speed_perturb, time_mask)
from .losses import (BatchItem, CTCInfeasibleError, LossBreakdown, batch_loss,
                     ctc_loss, multitask_loss, s2s_loss, unified_loss)
from .model import (DecoderState, ModelConfig, TranscriberModel, ctc_log_probs,
                    decoder_step, encode, forward_teacher_forced, init_model,
                    load_checkpoint, param_count, save_checkpoint)
from .selftrain import (GenerationReport, PseudoLabelSet, TrainConfig, pseudo_label,
                        self_training_iterations, train_semi, train_supervised)

__version__ = "0.1.0"
