"""Hand tracking, motion features and recurrent classification of hand gestures."""
from .core import (DEFAULT_LABELS, DEFAULT_SKELETON, BoundingBox, ConfigError,
                   FrameObservation, GestureLabel, GestureTraceError, HandDetection, HandTrace,
                   InvalidInputError, NumericInputError, SchemaError, SkeletonSpec,
                   StreamOrderError, TraceState, WindowUnderflowError, normalize_detection,
                   validate_skeleton)
from .dataset import (AnnotatedSegment, AugmentationConfig, ClipDataset, ClipResampler,
                      LabelingThresholds, Recording, SequenceClip, TraceFeatures,
                      generate_clips, label_window, overlap_ratios, resample_clip,
                      split_dataset, split_recordings, timestep_set)
from .estimator import TraceSeqClassifier
from .features import (BOX, MOTION, MotionFeatureSequence, box_sequence, feature_width,
                       motion_sequence, window_sequence)
from .metrics import MetricsReport, metrics
from .network import (NetConfig, TraceSeqModel, forward, init_network, load_model,
                      loss_and_gradients, save_model, train)
from .online import EventTrigger, GestureEvent, TriggerConfig, predict_stream
from .synthetic import CorpusConfig, GestureScript, NoiseConfig, Scene, synth_corpus, synth_scene
from .tracking import MatchWeights, TraceEvents, TraceStore, associate, iou, match_loss, track

__version__ = "0.1.0"
