"""Masked multimodal transformer for streaming EMG intent segmentation."""

__version__ = "0.1.0"

from .baseline import LDABaseline
from .masking import MaskConfig, Task, make_masked_example
from .metrics import EvalConfig, MetricsReport, evaluate
from .model import MaskedTransformer, ModelConfig
from .signal_io import Manifest, Recording, load_dataset, load_recording, preprocess
from .stream import StreamConfig, run_stream, stream_recording
from .synth import SynthConfig, generate
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint, train
