"""Rapid IoT device identification from the first seconds of post-boot DNS traffic."""

from .capture import BootTrace, DnsEvent, load_traces, read_pcap, parse_capture, save_traces
from .featurize import featurize, extract_sld, bucket
from .dataset import build_splits, LabelMap, ScalerBounds
from .mlp import ModelConfig, Network, train, metrics
from .bundle import ModelBundle, load_bundle, save_bundle
from .runtime import SessionStore, classify_trace
from .synth import Corpus, DeviceProfile, generate, expected_frequency, load_corpus

__version__ = "0.1.0"
