"""
Модели данных и нейросетевые модули детектора
Содержит манифесты, аудиопредставления, LCNN-экспертов, гейты и смесь экспертов
"""

from .audio import MelConfig, MelSpectrogram, Waveform
from .config import RunConfig, TrainConfig
from .gating import EnhancedGate, StandardGate, combined_embedding, gate_input
from .lcnn import LCNNExpert, init_expert, lcnn_forward, mfm
from .manifest import DatasetManifest, ManifestEntry, SynthCorpusSpec
from .moe import EnsembleAverage, MoEModel, fuse, gate_forward, predict

__all__ = [
    'MelConfig',
    'MelSpectrogram',
    'Waveform',
    'RunConfig',
    'TrainConfig',
    'EnhancedGate',
    'StandardGate',
    'combined_embedding',
    'gate_input',
    'LCNNExpert',
    'init_expert',
    'lcnn_forward',
    'mfm',
    'DatasetManifest',
    'ManifestEntry',
    'SynthCorpusSpec',
    'EnsembleAverage',
    'MoEModel',
    'fuse',
    'gate_forward',
    'predict'
]
