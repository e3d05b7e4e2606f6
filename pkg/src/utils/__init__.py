"""
Утилиты детектора
Файловые операции и генерация синтетического корпуса
"""

from .file_handler import FileHandler
from .data_generator import SynthCorpusGenerator, synth_corpus

__all__ = [
    'FileHandler',
    'SynthCorpusGenerator',
    'synth_corpus'
]
