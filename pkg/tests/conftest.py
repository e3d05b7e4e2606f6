"""
Общие фикстуры тестов: маленький синтетический корпус, логгер, сиды моделей
"""

import logging
from pathlib import Path
from typing import List

import numpy as np
import pytest
import soundfile as sf
import torch

from src.models.audio import SAMPLE_RATE
from src.models.config import TrainConfig
from src.models.gating import build_gate
from src.models.lcnn import init_expert
from src.models.manifest import DatasetManifest, ManifestEntry, SynthCorpusSpec
from src.models.moe import MoEModel
from src.services.frontend_service import FeatureExtractor
from src.utils.data_generator import synth_corpus
from src.utils.file_handler import FileHandler

TINY_SPEC = SynthCorpusSpec(
    num_domains=2, clips_per_domain_per_class=8, clip_seconds=0.5, seed=3, num_unseen_domains=1
)


@pytest.fixture
def logger() -> logging.Logger:
    return logging.getLogger("moe_detector.tests")


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> Path:
    """2 известных домена + 1 неизвестный, по 8 клипов на класс длиной 0.5 с"""
    out_dir = tmp_path_factory.mktemp("tiny_corpus")
    synth_corpus(TINY_SPEC, out_dir, logging.getLogger("moe_detector.tests"))
    return out_dir


@pytest.fixture
def file_handler(logger) -> FileHandler:
    return FileHandler(logger)


@pytest.fixture
def features(logger, tiny_corpus) -> FeatureExtractor:
    return FeatureExtractor(logger, data_root=str(tiny_corpus))


@pytest.fixture
def domain_manifests(file_handler, tiny_corpus) -> List[DatasetManifest]:
    return [
        file_handler.load_manifest(tiny_corpus / f"manifest_synth_{k}.csv")
        for k in range(TINY_SPEC.num_domains)
    ]


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, patience=5, batch_size=4, seed=0)


def write_wav(path: Path, samples: np.ndarray, rate: int = SAMPLE_RATE, subtype: str = "FLOAT") -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), samples, rate, subtype=subtype)
    return path


def make_entries(n_real: int, n_fake: int, domain: str = "d0", split: str = "train") -> List[ManifestEntry]:
    entries = [ManifestEntry(f"{domain}/real_{i:03d}.wav", 0, domain, split) for i in range(n_real)]
    entries += [ManifestEntry(f"{domain}/fake_{i:03d}.wav", 1, domain, split) for i in range(n_fake)]
    return entries


def make_moe(variant: str, num_experts: int = 4, seed: int = 0, dtype=torch.float32) -> MoEModel:
    experts = [init_expert(seed + i) for i in range(num_experts)]
    gate = build_gate(variant, num_experts, seed=seed)
    model = MoEModel(experts, gate, [f"d{i}" for i in range(num_experts)]).to(dtype)
    model.eval()
    return model
