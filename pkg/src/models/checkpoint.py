"""
Модели контрольных точек
Обученная модель вместе с метаданными, которые пишутся в JSON-сайдкар
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List

from .lcnn import LCNNExpert
from .moe import MoEModel

FORMAT_VERSION = 1
KIND_EXPERT = "expert"
KIND_MOE = "moe"


@dataclass
class ExpertCheckpoint:
    """Эксперт (или совместно обученная модель) с доменом обучения"""
    model: LCNNExpert
    domain: str
    meta: Dict[str, Any] = field(default_factory=dict)
    epochs_run: int = 0
    best_dev_loss: float = float("inf")
    # строки журнала обучения: epoch, train_loss, dev_loss, lr, stopped
    train_log: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class MoECheckpoint:
    """Смесь экспертов с вариантом гейта и доменами экспертов"""
    model: MoEModel
    meta: Dict[str, Any] = field(default_factory=dict)
    epochs_run: int = 0
    best_dev_loss: float = float("inf")
    train_log: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def variant(self) -> str:
        return self.model.variant

    @property
    def domains(self) -> List[str]:
        return list(self.model.domains)
