"""
Модели данных для результатов оценки
Содержит оценки отдельных записей, таблицу EER/AUC и профили весов гейта
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

KNOWN_ROW = "Known"
ALL_ROW = "All"


@dataclass(frozen=True)
class ScoreRecord:
    """Оценка одной записи: истинная метка и вероятность подделки"""
    path: str
    y: int
    score: float
    domain: str = ""

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"Метка должна быть 0 или 1, получено {self.y!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Оценка должна лежать в [0, 1], получено {self.score!r}")


@dataclass(frozen=True)
class EvalReport:
    """
    Таблица метрик одной системы

    rows: датасет -> (EER %, AUC %); known / all - средние по строкам
    """
    rows: Dict[str, Tuple[float, float]]
    known: Optional[Tuple[float, float]] = None
    all: Optional[Tuple[float, float]] = None
    system: str = "system"

    def __post_init__(self):
        for name, (eer, auc) in self.rows.items():
            if not 0.0 <= eer <= 100.0 or not 0.0 <= auc <= 100.0:
                raise ValueError(f"Метрики датасета {name} вне диапазона [0, 100]: {eer}, {auc}")

    def table(self) -> List[Tuple[str, float, float]]:
        """Строки таблицы: датасеты в порядке добавления, затем Known и All"""
        lines = [(name, eer, auc) for name, (eer, auc) in self.rows.items()]
        if self.known is not None:
            lines.append((KNOWN_ROW, *self.known))
        if self.all is not None:
            lines.append((ALL_ROW, *self.all))
        return lines


@dataclass(frozen=True)
class GateProfile:
    """
    Средние веса гейта по датасетам

    weights: датасет -> вектор из N средних весов (сумма 1)
    entropy: датасет -> средняя нормированная энтропия H(α) / ln N
    """
    weights: Dict[str, List[float]]
    domains: List[str] = field(default_factory=list)
    entropy: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, vector in self.weights.items():
            if abs(sum(vector) - 1.0) > 1e-6:
                raise ValueError(f"Веса гейта датасета {name} не суммируются в 1: {sum(vector)}")

    @property
    def num_experts(self) -> int:
        return len(next(iter(self.weights.values()))) if self.weights else 0

    def argmax(self, dataset: str) -> int:
        """Индекс эксперта с наибольшим средним весом"""
        vector = self.weights[dataset]
        return max(range(len(vector)), key=lambda index: vector[index])
