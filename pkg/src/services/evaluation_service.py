"""
Сервис оценки
Оценки записей, EER/AUC, агрегаты Known/All и профили весов гейта
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.stats import rankdata

from ..models.lcnn import LCNNExpert
from ..models.manifest import LABEL_FAKE, LABEL_REAL, DatasetManifest, ManifestEntry
from ..models.moe import EnsembleAverage, MoEModel, predict
from ..models.report import EvalReport, GateProfile, ScoreRecord
from .frontend_service import FeatureExtractor
from .logging_service import DetectorLogger

Detector = Union[MoEModel, LCNNExpert, EnsembleAverage]

SCORING_BATCH = 64


def _scores_and_labels(records: Sequence[ScoreRecord]) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.array([r.score for r in records], dtype=np.float64)
    labels = np.array([r.y for r in records], dtype=np.int64)
    if not np.any(labels == LABEL_FAKE) or not np.any(labels == LABEL_REAL):
        raise ValueError("Для EER/AUC нужны записи обоих классов")
    return scores, labels


def compute_eer(records: Sequence[ScoreRecord]) -> float:
    """
    Равновероятная ошибка (EER), подделка - положительный класс

    Рабочие точки строятся на каждом различном значении оценки (решение
    "подделка" при score >= t) и в точке "все отклонены". EER берется в
    точке пересечения FNR и FPR с линейной интерполяцией между соседними
    рабочими точками.

    Args:
        records: Оценки записей обоих классов

    Returns:
        EER в [0, 1]

    Raises:
        ValueError: Если представлен только один класс
    """
    scores, labels = _scores_and_labels(records)
    fake = np.sort(scores[labels == LABEL_FAKE])
    real = np.sort(scores[labels == LABEL_REAL])

    thresholds = np.append(np.unique(scores), np.inf)
    fpr = (len(real) - np.searchsorted(real, thresholds, side="left")) / len(real)
    fnr = np.searchsorted(fake, thresholds, side="left") / len(fake)
    diff = fnr - fpr

    # diff возрастает от -1 (порог ниже всех оценок) до 1 (все отклонены)
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(fpr[k])
    d0, d1 = diff[k - 1], diff[k]
    lam = d0 / (d0 - d1)
    return float(fpr[k - 1] + lam * (fpr[k] - fpr[k - 1]))


def compute_auc(records: Sequence[ScoreRecord]) -> float:
    """
    Площадь под ROC-кривой через статистику Манна-Уитни

    Вероятность того, что случайная подделка получит оценку выше случайной
    настоящей записи; ничьи считаются за половину

    Raises:
        ValueError: Если представлен только один класс
    """
    scores, labels = _scores_and_labels(records)
    ranks = rankdata(scores, method="average")
    n_fake = int(np.sum(labels == LABEL_FAKE))
    n_real = len(labels) - n_fake
    u_statistic = ranks[labels == LABEL_FAKE].sum() - n_fake * (n_fake + 1) / 2.0
    return float(u_statistic / (n_fake * n_real))


def aggregate(
    rows: Mapping[str, Tuple[float, float]],
    known_set: Sequence[str] = (),
    system: str = "system",
) -> EvalReport:
    """
    Таблица с агрегатами: Known - среднее по известным датасетам, All - по всем

    Args:
        rows: датасет -> (EER %, AUC %)
        known_set: Имена известных датасетов; пустой набор - строка Known не строится
        system: Имя системы

    Returns:
        EvalReport

    Raises:
        ValueError: Если таблица пуста или известный датасет отсутствует в ней
    """
    if not rows:
        raise ValueError("Нет строк для агрегирования")
    missing = [name for name in known_set if name not in rows]
    if missing:
        raise ValueError(f"Известные датасеты отсутствуют в таблице: {missing}")

    def _mean(names: Sequence[str]) -> Tuple[float, float]:
        return (
            float(np.mean([rows[name][0] for name in names])),
            float(np.mean([rows[name][1] for name in names])),
        )

    known = _mean(list(known_set)) if known_set else None
    return EvalReport(rows=dict(rows), known=known, all=_mean(list(rows)), system=system)


def normalized_entropy(alpha: torch.Tensor) -> torch.Tensor:
    """H(α) / ln N для каждой строки: 0 - один эксперт, 1 - равномерно"""
    num_experts = alpha.shape[-1]
    entropy = -(alpha * torch.log(alpha.clamp_min(1e-30))).sum(dim=-1)
    return entropy / math.log(num_experts)


@dataclass
class ScoringResult:
    """Результат оценки разбиения: оценки, веса гейта (для MoE) и ошибки файлов"""
    records: List[ScoreRecord] = field(default_factory=list)
    alphas: Optional[torch.Tensor] = None
    failures: List[Tuple[str, str]] = field(default_factory=list)


class EvaluationService:
    """
    Сервис оценки детекторов

    Оценивает эксперта, ансамбль или смесь экспертов на разбиении манифеста
    в режиме eval; ошибки отдельных файлов собираются, оценка продолжается
    """

    def __init__(self, logger: logging.Logger, features: FeatureExtractor):
        """
        Args:
            logger: Логгер для записи событий
            features: Извлечение спектрограмм по записям манифеста
        """
        self.logger = logger
        self.events = DetectorLogger(logger)
        self.features = features

    def score_dataset(
        self, detector: Detector, manifest: DatasetManifest, split: str = "eval"
    ) -> ScoringResult:
        """
        Оценки всех записей разбиения в порядке манифеста

        Args:
            detector: MoEModel, LCNNExpert или EnsembleAverage
            manifest: Манифест
            split: Разбиение

        Returns:
            ScoringResult; alphas заполнены только для MoE
        """
        if not isinstance(detector, (MoEModel, LCNNExpert, EnsembleAverage)):
            raise ValueError(f"Неподдерживаемый детектор: {type(detector).__name__}")

        result = ScoringResult()
        usable: List[ManifestEntry] = []
        for entry in manifest.split(split):
            try:
                self.features.features(entry.path)
                usable.append(entry)
            except (FileNotFoundError, ValueError) as e:
                self.logger.warning(f"⚠️ Запись пропущена: {entry.path}: {e}")
                result.failures.append((entry.path, str(e)))

        detector.eval()
        alphas: List[torch.Tensor] = []
        with torch.no_grad():
            for start in range(0, len(usable), SCORING_BATCH):
                chunk = usable[start:start + SCORING_BATCH]
                mel = self.features.batch([entry.path for entry in chunk])
                y_hat, alpha = self._forward(detector, mel)
                if alpha is not None:
                    alphas.append(alpha)
                for entry, score in zip(chunk, y_hat.tolist()):
                    result.records.append(
                        ScoreRecord(path=entry.path, y=entry.label, score=score, domain=entry.domain)
                    )

        if isinstance(detector, MoEModel):
            result.alphas = torch.cat(alphas, dim=0) if alphas else torch.empty(0, detector.num_experts)

        self.logger.debug(
            f"🔎 {manifest.name}/{split}: {len(result.records)} оценок, "
            f"{len(result.failures)} ошибок"
        )
        return result

    @staticmethod
    def _forward(detector: Detector, mel: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        if isinstance(detector, MoEModel):
            y_hat, _, alpha = detector(mel)
            return y_hat, alpha
        if isinstance(detector, EnsembleAverage):
            return detector(mel), None
        logits, _ = detector(mel)
        return predict(logits), None

    def evaluate(
        self,
        detector: Detector,
        datasets: Mapping[str, DatasetManifest],
        known_set: Sequence[str] = (),
        split: str = "eval",
        system: str = "system",
    ) -> Tuple[EvalReport, List[ScoreRecord], List[Tuple[str, str]]]:
        """
        Таблица EER/AUC системы по датасетам

        Args:
            detector: Детектор
            datasets: имя датасета -> манифест
            known_set: Известные датасеты для строки Known
            split: Разбиение
            system: Имя системы

        Returns:
            (отчет, все оценки, ошибки файлов)
        """
        rows: Dict[str, Tuple[float, float]] = {}
        records: List[ScoreRecord] = []
        failures: List[Tuple[str, str]] = []

        for name, manifest in datasets.items():
            result = self.score_dataset(detector, manifest, split)
            failures.extend(result.failures)
            records.extend(result.records)
            try:
                rows[name] = (
                    100.0 * compute_eer(result.records),
                    100.0 * compute_auc(result.records),
                )
            except ValueError as e:
                self.events.log_error_with_context(e, f"оценке датасета {name}")
                failures.append((name, str(e)))

        known = [name for name in known_set if name in rows]
        report = aggregate(rows, known, system)
        self.events.log_metrics(system, {name: (eer, auc) for name, eer, auc in report.table()})
        return report, records, failures

    def gate_profile(
        self,
        model: Detector,
        manifests: Mapping[str, DatasetManifest],
        split: str = "eval",
    ) -> GateProfile:
        """
        Средние веса гейта и нормированная энтропия по датасетам

        Args:
            model: Смесь экспертов
            manifests: имя датасета -> манифест
            split: Разбиение

        Returns:
            GateProfile

        Raises:
            ValueError: Если модель не MoE или в датасете нет оценимых записей
        """
        if not isinstance(model, MoEModel):
            raise ValueError(
                f"Профиль гейта строится только для MoE, получено {type(model).__name__}"
            )

        weights: Dict[str, List[float]] = {}
        entropy: Dict[str, float] = {}
        for name, manifest in manifests.items():
            result = self.score_dataset(model, manifest, split)
            if result.alphas is None or result.alphas.shape[0] == 0:
                raise ValueError(f"Датасет {name}: нет записей для профиля гейта в {split}")
            alphas = result.alphas.double()
            weights[name] = alphas.mean(dim=0).tolist()
            entropy[name] = float(normalized_entropy(alphas).mean())
            self.logger.info(
                f"🎛️ {name}: " + " ".join(f"{w:.3f}" for w in weights[name])
                + f" (энтропия {entropy[name]:.3f})"
            )

        return GateProfile(weights=weights, domains=list(model.domains), entropy=entropy)
