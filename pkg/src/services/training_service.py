"""
Сервис обучения
Предобучение экспертов, совместно обученная базовая модель и совместное
дообучение смеси экспертов (предобученные эксперты + случайный гейт)
"""

import copy
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..models.checkpoint import ExpertCheckpoint, MoECheckpoint
from ..models.config import TrainConfig
from ..models.gating import VARIANTS, build_gate
from ..models.lcnn import ARCH_TAG, LCNNExpert, init_expert
from ..models.manifest import DatasetManifest, ManifestEntry
from ..models.moe import build_moe
from .corpus_service import balanced_batches, pool_manifests
from .frontend_service import FeatureExtractor
from .logging_service import DetectorLogger

# логиты модели по батчу спектрограмм
LogitsFn = Callable[[nn.Module, torch.Tensor], torch.Tensor]


def cosine_lr(t: int, T: int, lr0: float) -> float:
    """
    Косинусный отжиг скорости обучения до нуля

    lr = 0.5 * lr0 * (1 + cos(pi * t / T))

    Args:
        t: Номер эпохи (с 0)
        T: Общее число эпох
        lr0: Начальная скорость

    Returns:
        Скорость обучения на эпохе t

    Raises:
        ValueError: Если t вне [0, T]
    """
    if T < 1:
        raise ValueError(f"Число эпох должно быть положительным, получено {T}")
    if t < 0 or t > T:
        raise ValueError(f"Номер эпохи {t} вне диапазона [0, {T}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / T))


@dataclass(frozen=True)
class TrainState:
    """
    Состояние ранней остановки

    counter - число эпох без улучшения dev-потери;
    snapshot - параметры модели на лучшей эпохе
    """
    epoch: int = 0
    best_dev_loss: float = math.inf
    best_epoch: int = 0
    counter: int = 0
    rng_state: Optional[torch.Tensor] = None
    snapshot: Optional[Dict[str, torch.Tensor]] = None


def early_stop_update(
    state: TrainState,
    dev_loss: float,
    patience: int,
    params: Optional[Mapping[str, torch.Tensor]] = None,
) -> Tuple[TrainState, bool]:
    """
    Обновление состояния ранней остановки после эпохи

    Строгое улучшение (dev_loss < best) сбрасывает счетчик и сохраняет копию
    параметров, иначе счетчик увеличивается. Остановка, когда счетчик
    достигает patience.

    Args:
        state: Текущее состояние
        dev_loss: Потеря на dev после эпохи
        patience: Терпение в эпохах
        params: Параметры модели (state_dict) для снимка

    Returns:
        (новое состояние, нужно ли остановиться)

    Raises:
        ValueError: Если dev_loss не конечна
    """
    if not math.isfinite(dev_loss):
        raise ValueError(f"Потеря на dev должна быть конечной, получено {dev_loss}")

    epoch = state.epoch + 1
    rng_state = torch.get_rng_state()
    if dev_loss < state.best_dev_loss:
        snapshot = None
        if params is not None:
            snapshot = {name: value.detach().clone() for name, value in params.items()}
        new_state = replace(
            state,
            epoch=epoch,
            best_dev_loss=dev_loss,
            best_epoch=epoch,
            counter=0,
            rng_state=rng_state,
            snapshot=snapshot,
        )
    else:
        new_state = replace(state, epoch=epoch, counter=state.counter + 1, rng_state=rng_state)
    return new_state, new_state.counter >= patience


def _expert_logits(model: nn.Module, mel: torch.Tensor) -> torch.Tensor:
    return model(mel)[0]


def _moe_logits(model: nn.Module, mel: torch.Tensor) -> torch.Tensor:
    return model(mel)[1]


class TrainingService:
    """
    Сервис обучения моделей

    Все стадии используют один режим: сбалансированные батчи, кросс-энтропия
    по логитам, AdamW с косинусным отжигом по эпохам и ранняя остановка по
    dev-потере с возвратом лучшего снимка
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

    # ------------------------------------------------------------------
    # Стадии
    # ------------------------------------------------------------------

    def train_expert(
        self, manifest: DatasetManifest, cfg: TrainConfig, domain: Optional[str] = None
    ) -> ExpertCheckpoint:
        """
        Предобучение LCNN-эксперта на одном домене

        Args:
            manifest: Манифест домена (train и dev с обоими классами)
            cfg: Параметры обучения
            domain: Метка домена эксперта (по умолчанию единственный домен манифеста)

        Returns:
            Контрольная точка с лучшим по dev-потере снимком

        Raises:
            ValueError: Если в train или dev нет одного из классов
        """
        manifest.require_both_classes(("train", "dev"))
        if domain is None:
            domains = manifest.domains()
            domain = domains[0] if len(domains) == 1 else manifest.name

        self.events.log_stage("train-expert", f"домен {domain}, {len(manifest)} записей")
        return self._train_single(manifest, cfg, domain, stage="expert")

    def train_joint_baseline(
        self, manifests: Sequence[DatasetManifest], cfg: TrainConfig
    ) -> ExpertCheckpoint:
        """
        Совместно обученная базовая модель: один LCNN на объединении доменов

        Метки доменов сохраняются только для анализа; дальше обучение
        совпадает с train_expert

        Args:
            manifests: Манифесты доменов (хотя бы один)
            cfg: Параметры обучения

        Returns:
            Контрольная точка с доменом "joint"
        """
        if not manifests:
            raise ValueError("Нужен хотя бы один манифест для совместного обучения")

        pooled = pool_manifests(manifests, equalize_domains=False, seed=cfg.seed, name="joint")
        pooled.require_both_classes(("train", "dev"))
        self.events.log_stage(
            "train-joint", f"{len(manifests)} манифестов, {len(pooled)} записей"
        )
        checkpoint = self._train_single(pooled, cfg, "joint", stage="joint")
        checkpoint.meta["source_domains"] = pooled.domains()
        return checkpoint

    def train_moe(
        self,
        expert_ckpts: Sequence[ExpertCheckpoint],
        variant: str,
        manifests: Sequence[DatasetManifest],
        cfg: TrainConfig,
    ) -> MoECheckpoint:
        """
        Совместное обучение смеси экспертов

        Эксперты копируются из контрольных точек (исходные не изменяются),
        гейт инициализируется случайно от сида; обучаются все параметры.

        Args:
            expert_ckpts: N >= 2 предобученных экспертов
            variant: "standard" или "enhanced"
            manifests: Манифесты доменов
            cfg: Параметры обучения (размер батча по умолчанию 64)

        Returns:
            Контрольная точка MoE с лучшим по dev-потере снимком

        Raises:
            ValueError: Если экспертов меньше двух, они несовместимы или вариант неизвестен
        """
        if variant not in VARIANTS:
            raise ValueError(f"Неизвестный вариант MoE: {variant!r}")
        if len(expert_ckpts) < 2:
            raise ValueError("Смесь экспертов требует не менее двух экспертов")
        for index, ckpt in enumerate(expert_ckpts):
            if not isinstance(ckpt.model, LCNNExpert):
                raise ValueError(f"Контрольная точка {index + 1} не содержит LCNN-эксперта")
            tag = ckpt.meta.get("arch_tag", ARCH_TAG)
            if tag != ARCH_TAG:
                raise ValueError(
                    f"Эксперт {index + 1} имеет архитектуру {tag!r}, ожидается {ARCH_TAG!r}"
                )
        if not manifests:
            raise ValueError("Нужен хотя бы один манифест для обучения MoE")

        domains = [ckpt.domain for ckpt in expert_ckpts]
        if len(set(domains)) != len(domains):
            self.logger.warning(f"⚠️ Домены экспертов повторяются: {domains}")

        pooled = pool_manifests(
            manifests, equalize_domains=cfg.equalize_domains, seed=cfg.seed, name="moe"
        )
        pooled.require_both_classes(("train", "dev"))

        self.events.log_stage(
            f"train-moe ({variant})",
            f"N={len(expert_ckpts)}, {len(pooled)} записей, эксперты {domains}",
        )

        self._seed(cfg.seed)
        experts = [copy.deepcopy(ckpt.model).float() for ckpt in expert_ckpts]
        gate = build_gate(variant, len(experts), seed=cfg.seed)
        model = build_moe(experts, domains, variant, gate)

        state, log_rows = self._fit(
            model, _moe_logits, pooled, cfg, cfg.batch_size_for("moe"), tag=f"moe-{variant}",
            train_mode=lambda m: self._moe_train_mode(m, cfg),
        )

        return MoECheckpoint(
            model=model,
            meta=self._meta("moe", cfg, pooled, variant=variant),
            epochs_run=len(log_rows),
            best_dev_loss=state.best_dev_loss,
            train_log=log_rows,
        )

    # ------------------------------------------------------------------
    # Общий цикл
    # ------------------------------------------------------------------

    def _train_single(
        self, manifest: DatasetManifest, cfg: TrainConfig, domain: str, stage: str
    ) -> ExpertCheckpoint:
        self._seed(cfg.seed)
        model = init_expert(cfg.seed)
        state, log_rows = self._fit(
            model, _expert_logits, manifest, cfg, cfg.batch_size_for(stage), tag=domain
        )
        return ExpertCheckpoint(
            model=model,
            domain=domain,
            meta=self._meta(stage, cfg, manifest),
            epochs_run=len(log_rows),
            best_dev_loss=state.best_dev_loss,
            train_log=log_rows,
        )

    def _fit(
        self,
        model: nn.Module,
        logits_fn: LogitsFn,
        manifest: DatasetManifest,
        cfg: TrainConfig,
        batch_size: int,
        tag: str,
        train_mode: Optional[Callable[[nn.Module], None]] = None,
    ) -> Tuple[TrainState, List[Dict[str, Any]]]:
        """
        Цикл обучения с ранней остановкой

        По завершении модель содержит параметры лучшей эпохи и находится в режиме eval

        Returns:
            (итоговое состояние, строки журнала по эпохам)
        """
        optimizer = torch.optim.AdamW(
            model.parameters(), lr=cfg.lr0, betas=cfg.betas, weight_decay=cfg.weight_decay
        )
        state = TrainState()
        log_rows: List[Dict[str, Any]] = []

        for epoch in range(cfg.epochs):
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
            for group in optimizer.param_groups:
                group["lr"] = lr

            if train_mode is None:
                model.train()
            else:
                train_mode(model)

            losses = []
            for batch in balanced_batches(manifest, "train", batch_size, seed=cfg.seed, epoch=epoch):
                mel, labels = self._tensors(batch)
                optimizer.zero_grad()
                loss = F.cross_entropy(logits_fn(model, mel), labels)
                loss.backward()
                optimizer.step()
                losses.append(loss.item())

            train_loss = sum(losses) / len(losses)
            dev_loss = self.dev_loss(model, logits_fn, manifest, batch_size)
            state, stop = early_stop_update(state, dev_loss, cfg.patience, model.state_dict())

            improved = state.best_epoch == state.epoch
            self.events.log_epoch(tag, epoch + 1, train_loss, dev_loss, lr, improved)
            log_rows.append(
                {
                    "epoch": epoch + 1,
                    "train_loss": train_loss,
                    "dev_loss": dev_loss,
                    "lr": lr,
                    "stopped": stop,
                }
            )
            if stop:
                self.logger.info(
                    f"⏹️ [{tag}] ранняя остановка после эпохи {epoch + 1}, "
                    f"лучшая эпоха {state.best_epoch} (dev={state.best_dev_loss:.4f})"
                )
                break

        if state.snapshot is not None:
            model.load_state_dict(state.snapshot)
        model.eval()
        return state, log_rows

    def dev_loss(
        self,
        model: nn.Module,
        logits_fn: LogitsFn,
        manifest: DatasetManifest,
        batch_size: int,
    ) -> float:
        """Средняя кросс-энтропия на dev в режиме eval"""
        entries = manifest.split("dev")
        if not entries:
            raise ValueError(f"В манифесте {manifest.name} нет разбиения dev")

        model.eval()
        total = 0.0
        with torch.no_grad():
            for start in range(0, len(entries), batch_size):
                mel, labels = self._tensors(entries[start:start + batch_size])
                total += F.cross_entropy(logits_fn(model, mel), labels, reduction="sum").item()
        return total / len(entries)

    def _tensors(self, batch: Sequence[ManifestEntry]) -> Tuple[torch.Tensor, torch.Tensor]:
        mel = self.features.batch([entry.path for entry in batch])
        labels = torch.tensor([entry.label for entry in batch], dtype=torch.long)
        return mel, labels

    @staticmethod
    def _moe_train_mode(model: nn.Module, cfg: TrainConfig):
        model.train()
        if not cfg.update_expert_bn:
            for module in model.experts.modules():
                if isinstance(module, nn.modules.batchnorm._BatchNorm):
                    module.eval()

    @staticmethod
    def _seed(seed: int):
        torch.manual_seed(seed)
        torch.use_deterministic_algorithms(True)

    def _meta(
        self, stage: str, cfg: TrainConfig, manifest: DatasetManifest, **extra: Any
    ) -> Dict[str, Any]:
        meta = {
            "stage": stage,
            "seed": cfg.seed,
            "manifest": manifest.name,
            "train_config": cfg.to_dict(),
            "batch_size": cfg.batch_size_for(stage),
            "mel_config": self.features.mel_config.to_dict(),
        }
        meta.update(extra)
        return meta
