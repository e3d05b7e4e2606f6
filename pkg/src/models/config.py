"""
Конфигурация обучения и запусков
Значения по умолчанию совпадают с рецептом обучения экспертов и смеси экспертов
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .audio import MelConfig

DATA_ROOT_ENV = "MOE_DATA_ROOT"

# Размер батча по умолчанию для каждой стадии обучения
STAGE_BATCH_SIZES = {
    "expert": 128,
    "joint": 128,
    "moe": 64,
}


@dataclass(frozen=True)
class TrainConfig:
    """
    Параметры обучения

    batch_size=None означает размер по умолчанию для стадии (128 для экспертов
    и совместной модели, 64 для смеси экспертов)
    """
    epochs: int = 100
    patience: int = 20
    batch_size: Optional[int] = None
    lr0: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    seed: int = 0
    loss: str = "cross_entropy"
    # Продолжать обновлять статистику BN экспертов при совместном обучении MoE
    update_expert_bn: bool = True
    # Равная вероятность доменов при объединении манифестов
    equalize_domains: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("Число эпох должно быть не меньше 1")

        if self.patience < 1:
            raise ValueError("Терпение ранней остановки должно быть не меньше 1")

        if self.lr0 <= 0:
            raise ValueError("Начальная скорость обучения должна быть положительной")

        if self.batch_size is not None and (self.batch_size < 2 or self.batch_size % 2):
            raise ValueError("Размер батча должен быть четным и не меньше 2")

        if self.loss != "cross_entropy":
            raise ValueError(f"Поддерживается только cross_entropy, получено {self.loss!r}")

        object.__setattr__(self, "betas", tuple(self.betas))

    def batch_size_for(self, stage: str) -> int:
        """
        Размер батча для стадии обучения

        Args:
            stage: expert / joint / moe

        Returns:
            Явно заданный размер или размер стадии по умолчанию
        """
        if stage not in STAGE_BATCH_SIZES:
            raise ValueError(f"Неизвестная стадия обучения: {stage!r}")
        return self.batch_size if self.batch_size is not None else STAGE_BATCH_SIZES[stage]

    def to_dict(self) -> dict:
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data


@dataclass(frozen=True)
class RunConfig:
    """
    Полностью разрешенная конфигурация запуска

    Слои: встроенные значения < JSON-файл конфигурации < переменная окружения
    MOE_DATA_ROOT (только data_root) < явные флаги командной строки
    """
    seed: int = 0
    data_root: Optional[str] = None
    output_dir: Optional[str] = None
    known: List[str] = field(default_factory=list)
    mel: MelConfig = field(default_factory=MelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def resolve(
        cls,
        config_file: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
        environ: Optional[Dict[str, str]] = None,
    ) -> "RunConfig":
        """
        Сборка конфигурации из всех слоев

        Args:
            config_file: Путь к JSON-файлу конфигурации
            overrides: Явно переданные флаги; ключи вида "seed", "mel.n_mels",
                "train.epochs"; значения None игнорируются
            environ: Окружение (по умолчанию os.environ)

        Returns:
            Итоговая конфигурация

        Raises:
            FileNotFoundError: Если файл конфигурации не найден
            ValueError: Если в конфигурации неизвестные ключи или неверные значения
        """
        config = cls()

        if config_file:
            path = Path(config_file)
            if not path.exists():
                raise FileNotFoundError(f"Файл конфигурации не найден: {path}")
            with open(path, "r", encoding="utf-8") as file:
                config = config._merged(json.load(file))

        environ = os.environ if environ is None else environ
        if environ.get(DATA_ROOT_ENV):
            config = replace(config, data_root=environ[DATA_ROOT_ENV])

        nested: Dict[str, Any] = {}
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            target = nested.setdefault(section, {}) if section else nested
            target[name] = value
        return config._merged(nested)

    def _merged(self, data: Dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValueError("Конфигурация должна быть JSON-объектом")

        top_level = {f.name for f in fields(self)}
        unknown = set(data) - top_level
        if unknown:
            raise ValueError(f"Неизвестные ключи конфигурации: {sorted(unknown)}")

        changes: Dict[str, Any] = {}
        for key, value in data.items():
            if key == "mel":
                changes["mel"] = _merge_section(self.mel, value, "mel")
            elif key == "train":
                changes["train"] = _merge_section(self.train, value, "train")
            elif key == "known":
                changes["known"] = list(value)
            else:
                changes[key] = value

        merged = replace(self, **changes)
        # вся случайность идет от одного сида
        return replace(merged, train=replace(merged.train, seed=merged.seed))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data_root": self.data_root,
            "output_dir": self.output_dir,
            "known": list(self.known),
            "mel": self.mel.to_dict(),
            "train": self.train.to_dict(),
        }


def _merge_section(current: Any, values: Any, section: str) -> Any:
    if not isinstance(values, dict):
        raise ValueError(f"Секция {section} должна быть JSON-объектом")
    allowed = {f.name for f in fields(current)}
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"Неизвестные ключи в секции {section}: {sorted(unknown)}")
    return replace(current, **values)
