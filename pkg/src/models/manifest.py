"""
Модели данных для манифестов аудиокорпусов
Содержит классы для представления размеченных записей, манифестов и параметров синтетического корпуса
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Tuple

# Допустимые значения колонок манифеста
LABEL_REAL = 0
LABEL_FAKE = 1
VALID_LABELS = (LABEL_REAL, LABEL_FAKE)
SPLIT_TRAIN = "train"
VALID_SPLITS = (SPLIT_TRAIN, "dev", "eval")
MANIFEST_COLUMNS = ("path", "label", "domain", "split")


@dataclass(frozen=True)
class ManifestEntry:
    """
    Запись манифеста

    Одна аудиозапись с меткой класса (0 - настоящая речь, 1 - синтетическая),
    идентификатором домена (датасета) и разбиением
    """
    path: str  # Путь к аудиофайлу (относительный или абсолютный)
    label: int  # 0 = real, 1 = fake
    domain: str  # Идентификатор домена, например "ASV" или "synth0"
    split: str  # train / dev / eval

    def __post_init__(self):
        """Валидация данных после инициализации"""
        if not self.path:
            raise ValueError("Путь к аудиофайлу не может быть пустым")

        if self.label not in VALID_LABELS:
            raise ValueError(f"Метка должна быть 0 или 1, получено: {self.label!r}")

        if self.split not in VALID_SPLITS:
            raise ValueError(
                f"Разбиение должно быть одним из {VALID_SPLITS}, получено: {self.split!r}"
            )

        if not self.domain:
            raise ValueError("Идентификатор домена не может быть пустым")

    def with_split(self, split: str) -> "ManifestEntry":
        """Копия записи с другим разбиением"""
        return replace(self, split=split)


@dataclass(frozen=True)
class DatasetManifest:
    """
    Манифест датасета

    Упорядоченный (лексикографически по пути) список записей.
    Записи сортируются при создании, поэтому порядок детерминирован.
    """
    name: str
    entries: Tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ordered = tuple(sorted(self.entries, key=lambda entry: entry.path))
        object.__setattr__(self, "entries", ordered)

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, split: str) -> List[ManifestEntry]:
        """
        Записи одного разбиения в порядке манифеста

        Args:
            split: train / dev / eval

        Returns:
            Список записей
        """
        if split not in VALID_SPLITS:
            raise ValueError(f"Неизвестное разбиение: {split!r}")
        return [entry for entry in self.entries if entry.split == split]

    def domains(self) -> List[str]:
        """Отсортированный список доменов манифеста"""
        return sorted({entry.domain for entry in self.entries})

    def by_domain(self, domain: str) -> "DatasetManifest":
        """Под-манифест одного домена"""
        return DatasetManifest(
            name=domain,
            entries=tuple(entry for entry in self.entries if entry.domain == domain),
        )

    def label_counts(self, split: str) -> Dict[int, int]:
        """Количество записей каждого класса в разбиении"""
        counts = {label: 0 for label in VALID_LABELS}
        for entry in self.split(split):
            counts[entry.label] += 1
        return counts

    def require_both_classes(self, splits: Iterable[str]):
        """
        Проверка наличия обоих классов в указанных разбиениях

        Raises:
            ValueError: Если в каком-либо разбиении нет одного из классов
        """
        for split in splits:
            counts = self.label_counts(split)
            missing = [label for label, count in counts.items() if count == 0]
            if missing:
                raise ValueError(
                    f"Манифест {self.name}: в разбиении {split} нет записей "
                    f"класса {missing}"
                )


@dataclass(frozen=True)
class SynthCorpusSpec:
    """
    Параметры синтетического многодоменного корпуса

    Заменяет закрытые корпуса настольным аналогом: в каждом домене настоящие
    записи - гармонические тоны, поддельные - те же тоны с доменным артефактом
    """
    num_domains: int = 4
    clips_per_domain_per_class: int = 32
    clip_seconds: float = 4.0
    seed: int = 0
    # Домены, присутствующие только в eval (аналог неизвестных датасетов)
    num_unseen_domains: int = 0

    def __post_init__(self):
        if self.num_domains < 2:
            raise ValueError("Число доменов должно быть не меньше 2")

        if self.clips_per_domain_per_class < 8:
            raise ValueError("Число клипов на домен и класс должно быть не меньше 8")

        if self.clip_seconds <= 0:
            raise ValueError("Длительность клипа должна быть положительной")

        if self.num_unseen_domains < 0:
            raise ValueError("Число неизвестных доменов не может быть отрицательным")
