"""
Сервис корпусов
Стратифицированное разбиение, сбалансированные по классам батчи и объединение манифестов
"""

import math
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from ..models.manifest import (
    LABEL_FAKE,
    LABEL_REAL,
    SPLIT_TRAIN,
    VALID_LABELS,
    VALID_SPLITS,
    DatasetManifest,
    ManifestEntry,
)

DEFAULT_RATIOS = (0.6, 0.2, 0.2)


def _split_counts(n: int, ratios: Sequence[float]) -> List[int]:
    """
    Количество записей в каждом разбиении

    dev и eval получают floor(n * r), остаток от округления уходит в train
    """
    # допуск на погрешность умножения (0.29 * 100 = 28.999...)
    rest = [math.floor(n * ratio + 1e-9) for ratio in ratios[1:]]
    return [n - sum(rest), *rest]


def make_splits(
    entries: Sequence[ManifestEntry],
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    name: str = "splits",
) -> DatasetManifest:
    """
    Стратифицированное разбиение на train / dev / eval

    Каждый класс перемешивается и делится независимо: dev и eval получают
    floor(n * r) записей класса, остаток от округления достается train.

    Args:
        entries: Записи (текущее поле split игнорируется)
        ratios: Доли (train, dev, eval), неотрицательные, сумма 1
        seed: Сид перемешивания
        name: Имя итогового манифеста

    Returns:
        Манифест с заполненным полем split

    Raises:
        ValueError: Если доли некорректны или класс слишком мал для стратификации
    """
    if len(ratios) != len(VALID_SPLITS):
        raise ValueError("Ожидается три доли: train, dev, eval")
    if any(ratio < 0 for ratio in ratios):
        raise ValueError(f"Доли разбиения не могут быть отрицательными: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"Сумма долей должна быть равна 1, получено {sum(ratios)}")

    used_splits = sum(1 for ratio in ratios if ratio > 0)
    rng = np.random.default_rng(seed)
    result: List[ManifestEntry] = []

    for label in VALID_LABELS:
        members = sorted((e for e in entries if e.label == label), key=lambda e: e.path)
        if not members:
            continue
        if len(members) < used_splits:
            raise ValueError(
                f"Класс {label}: {len(members)} записей меньше числа разбиений "
                f"({used_splits}), стратификация невозможна"
            )

        order = rng.permutation(len(members))
        counts = _split_counts(len(members), ratios)
        start = 0
        for split, count in zip(VALID_SPLITS, counts):
            for position in order[start:start + count]:
                result.append(members[position].with_split(split))
            start += count

    return DatasetManifest(name=name, entries=tuple(result))


def balanced_batches(
    manifest: DatasetManifest,
    split: str,
    batch_size: int,
    seed: int,
    epoch: int = 0,
) -> Iterator[List[ManifestEntry]]:
    """
    Сбалансированные по классам батчи одной эпохи

    Каждый батч содержит batch_size/2 настоящих и batch_size/2 поддельных
    записей. Меньший класс дополняется выборкой с возвращением до размера
    большего (каждая его запись входит хотя бы один раз). Последний батч
    дополняется с начала перемешанного порядка эпохи.

    Args:
        manifest: Манифест
        split: Разбиение
        batch_size: Четный размер батча
        seed: Сид
        epoch: Номер эпохи (влияет на перемешивание)

    Returns:
        Итератор по батчам (однократного использования)

    Raises:
        ValueError: Если размер батча нечетный или в разбиении один класс
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise ValueError(f"Размер батча должен быть четным и положительным, получено {batch_size}")

    by_label = {label: [e for e in manifest.split(split) if e.label == label] for label in VALID_LABELS}
    if not by_label[LABEL_REAL] or not by_label[LABEL_FAKE]:
        raise ValueError(
            f"Разбиение {split} манифеста {manifest.name} содержит только один класс"
        )

    rng = np.random.default_rng([seed, epoch])
    half = batch_size // 2
    target = max(len(members) for members in by_label.values())
    num_batches = -(-target // half)

    streams: Dict[int, List[ManifestEntry]] = {}
    for label in VALID_LABELS:
        members = by_label[label]
        extra = rng.integers(0, len(members), size=target - len(members))
        pool = members + [members[i] for i in extra]
        shuffled = [pool[i] for i in rng.permutation(len(pool))]
        needed = num_batches * half
        streams[label] = [shuffled[i % len(shuffled)] for i in range(needed)]

    def _iterate() -> Iterator[List[ManifestEntry]]:
        for index in range(num_batches):
            window = slice(index * half, (index + 1) * half)
            yield streams[LABEL_REAL][window] + streams[LABEL_FAKE][window]

    return _iterate()


def pool_manifests(
    manifests: Sequence[DatasetManifest],
    equalize_domains: bool = False,
    seed: int = 0,
    name: str = "pooled",
) -> DatasetManifest:
    """
    Объединение манифестов в один

    Метки доменов сохраняются. При equalize_domains записи train каждого
    домена (отдельно по классу) дополняются выборкой с возвращением до размера
    самого большого домена, так что домены встречаются в обучающих батчах
    с равной вероятностью. dev и eval не дублируются.

    Args:
        manifests: Манифесты
        equalize_domains: Выравнивать размеры доменов
        seed: Сид дополнения
        name: Имя объединенного манифеста

    Returns:
        Объединенный манифест
    """
    if not manifests:
        raise ValueError("Нужен хотя бы один манифест для объединения")

    entries = [entry for manifest in manifests for entry in manifest.entries]
    if not equalize_domains:
        return DatasetManifest(name=name, entries=tuple(entries))

    rng = np.random.default_rng(seed)
    groups: Dict[Tuple[str, int, str], List[ManifestEntry]] = {}
    for entry in sorted(entries, key=lambda e: (e.domain, e.path)):
        groups.setdefault((entry.split, entry.label, entry.domain), []).append(entry)

    pooled: List[ManifestEntry] = []
    for split in VALID_SPLITS:
        for label in VALID_LABELS:
            cell = {key[2]: members for key, members in groups.items() if key[:2] == (split, label)}
            if not cell:
                continue
            largest = max(len(members) for members in cell.values())
            for domain in sorted(cell):
                members = cell[domain]
                if split != SPLIT_TRAIN:
                    pooled.extend(members)
                    continue
                extra = rng.integers(0, len(members), size=largest - len(members))
                pooled.extend(members + [members[i] for i in extra])

    return DatasetManifest(name=name, entries=tuple(pooled))
