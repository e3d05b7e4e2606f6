"""
Гейтирующие сети смеси экспертов
Стандартный гейт получает спектрограмму напрямую, улучшенный - эмбеддинги экспертов
и их комбинированное эмбеддинг-представление.
"""

from typing import Sequence

import torch
import torch.nn as nn

from .lcnn import EMBEDDING_DIM, MaxFeatureMap, batch_norm_1d

STANDARD = "standard"
ENHANCED = "enhanced"
VARIANTS = (STANDARD, ENHANCED)


def _check_embeddings(e_list: Sequence[torch.Tensor], d: int):
    if len(e_list) == 0:
        raise ValueError("Список эмбеддингов пуст")
    for index, e in enumerate(e_list):
        if e.shape[-1] != d:
            raise ValueError(
                f"Эмбеддинг эксперта {index + 1} имеет размер {e.shape[-1]}, ожидается {d}"
            )
    shapes = {tuple(e.shape) for e in e_list}
    if len(shapes) != 1:
        raise ValueError(f"Эмбеддинги экспертов разной формы: {sorted(shapes)}")


def combined_embedding(e_list: Sequence[torch.Tensor], p: torch.Tensor) -> torch.Tensor:
    """
    Комбинированное эмбеддинг-представление w = (e_1 ⊙ ... ⊙ e_N) ⊙ p

    Значения каждой координаты перемножаются в порядке возрастания, поэтому
    результат не зависит от порядка экспертов даже в арифметике с плавающей точкой.

    Args:
        e_list: N эмбеддингов формы (..., d)
        p: Обучаемый вектор длины d

    Returns:
        Тензор формы (..., d)
    """
    d = p.shape[-1]
    _check_embeddings(e_list, d)
    stacked = torch.stack(list(e_list), dim=0)
    ordered = torch.sort(stacked, dim=0).values
    return torch.prod(ordered, dim=0) * p


def gate_input(e_list: Sequence[torch.Tensor], w: torch.Tensor) -> torch.Tensor:
    """
    Вход улучшенного гейта: конкатенация [e_1, ..., e_N, w]

    Args:
        e_list: N эмбеддингов формы (..., d) в порядке экспертов
        w: Комбинированное эмбеддинг-представление (..., d)

    Returns:
        Тензор формы (..., (N + 1) * d)
    """
    d = w.shape[-1]
    _check_embeddings(list(e_list) + [w], d)
    return torch.cat(list(e_list) + [w], dim=-1)


class GateHead(nn.Module):
    """
    Голова гейта: dense -> dropout -> batch norm -> Leaky ReLU

    Одиночный пример в режиме train нормализуется накопленной статистикой

    Выдает N логитов; softmax применяется снаружи
    """

    def __init__(
        self,
        in_features: int,
        num_experts: int,
        dropout: float = 0.3,
        negative_slope: float = 0.01,
    ):
        super().__init__()
        self.dense = nn.Linear(in_features, num_experts)
        self.dropout = nn.Dropout(dropout)
        self.norm = nn.BatchNorm1d(num_experts)
        self.activation = nn.LeakyReLU(negative_slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.activation(batch_norm_1d(self.norm, self.dropout(self.dense(x))))


class StandardGate(nn.Module):
    """
    Стандартный гейт: G(x) по спектрограмме

    Двухблочный conv + MFM ствол (16 и 24 канала после MFM, пулинг 2x2),
    глобальное усреднение и голова GateHead
    """

    variant = STANDARD

    def __init__(self, num_experts: int, dropout: float = 0.3, negative_slope: float = 0.01):
        super().__init__()
        self.num_experts = num_experts
        self.trunk = nn.Sequential(
            nn.Conv2d(1, 32, kernel_size=3, padding=1),
            MaxFeatureMap(),
            nn.MaxPool2d(kernel_size=2, stride=2),
            nn.BatchNorm2d(16),
            nn.Conv2d(16, 48, kernel_size=3, padding=1),
            MaxFeatureMap(),
            nn.MaxPool2d(kernel_size=2, stride=2),
        )
        self.head = GateHead(24, num_experts, dropout, negative_slope)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        x = self.trunk(mel.unsqueeze(1))
        return self.head(x.mean(dim=(2, 3)))


class EnhancedGate(nn.Module):
    """
    Улучшенный гейт: G(e_input) по эмбеддингам экспертов

    Хранит обучаемый вектор p (инициализирован единицами) для комбинированного
    эмбеддинга; вход головы имеет размер (N + 1) * d
    """

    variant = ENHANCED

    def __init__(
        self,
        num_experts: int,
        embedding_dim: int = EMBEDDING_DIM,
        dropout: float = 0.3,
        negative_slope: float = 0.01,
    ):
        super().__init__()
        self.num_experts = num_experts
        self.embedding_dim = embedding_dim
        self.p = nn.Parameter(torch.ones(embedding_dim))
        self.head = GateHead((num_experts + 1) * embedding_dim, num_experts, dropout, negative_slope)

    def forward(self, e_list: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(e_list) != self.num_experts:
            raise ValueError(
                f"Ожидается {self.num_experts} эмбеддингов, получено {len(e_list)}"
            )
        w = combined_embedding(e_list, self.p)
        return self.head(gate_input(e_list, w))


def build_gate(variant: str, num_experts: int, seed: int) -> nn.Module:
    """
    Случайная инициализация гейта заданного варианта

    Args:
        variant: "standard" или "enhanced"
        num_experts: Число экспертов N
        seed: Сид инициализации

    Returns:
        Модуль гейта
    """
    if variant not in VARIANTS:
        raise ValueError(f"Неизвестный вариант гейта: {variant!r}")
    if num_experts < 2:
        raise ValueError("Смесь экспертов требует N >= 2")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if variant == STANDARD:
            return StandardGate(num_experts)
        return EnhancedGate(num_experts)
