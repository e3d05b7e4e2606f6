"""
Смесь экспертов (dense / soft MoE)
Слияние логитов экспертов с весами гейта, итоговое предсказание и базовый
ансамбль-усреднение
"""

from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .gating import STANDARD, VARIANTS, EnhancedGate, StandardGate
from .lcnn import EVAL_MODE, TRAIN_MODE, LCNNExpert


def alpha_from_logits(logits: torch.Tensor) -> torch.Tensor:
    """Веса гейта α = softmax(логиты гейта)"""
    return torch.softmax(logits, dim=-1)


def fuse(alpha: torch.Tensor, z_list: Sequence[torch.Tensor]) -> torch.Tensor:
    """
    Взвешенная сумма логитов экспертов z = Σ α_i · z_i

    Args:
        alpha: Веса гейта (..., N)
        z_list: N тензоров логитов (..., 2)

    Returns:
        Логиты смеси (..., 2)
    """
    if alpha.shape[-1] != len(z_list):
        raise ValueError(
            f"Число весов ({alpha.shape[-1]}) не совпадает с числом экспертов ({len(z_list)})"
        )
    stacked = torch.stack(list(z_list), dim=-2)
    return (alpha.unsqueeze(-1) * stacked).sum(dim=-2)


def predict(z: torch.Tensor) -> torch.Tensor:
    """
    Вероятность подделки ŷ = softmax(z)[1]

    softmax вычисляется с вычитанием максимума, поэтому устойчив к сдвигу логитов
    """
    if z.shape[-1] != 2:
        raise ValueError(f"Ожидается пара логитов, получено {z.shape[-1]}")
    return torch.softmax(z, dim=-1)[..., 1]


class MoEModel(nn.Module):
    """
    Детектор на основе смеси экспертов

    Все N экспертов вычисляются для каждого входа; гейт выдает веса α,
    логиты экспертов смешиваются и переводятся в вероятность подделки
    """

    def __init__(self, experts: Sequence[LCNNExpert], gate: nn.Module, domains: Sequence[str]):
        super().__init__()
        if len(experts) < 2:
            raise ValueError("Смесь экспертов требует не менее двух экспертов")
        if len(domains) != len(experts):
            raise ValueError("Число доменов не совпадает с числом экспертов")
        if not isinstance(gate, (StandardGate, EnhancedGate)):
            raise ValueError(f"Неподдерживаемый гейт: {type(gate).__name__}")
        if gate.num_experts != len(experts):
            raise ValueError(
                f"Гейт рассчитан на {gate.num_experts} экспертов, передано {len(experts)}"
            )

        self.experts = nn.ModuleList(experts)
        self.gate = gate
        self.domains: List[str] = list(domains)

    @property
    def variant(self) -> str:
        return self.gate.variant

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    def expert_outputs(
        self, mel: torch.Tensor
    ) -> Tuple[List[torch.Tensor], List[torch.Tensor], List[torch.Tensor]]:
        """
        Логиты экспертов, их эмбеддинги и эмбеддинги для гейта

        Эмбеддинги для гейта считаются отдельным проходом, где все слои BN
        экспертов используют накопленную статистику (семантика eval), поэтому
        вход гейта для примера не зависит от состава батча. Логиты экспертов -
        в текущем режиме модуля.

        Returns:
            (z_list, e_list, gate_e_list)
        """
        z_list, e_list, gate_e_list = [], [], []
        for expert in self.experts:
            if expert.training:
                # до прохода в режиме train: он обновляет running stats
                gate_e_list.append(expert.gate_embedding(mel))
                hidden = expert.features(mel)
            else:
                hidden = expert.features(mel)
                gate_e_list.append(expert.embed_frozen(hidden))
            embedding = expert.embed(hidden)
            e_list.append(embedding)
            z_list.append(expert.classify(embedding))
        return z_list, e_list, gate_e_list

    def gate_logits(
        self, mel: Optional[torch.Tensor], e_list: Optional[Sequence[torch.Tensor]]
    ) -> torch.Tensor:
        """Логиты гейта до softmax"""
        if self.variant == STANDARD:
            if mel is None:
                raise ValueError("Стандартный гейт требует спектрограмму на входе")
            return self.gate(mel)
        if e_list is None:
            raise ValueError("Улучшенный гейт требует эмбеддинги экспертов")
        return self.gate(e_list)

    def forward(self, mel: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Returns:
            (ŷ, z, α) формы (B,), (B, 2), (B, N)
        """
        z_list, _, gate_e_list = self.expert_outputs(mel)
        alpha = alpha_from_logits(self.gate_logits(mel, gate_e_list))
        z = fuse(alpha, z_list)
        return predict(z), z, alpha


def gate_forward(
    model: MoEModel,
    mel: Optional[torch.Tensor],
    e_list: Optional[Sequence[torch.Tensor]],
    mode: str = EVAL_MODE,
) -> torch.Tensor:
    """
    Веса гейта α = softmax(G(·))

    Стандартный вариант использует спектрограмму (e_list игнорируется),
    улучшенный - эмбеддинги экспертов (спектрограмма игнорируется).

    Args:
        model: Смесь экспертов
        mel: Спектрограмма (80 x 188) или батч
        e_list: N эмбеддингов (..., 64)
        mode: "train" или "eval"

    Returns:
        Веса (B, N)

    Raises:
        ValueError: Если не передан вход, нужный варианту гейта
    """
    if mode not in (TRAIN_MODE, EVAL_MODE):
        raise ValueError(f"Неизвестный режим: {mode!r}")
    model.gate.train(mode == TRAIN_MODE)
    return alpha_from_logits(model.gate_logits(mel, e_list))


class EnsembleAverage(nn.Module):
    """
    Ансамбль-усреднение экспертов (базовая линия без гейта)

    mode="prob" усредняет вероятности экспертов, mode="logit" - логиты
    (эквивалентно смеси с равномерным гейтом)
    """

    def __init__(self, experts: Sequence[LCNNExpert], domains: Sequence[str], mode: str = "prob"):
        super().__init__()
        if len(experts) == 0:
            raise ValueError("Ансамбль требует хотя бы одного эксперта")
        if mode not in ("prob", "logit"):
            raise ValueError(f"Неизвестный режим усреднения: {mode!r}")
        self.experts = nn.ModuleList(experts)
        self.domains = list(domains)
        self.mode = mode

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        z_list = [expert(mel)[0] for expert in self.experts]
        if self.mode == "logit":
            return predict(torch.stack(z_list, dim=0).mean(dim=0))
        return torch.stack([predict(z) for z in z_list], dim=0).mean(dim=0)


def build_moe(
    experts: Sequence[LCNNExpert], domains: Sequence[str], variant: str, gate: nn.Module
) -> MoEModel:
    """Сборка модели с проверкой варианта"""
    if variant not in VARIANTS:
        raise ValueError(f"Неизвестный вариант MoE: {variant!r}")
    if gate.variant != variant:
        raise ValueError(f"Гейт варианта {gate.variant} не подходит для {variant}")
    return MoEModel(experts, gate, domains)
