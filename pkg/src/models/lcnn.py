"""
LCNN-эксперт
Сверточный классификатор с активацией Max-Feature-Map над лог-мел спектрограммой.
Возвращает логиты двух классов и 64-мерное эмбеддинг-представление после
последнего слоя батч-нормализации (используется улучшенным гейтом).
"""

from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

ARCH_TAG = "lcnn9-mel80-v1"
EMBEDDING_DIM = 64
NUM_CLASSES = 2
INPUT_MELS = 80
INPUT_FRAMES = 188

TRAIN_MODE = "train"
EVAL_MODE = "eval"


def mfm(a: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """
    Max-Feature-Map: поэлементный максимум двух половин канальной оси

    Args:
        a: Тензор с четным числом каналов 2c по оси dim
        dim: Канальная ось

    Returns:
        Тензор с c каналами, канал j = max(a[j], a[j + c])

    Raises:
        ValueError: Если число каналов нечетное
    """
    channels = a.shape[dim]
    if channels % 2 != 0:
        raise ValueError(f"MFM требует четного числа каналов, получено {channels}")
    first, second = torch.split(a, channels // 2, dim=dim)
    return torch.maximum(first, second)


class MaxFeatureMap(nn.Module):
    """Слой-обертка над mfm"""

    def __init__(self, dim: int = 1):
        super().__init__()
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return mfm(x, self.dim)


def _conv_mfm(in_channels: int, out_channels: int) -> nn.Sequential:
    # свертка 3x3 выдает 2c каналов, MFM оставляет c
    return nn.Sequential(
        nn.Conv2d(in_channels, 2 * out_channels, kernel_size=3, padding=1),
        MaxFeatureMap(),
        nn.MaxPool2d(kernel_size=2, stride=2),
    )


def frozen_batch_norm(bn: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Батч-нормализация с накопленной статистикой независимо от режима модуля"""
    return F.batch_norm(
        x,
        bn.running_mean,
        bn.running_var,
        bn.weight,
        bn.bias,
        training=False,
        eps=bn.eps,
    )


def batch_norm_1d(bn: nn.BatchNorm1d, x: torch.Tensor) -> torch.Tensor:
    """
    BatchNorm1d с поддержкой одиночного примера в режиме train

    Для батча из одного вектора статистику оценить нельзя, поэтому используется
    накопленная (running) статистика, как в режиме eval
    """
    if bn.training and x.shape[0] == 1:
        return frozen_batch_norm(bn, x)
    return bn(x)


class LCNNExpert(nn.Module):
    """
    LCNN-эксперт (параметры эксперта E_i)

    Архитектура:
    - 4 блока conv 3x3 + MFM + max-pool 2x2 (32/48/64/64 канала после MFM),
      батч-нормализация между блоками
    - глобальное усреднение по частоте и времени
    - dense -> 128 + MFM -> dense -> 64 -> BatchNorm (эмбеддинг)
    - dropout 0.5 -> dense 64 -> 2 (логиты: 0 = real, 1 = fake)
    """

    arch_tag = ARCH_TAG

    def __init__(self, dropout: float = 0.5, bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        super().__init__()
        channels = (32, 48, 64, 64)

        self.block1 = _conv_mfm(1, channels[0])
        self.bn1 = nn.BatchNorm2d(channels[0], eps=bn_eps, momentum=bn_momentum)
        self.block2 = _conv_mfm(channels[0], channels[1])
        self.bn2 = nn.BatchNorm2d(channels[1], eps=bn_eps, momentum=bn_momentum)
        self.block3 = _conv_mfm(channels[1], channels[2])
        self.bn3 = nn.BatchNorm2d(channels[2], eps=bn_eps, momentum=bn_momentum)
        self.block4 = _conv_mfm(channels[2], channels[3])

        self.fc1 = nn.Linear(channels[3], 2 * 128)
        self.fc_mfm = MaxFeatureMap(dim=1)
        self.fc2 = nn.Linear(128, EMBEDDING_DIM)
        # Последний слой батч-нормализации - точка съема эмбеддинга
        self.embedding_bn = nn.BatchNorm1d(EMBEDDING_DIM, eps=bn_eps, momentum=bn_momentum)

        self.dropout = nn.Dropout(dropout)
        self.classifier = nn.Linear(EMBEDDING_DIM, NUM_CLASSES)

    @staticmethod
    def _as_batch(mel: torch.Tensor) -> torch.Tensor:
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        if mel.dim() != 3 or tuple(mel.shape[1:]) != (INPUT_MELS, INPUT_FRAMES):
            raise ValueError(
                f"Ожидается вход {INPUT_MELS} x {INPUT_FRAMES} "
                f"(с необязательной осью батча), получено {tuple(mel.shape)}"
            )
        return mel.unsqueeze(1)

    def features(self, mel: torch.Tensor, frozen: bool = False) -> torch.Tensor:
        """
        Активации перед последней батч-нормализацией

        Args:
            mel: (B, 80, 188) или (80, 188)
            frozen: Нормализовать накопленной статистикой BN даже в режиме train
                (running stats при этом не обновляются)

        Returns:
            Тензор (B, 64)
        """
        norm = frozen_batch_norm if frozen else (lambda bn, t: bn(t))
        x = self._as_batch(mel)
        x = norm(self.bn1, self.block1(x))
        x = norm(self.bn2, self.block2(x))
        x = norm(self.bn3, self.block3(x))
        x = self.block4(x)
        x = x.mean(dim=(2, 3))
        x = self.fc_mfm(self.fc1(x))
        return self.fc2(x)

    def embed(self, hidden: torch.Tensor) -> torch.Tensor:
        """Эмбеддинг в текущем режиме модуля (train/eval)"""
        return batch_norm_1d(self.embedding_bn, hidden)

    def embed_frozen(self, hidden: torch.Tensor) -> torch.Tensor:
        """Эмбеддинг с накопленной статистикой BN независимо от режима"""
        return frozen_batch_norm(self.embedding_bn, hidden)

    def gate_embedding(self, mel: torch.Tensor) -> torch.Tensor:
        """
        Эмбеддинг для улучшенного гейта: все слои BN со статистикой режима eval

        Результат для примера не зависит от остальных примеров батча
        """
        return self.embed_frozen(self.features(mel, frozen=True))

    def classify(self, embedding: torch.Tensor) -> torch.Tensor:
        """Логиты из эмбеддинга: dense(dropout(e))"""
        return self.classifier(self.dropout(embedding))

    def forward(self, mel: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        embedding = self.embed(self.features(mel))
        return self.classify(embedding), embedding


def init_expert(seed: int) -> LCNNExpert:
    """
    Детерминированная инициализация эксперта

    Свертки и полносвязные слои - равномерное распределение с дисперсией 1/fan_in,
    смещения - U(-1/sqrt(fan_in), 1/sqrt(fan_in)); BN - scale 1, shift 0,
    running mean 0, running var 1.

    Args:
        seed: Сид генератора

    Returns:
        Новый эксперт
    """
    generator = torch.Generator().manual_seed(seed)
    expert = LCNNExpert()
    with torch.no_grad():
        for module in expert.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                fan_in = module.weight[0].numel()
                bound = (3.0 / fan_in) ** 0.5
                module.weight.uniform_(-bound, bound, generator=generator)
                if module.bias is not None:
                    bias_bound = fan_in ** -0.5
                    module.bias.uniform_(-bias_bound, bias_bound, generator=generator)
            elif isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d)):
                module.reset_running_stats()
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
    return expert


def lcnn_forward(
    mel: torch.Tensor, expert: LCNNExpert, mode: str = EVAL_MODE
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Прямой проход эксперта: z_i = E_i(x) и эмбеддинг e_i

    Args:
        mel: Лог-мел спектрограмма (80 x 188) или батч (B x 80 x 188)
        expert: Параметры эксперта
        mode: "train" (dropout, статистика батча; одиночная спектрограмма
            нормализуется в последнем BN накопленной статистикой) или "eval"
            (детерминированно)

    Returns:
        (логиты, эмбеддинг)
    """
    if mode not in (TRAIN_MODE, EVAL_MODE):
        raise ValueError(f"Неизвестный режим: {mode!r}")
    expert.train(mode == TRAIN_MODE)
    return expert(mel)
