"""
Сервис детекции
Полный путь от сигнала до вероятности подделки: фронтенд -> все эксперты -> гейт -> слияние
"""

from typing import Optional, Sequence, Tuple, Union

import torch

from ..models.audio import MelConfig, Waveform
from ..models.lcnn import EVAL_MODE, TRAIN_MODE, LCNNExpert
from ..models.moe import MoEModel, predict
from .frontend_service import waveform_to_input

WaveformInput = Union[Waveform, Sequence[Waveform]]


def _model_dtype(module: torch.nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def _to_batch(waveforms: WaveformInput, cfg: MelConfig, dtype: torch.dtype) -> Tuple[torch.Tensor, bool]:
    single = isinstance(waveforms, Waveform)
    items = [waveforms] if single else list(waveforms)
    if not items:
        raise ValueError("Не передано ни одного сигнала")
    mel = torch.stack([waveform_to_input(w, cfg, dtype) for w in items], dim=0)
    return mel, single


def moe_forward(
    model: MoEModel,
    waveforms: WaveformInput,
    mode: str = EVAL_MODE,
    mel_config: Optional[MelConfig] = None,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Прямой проход смеси экспертов по сигналу

    Сигнал приводится к окну 3 секунды и переводится в спектрограмму, затем
    вычисляются все N экспертов, веса гейта и слитые логиты.

    Args:
        model: Смесь экспертов
        waveforms: Сигнал или список сигналов
        mode: "train" или "eval"; в режиме eval результат детерминирован
        mel_config: Параметры спектрограммы (по умолчанию стандартные)

    Returns:
        (ŷ, z, α); для одного сигнала без оси батча

    Raises:
        ValueError: Если режим неизвестен
    """
    if mode not in (TRAIN_MODE, EVAL_MODE):
        raise ValueError(f"Неизвестный режим: {mode!r}")

    mel, single = _to_batch(waveforms, mel_config or MelConfig(), _model_dtype(model))

    model.train(mode == TRAIN_MODE)
    y_hat, z, alpha = model(mel)
    if single:
        return y_hat[0], z[0], alpha[0]
    return y_hat, z, alpha


def ensemble_average(
    experts: Sequence[LCNNExpert],
    waveforms: WaveformInput,
    mel_config: Optional[MelConfig] = None,
) -> torch.Tensor:
    """
    Ансамбль-усреднение: среднее вероятностей подделки экспертов, без гейта

    Args:
        experts: Эксперты (хотя бы один)
        waveforms: Сигнал или список сигналов
        mel_config: Параметры спектрограммы

    Returns:
        ŷ (скаляр для одного сигнала)

    Raises:
        ValueError: Если список экспертов пуст
    """
    if len(experts) == 0:
        raise ValueError("Ансамбль требует хотя бы одного эксперта")

    mel, single = _to_batch(waveforms, mel_config or MelConfig(), _model_dtype(experts[0]))
    probabilities = []
    for expert in experts:
        expert.eval()
        logits, _ = expert(mel)
        probabilities.append(predict(logits))
    y_hat = torch.stack(probabilities, dim=0).mean(dim=0)
    return y_hat[0] if single else y_hat
