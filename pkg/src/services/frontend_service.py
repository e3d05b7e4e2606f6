"""
Сервис аудиофронтенда
Загрузка аудио, приведение к окну 3 секунды и извлечение лог-мел спектрограмм
"""

import logging
from math import gcd
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import librosa
import numpy as np
import soundfile as sf
import torch
from scipy.signal import resample_poly

from ..models.audio import SAMPLE_RATE, WINDOW_SAMPLES, MelConfig, MelSpectrogram, Waveform

# Окно Кайзера с beta=8.6 дает подавление в полосе задерживания около 80 дБ
RESAMPLE_WINDOW = ("kaiser", 8.6)


def load_audio(path: str) -> Waveform:
    """
    Загрузка WAV-файла в моно-сигнал 16 кГц

    Каналы усредняются, частота приводится к 16 кГц полифазным ресемплером,
    при выходе за [-1, 1] сигнал масштабируется по пику.

    Args:
        path: Путь к аудиофайлу

    Returns:
        Сигнал Waveform

    Raises:
        FileNotFoundError: Если файл не найден
        ValueError: Если файл не читается или пуст
    """
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Аудиофайл не найден: {file_path}")

    try:
        data, rate = sf.read(str(file_path), dtype="float64", always_2d=True)
    except Exception as e:
        raise ValueError(f"Не удалось прочитать аудиофайл {file_path}: {e}") from e

    if data.shape[0] == 0:
        raise ValueError(f"Аудиофайл пуст: {file_path}")

    samples = data.mean(axis=1)

    if rate != SAMPLE_RATE:
        divisor = gcd(int(rate), SAMPLE_RATE)
        samples = resample_poly(
            samples, SAMPLE_RATE // divisor, int(rate) // divisor, window=RESAMPLE_WINDOW
        )

    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        samples = samples / peak

    return Waveform(samples=samples, sample_rate=SAMPLE_RATE)


def fix_length(w: Waveform, target: int = WINDOW_SAMPLES) -> Waveform:
    """
    Приведение сигнала к фиксированной длине

    Короткий сигнал повторяется целиком (тайлинг) и обрезается до target,
    длинный - обрезается до первых target отсчетов.

    Args:
        w: Исходный сигнал
        target: Требуемая длина в отсчетах

    Returns:
        Сигнал длины target
    """
    if len(w) == 0:
        raise ValueError("Пустой сигнал нельзя привести к длине окна")
    if target < 1:
        raise ValueError("Длина окна должна быть положительной")

    if len(w) == target:
        return w
    if len(w) > target:
        return Waveform(samples=w.samples[:target], sample_rate=w.sample_rate)

    repeats = -(-target // len(w))
    return Waveform(samples=np.tile(w.samples, repeats)[:target], sample_rate=w.sample_rate)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Треугольные мел-фильтры в шкале HTK без нормировки площади"""
    return librosa.filters.mel(
        sr=SAMPLE_RATE,
        n_fft=cfg.n_fft,
        n_mels=cfg.n_mels,
        fmin=cfg.fmin,
        fmax=cfg.fmax,
        htk=True,
        norm=None,
    )


def melspec(w: Waveform, cfg: MelConfig) -> MelSpectrogram:
    """
    Лог-мел спектрограмма: STFT мощность -> мел-фильтры -> ln(P + floor)

    Args:
        w: Сигнал 16 кГц
        cfg: Параметры спектрограммы

    Returns:
        Матрица n_mels x (1 + len // hop) при центрировании

    Raises:
        ValueError: Если сигнал короче n_fft без центрирования
    """
    if not cfg.center and len(w) < cfg.n_fft:
        raise ValueError(
            f"Без центрирования сигнал должен быть не короче n_fft={cfg.n_fft}, "
            f"получено {len(w)}"
        )

    # отражение не определено для сигналов короче половины окна
    pad_mode = "reflect" if len(w) > cfg.n_fft // 2 else "constant"
    spectrum = librosa.stft(
        w.samples,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        window=cfg.window,
        center=cfg.center,
        pad_mode=pad_mode,
    )
    power = np.abs(spectrum) ** 2
    mel_power = mel_filterbank(cfg) @ power
    return MelSpectrogram(values=np.log(mel_power + cfg.log_floor), config=cfg)


def waveform_to_input(w: Waveform, cfg: MelConfig, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Окно 3 секунды -> спектрограмма -> тензор (n_mels, n_frames)"""
    mel = melspec(fix_length(w), cfg)
    return torch.as_tensor(mel.values, dtype=dtype)


class FeatureExtractor:
    """
    Извлечение и кэширование входов моделей по записям манифеста

    Каждый файл читается и преобразуется один раз; повторные запросы
    берутся из кэша. Кэш не ограничен по размеру (около 60 КБ на запись)
    и живет, пока его не очистят через clear_cache
    """

    def __init__(
        self,
        logger: logging.Logger,
        mel_config: Optional[MelConfig] = None,
        data_root: Optional[str] = None,
    ):
        """
        Args:
            logger: Логгер для записи событий
            mel_config: Параметры спектрограммы
            data_root: База для относительных путей манифеста
        """
        self.logger = logger
        self.mel_config = mel_config or MelConfig()
        self.data_root = Path(data_root) if data_root else None
        self._cache: Dict[str, torch.Tensor] = {}

    def resolve(self, path: str) -> Path:
        """Абсолютный путь к аудиофайлу записи"""
        candidate = Path(path)
        if candidate.is_absolute() or self.data_root is None:
            return candidate
        return self.data_root / candidate

    def features(self, path: str) -> torch.Tensor:
        """
        Спектрограмма записи (80 x 188)

        Args:
            path: Путь из манифеста

        Returns:
            Тензор float32
        """
        if path not in self._cache:
            resolved = self.resolve(path)
            self.logger.debug(f"🎧 Извлечение признаков: {resolved}")
            self._cache[path] = waveform_to_input(load_audio(str(resolved)), self.mel_config)
        return self._cache[path]

    def batch(self, paths: Sequence[str]) -> torch.Tensor:
        """Батч спектрограмм (B, 80, 188)"""
        return torch.stack([self.features(path) for path in paths], dim=0)

    def clear_cache(self) -> int:
        """
        Очистка кэша признаков

        Returns:
            Число удаленных записей
        """
        evicted = len(self._cache)
        self._cache.clear()
        self.logger.debug(f"🧹 Кэш признаков очищен: {evicted} записей")
        return evicted

    def preload(self, paths: List[str]) -> int:
        """
        Предварительное извлечение признаков

        Returns:
            Число файлов в кэше
        """
        for path in paths:
            self.features(path)
        self.logger.info(f"🎧 Признаки подготовлены для {len(self._cache)} файлов")
        return len(self._cache)
