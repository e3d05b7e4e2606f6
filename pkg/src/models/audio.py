"""
Модели данных для аудиосигналов и их частотно-временного представления
"""

from dataclasses import asdict, dataclass

import numpy as np

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 48000  # 3 секунды при 16 кГц


@dataclass(frozen=True)
class Waveform:
    """
    Моно-сигнал с частотой дискретизации 16 кГц

    Отсчеты лежат в диапазоне [-1, 1]
    """
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(
                f"Частота дискретизации должна быть {SAMPLE_RATE} Гц, "
                f"получено {self.sample_rate}"
            )

        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("Сигнал должен быть одноканальным (одномерным)")
        if samples.size == 0:
            raise ValueError("Сигнал не может быть пустым")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        """Длительность в секундах"""
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    """
    Параметры лог-мел спектрограммы

    Значения по умолчанию дают матрицу 80 x 188 для 3-секундного окна
    """
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    window: str = "hann"
    log_floor: float = 1e-6
    center: bool = True
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        if self.hop > self.n_fft:
            raise ValueError("Шаг окна (hop) не может превышать n_fft")

        if self.n_mels < 1:
            raise ValueError("Число мел-полос должно быть не меньше 1")

        if self.log_floor <= 0:
            raise ValueError("Нижняя граница логарифма должна быть положительной")

        if not 0 <= self.fmin < self.fmax <= SAMPLE_RATE / 2:
            raise ValueError("Границы мел-фильтров должны лежать в [0, 8000] Гц")

    def n_frames(self, n_samples: int) -> int:
        """
        Число кадров спектрограммы для сигнала заданной длины

        Args:
            n_samples: Длина сигнала в отсчетах

        Returns:
            Число кадров
        """
        if self.center:
            return 1 + n_samples // self.hop
        return 1 + (n_samples - self.n_fft) // self.hop

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MelSpectrogram:
    """
    Лог-мел спектрограмма: матрица n_mels x n_frames
    """
    values: np.ndarray
    config: MelConfig

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] != self.config.n_mels:
            raise ValueError(
                f"Ожидается матрица {self.config.n_mels} x T, получено {values.shape}"
            )
        if not np.all(values >= np.log(self.config.log_floor) - 1e-9):
            raise ValueError("Значения спектрограммы ниже log(log_floor)")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple:
        return self.values.shape
