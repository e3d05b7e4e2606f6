"""
Генератор синтетического корпуса
Многодоменный набор WAV-файлов с манифестами для настольных экспериментов
"""

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import soundfile as sf
from scipy.signal import butter, lfilter, sosfilt

from ..models.audio import SAMPLE_RATE
from ..models.manifest import LABEL_FAKE, LABEL_REAL, DatasetManifest, ManifestEntry, SynthCorpusSpec
from ..services.corpus_service import DEFAULT_RATIOS, make_splits
from ..services.logging_service import get_logger
from .file_handler import FileHandler

MANIFEST_FILE = "manifest.csv"
METADATA_FILE = "corpus_spec.json"

Artifact = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def _comb_noise(signal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Гребенчато-отфильтрованный высокочастотный шум"""
    delay = int(rng.integers(6, 12))
    comb = np.zeros(delay + 1)
    comb[0] = comb[delay] = 1.0
    noise = lfilter(comb, [1.0], rng.normal(0.0, 1.0, len(signal)))
    highpass = butter(4, 2000.0, btype="highpass", fs=SAMPLE_RATE, output="sos")
    noise = sosfilt(highpass, noise)
    return signal + 0.06 * noise / (np.std(noise) + 1e-12)


def _ring_modulation(signal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Амплитудная модуляция высокочастотной несущей (боковые полосы над речевой полосой)"""
    t = np.arange(len(signal)) / SAMPLE_RATE
    carrier = np.cos(2.0 * np.pi * rng.uniform(2500.0, 3500.0) * t)
    return signal * (0.7 + 0.5 * carrier)


def _band_hiss(signal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Полосовое шипение 4-7 кГц"""
    bandpass = butter(4, [4000.0, 7000.0], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    hiss = sosfilt(bandpass, rng.normal(0.0, 1.0, len(signal)))
    return signal + 0.05 * hiss / (np.std(hiss) + 1e-12)


def _zero_order_hold(signal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Удержание отсчета (образы спектра на кратных частоте удержания)"""
    hold = int(rng.integers(3, 5))
    return np.repeat(signal[::hold], hold)[: len(signal)]


# Артефакты назначаются доменам по кругу
ARTIFACTS: Dict[str, Artifact] = {
    "comb": _comb_noise,
    "ring": _ring_modulation,
    "hiss": _band_hiss,
    "hold": _zero_order_hold,
}
ARTIFACT_CYCLE = tuple(ARTIFACTS)


class SynthCorpusGenerator:
    """
    Генератор синтетического многодоменного корпуса

    Настоящие записи - гармонические тоны с вибрато и слоговой огибающей;
    домены различаются полосой основного тона, наклоном гармоник и уровнем
    шума. Поддельные записи - такие же тоны с доменным артефактом.
    Неизвестные домены (только eval) смешивают два артефакта.
    """

    def __init__(self, spec: SynthCorpusSpec, logger: Optional[logging.Logger] = None):
        """
        Args:
            spec: Параметры корпуса
            logger: Логгер (по умолчанию логгер детектора)
        """
        self.spec = spec
        self.logger = logger or get_logger()
        self.file_handler = FileHandler(self.logger)

    # ------------------------------------------------------------------
    # Домены
    # ------------------------------------------------------------------

    def domain_names(self) -> List[str]:
        known = [f"synth_{k}" for k in range(self.spec.num_domains)]
        unseen = [f"unseen_{j}" for j in range(self.spec.num_unseen_domains)]
        return known + unseen

    def domain_params(self, index: int) -> Dict[str, object]:
        """
        Параметры домена

        Args:
            index: Номер домена (известные, затем неизвестные)

        Returns:
            Словарь: полоса f0, наклон гармоник, уровень шума, артефакты
        """
        if index < self.spec.num_domains:
            artifacts = [ARTIFACT_CYCLE[index % len(ARTIFACT_CYCLE)]]
        else:
            j = index - self.spec.num_domains
            artifacts = [
                ARTIFACT_CYCLE[j % len(ARTIFACT_CYCLE)],
                ARTIFACT_CYCLE[(j + 1) % len(ARTIFACT_CYCLE)],
            ]
        return {
            "f0_band": (90.0 + 45.0 * index, 130.0 + 45.0 * index),
            "tilt": 1.0 + 0.3 * (index % 3),
            "noise_std": 0.002 * (1 + index % 4),
            "artifacts": artifacts,
        }

    # ------------------------------------------------------------------
    # Сигналы
    # ------------------------------------------------------------------

    def clip(self, index: int, label: int, clip_index: int) -> np.ndarray:
        """
        Один клип домена

        Случайность определяется только (seed, домен, класс, номер клипа),
        поэтому повторная генерация дает те же отсчеты

        Returns:
            Сигнал float64 в [-1, 1]
        """
        params = self.domain_params(index)
        rng = np.random.default_rng([self.spec.seed, index, label, clip_index])
        n = int(round(self.spec.clip_seconds * SAMPLE_RATE))
        t = np.arange(n) / SAMPLE_RATE

        f0 = rng.uniform(*params["f0_band"])
        vibrato = 1.0 + 0.02 * np.sin(2.0 * np.pi * rng.uniform(4.0, 6.0) * t)
        phase = 2.0 * np.pi * np.cumsum(f0 * vibrato) / SAMPLE_RATE

        voiced = np.zeros(n)
        harmonic = 1
        while harmonic * f0 < 7000.0:
            amplitude = harmonic ** -params["tilt"]
            voiced += amplitude * np.sin(harmonic * phase + rng.uniform(0.0, 2.0 * np.pi))
            harmonic += 1

        envelope = 0.6 + 0.4 * np.sin(2.0 * np.pi * rng.uniform(2.0, 4.0) * t + rng.uniform(0.0, np.pi)) ** 2
        signal = envelope * voiced
        signal = 0.5 * signal / np.max(np.abs(signal))

        if label == LABEL_FAKE:
            for name in params["artifacts"]:
                signal = ARTIFACTS[name](signal, rng)

        signal = signal + rng.normal(0.0, params["noise_std"], n)
        peak = np.max(np.abs(signal))
        if peak > 0.95:
            signal = 0.95 * signal / peak
        return signal

    # ------------------------------------------------------------------
    # Корпус
    # ------------------------------------------------------------------

    def generate(self, out_dir: Union[str, Path]) -> DatasetManifest:
        """
        Генерация корпуса на диск

        Пишет WAV-файлы (PCM 16 бит, 16 кГц), общий манифест manifest.csv,
        манифест каждого домена manifest_<domain>.csv и corpus_spec.json.
        Пути в манифестах относительны каталога out_dir.

        Args:
            out_dir: Каталог корпуса

        Returns:
            Общий манифест

        Raises:
            OSError: Если файл не удалось записать (в сообщении путь)
        """
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        spec = self.spec
        self.logger.info(
            f"🎼 Генерация корпуса: {spec.num_domains} доменов "
            f"(+{spec.num_unseen_domains} неизвестных), {spec.clips_per_domain_per_class} клипов "
            f"на класс, seed={spec.seed}"
        )

        domain_manifests: List[DatasetManifest] = []
        for index, domain in enumerate(self.domain_names()):
            entries = []
            for label in (LABEL_REAL, LABEL_FAKE):
                kind = "fake" if label == LABEL_FAKE else "real"
                for clip_index in range(spec.clips_per_domain_per_class):
                    relative = f"{domain}/{kind}/{domain}_{kind}_{clip_index:04d}.wav"
                    self._write_wav(out_path / relative, self.clip(index, label, clip_index))
                    entries.append(ManifestEntry(path=relative, label=label, domain=domain, split="eval"))

            if index < spec.num_domains:
                manifest = make_splits(entries, DEFAULT_RATIOS, seed=spec.seed + index, name=domain)
            else:
                manifest = DatasetManifest(name=domain, entries=tuple(entries))
            self.file_handler.write_manifest(manifest, out_path / f"manifest_{domain}.csv")
            domain_manifests.append(manifest)
            artifacts = self.domain_params(index)["artifacts"]
            self.logger.info(f"   {domain}: {len(manifest)} записей, артефакты {artifacts}")

        corpus = DatasetManifest(
            name="synth",
            entries=tuple(e for manifest in domain_manifests for e in manifest.entries),
        )
        self.file_handler.write_manifest(corpus, out_path / MANIFEST_FILE)
        self.file_handler.write_json(self._metadata(), out_path / METADATA_FILE)
        self.logger.info(f"✅ Корпус сохранен в {out_path}: {len(corpus)} файлов")
        return corpus

    def _write_wav(self, path: Path, samples: np.ndarray):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            sf.write(str(path), samples, SAMPLE_RATE, subtype="PCM_16")
        except (OSError, RuntimeError) as e:
            raise OSError(f"Не удалось записать аудиофайл {path}: {e}") from e

    def _metadata(self) -> Dict[str, object]:
        domains = {}
        for index, name in enumerate(self.domain_names()):
            params = self.domain_params(index)
            domains[name] = {
                **params,
                "f0_band": list(params["f0_band"]),
                "unseen": index >= self.spec.num_domains,
            }
        return {"spec": asdict(self.spec), "sample_rate": SAMPLE_RATE, "domains": domains}


def synth_corpus(
    spec: SynthCorpusSpec, out_dir: Union[str, Path], logger: Optional[logging.Logger] = None
) -> DatasetManifest:
    """Генерация синтетического корпуса (см. SynthCorpusGenerator.generate)"""
    return SynthCorpusGenerator(spec, logger).generate(out_dir)


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description='Генератор синтетического корпуса')
    parser.add_argument('--output', '-o', default='data', help='Каталог корпуса')
    parser.add_argument('--seed', '-s', type=int, default=0, help='Сид генератора')
    parser.add_argument('--domains', type=int, default=4, help='Число известных доменов')
    parser.add_argument('--per-domain', type=int, default=32, help='Клипов на домен и класс')
    parser.add_argument('--unseen', type=int, default=0, help='Число неизвестных доменов')

    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(message)s')
    synth_corpus(
        SynthCorpusSpec(
            num_domains=args.domains,
            clips_per_domain_per_class=args.per_domain,
            seed=args.seed,
            num_unseen_domains=args.unseen,
        ),
        args.output,
    )
