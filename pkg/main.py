"""
Детектор синтетической речи на основе смеси экспертов
Точка входа командной строки: генерация корпуса, обучение экспертов, базовых
моделей и смеси экспертов, оценка и профили весов гейта
"""

import argparse
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.models.checkpoint import KIND_EXPERT, KIND_MOE
from src.models.config import RunConfig
from src.models.manifest import DatasetManifest, SynthCorpusSpec
from src.models.moe import EnsembleAverage
from src.models.report import EvalReport
from src.services.evaluation_service import Detector, EvaluationService
from src.services.frontend_service import FeatureExtractor
from src.services.logging_service import log_system_info, setup_logging
from src.services.training_service import TrainingService
from src.utils.data_generator import synth_corpus
from src.utils.file_handler import RUN_CONFIG_FILE, FileHandler

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class DetectorSystem:
    """
    Главный класс системы детекции

    Отвечает за координацию всех компонентов:
    - Генерацию синтетического корпуса
    - Обучение экспертов, совместной базовой модели и смеси экспертов
    - Оценку систем и построение профилей гейта
    - Сохранение результатов и конфигурации запуска
    """

    def __init__(self, config: RunConfig, debug_mode: bool = False, log_file: Optional[str] = None):
        """
        Инициализация системы

        Args:
            config: Разрешенная конфигурация запуска
            debug_mode: Режим отладки для подробного логирования
            log_file: Путь к файлу логов
        """
        self.events = setup_logging(debug_mode, log_file)
        self.logger = self.events.logger
        self.config = config

        self.file_handler = FileHandler(self.logger)
        self.features = FeatureExtractor(self.logger, config.mel, config.data_root)
        self.training = TrainingService(self.logger, self.features)
        self.evaluation = EvaluationService(self.logger, self.features)

        self.logger.info(f"🧪 Детектор запущен, seed={config.seed}")

    # ------------------------------------------------------------------
    # Команды
    # ------------------------------------------------------------------

    def synth_corpus(self, out_dir: str, spec: SynthCorpusSpec) -> DatasetManifest:
        """Генерация синтетического корпуса"""
        self.events.log_stage("synth-corpus", f"каталог {out_dir}")
        corpus = synth_corpus(spec, out_dir, self.logger)
        self._write_run_config(out_dir, "synth-corpus", {"corpus": asdict(spec)})
        return corpus

    def train_expert(self, manifest_path: str, out_dir: str, domain: Optional[str] = None) -> Path:
        """Предобучение эксперта на манифесте одного домена"""
        manifest = self._load_manifests([manifest_path])[0]
        checkpoint = self.training.train_expert(manifest, self.config.train, domain)
        ckpt_dir = self.file_handler.save_expert(checkpoint, out_dir)
        self._write_run_config(out_dir, "train-expert", {"manifest": manifest_path, "domain": domain})
        return ckpt_dir

    def train_joint(self, manifest_paths: Sequence[str], out_dir: str) -> Path:
        """Совместно обученная базовая модель на всех манифестах"""
        manifests = self._load_manifests(manifest_paths)
        checkpoint = self.training.train_joint_baseline(manifests, self.config.train)
        ckpt_dir = self.file_handler.save_expert(checkpoint, out_dir)
        self._write_run_config(out_dir, "train-joint", {"manifests": list(manifest_paths)})
        return ckpt_dir

    def train_moe(
        self, variant: str, expert_paths: Sequence[str], manifest_paths: Sequence[str], out_dir: str
    ) -> Path:
        """Совместное обучение смеси экспертов из предобученных экспертов"""
        experts = [self.file_handler.load_expert(path) for path in expert_paths]
        manifests = self._load_manifests(manifest_paths)
        checkpoint = self.training.train_moe(experts, variant, manifests, self.config.train)
        ckpt_dir = self.file_handler.save_moe(checkpoint, out_dir)
        self._write_run_config(
            out_dir,
            "train-moe",
            {"variant": variant, "experts": list(expert_paths), "manifests": list(manifest_paths)},
        )
        return ckpt_dir

    def evaluate(
        self,
        model_paths: Sequence[str],
        manifest_paths: Sequence[str],
        out_dir: str,
        ensemble_paths: Sequence[str] = (),
        ensemble_mode: str = "prob",
        split: str = "eval",
    ) -> int:
        """
        Оценка систем по датасетам

        Пишет report_<system>.csv, scores_<system>.csv и results_table.csv

        Returns:
            Число записей, которые не удалось оценить
        """
        systems: List[Tuple[str, Detector, List[str]]] = []
        for path in model_paths:
            detector, domains = self._load_detector(path)
            systems.append((Path(path).name, detector, domains))
        if ensemble_paths:
            experts = [self.file_handler.load_expert(path) for path in ensemble_paths]
            domains = [ckpt.domain for ckpt in experts]
            ensemble = EnsembleAverage([ckpt.model for ckpt in experts], domains, mode=ensemble_mode)
            systems.append(("ensemble", ensemble, domains))
        if not systems:
            raise ValueError("Не задано ни одной системы для оценки (--model или --ensemble)")

        datasets = self._datasets(manifest_paths)
        known = self._known_set(datasets, [name for _, _, domains in systems for name in domains])

        reports: List[EvalReport] = []
        failures = 0
        used_names: Dict[str, int] = {}
        for name, detector, _ in systems:
            used_names[name] = used_names.get(name, 0) + 1
            system = name if used_names[name] == 1 else f"{name}_{used_names[name]}"
            self.events.log_stage("evaluate", f"система {system}")

            report, records, errors = self.evaluation.evaluate(detector, datasets, known, split, system)
            failures += len(errors)
            reports.append(report)
            self.file_handler.emit_report(report, out_dir)
            self.file_handler.write_scores(records, Path(out_dir) / f"scores_{system}.csv")

        self.file_handler.write_results_table(reports, Path(out_dir) / "results_table.csv")
        self.events.log_system_stats({
            "систем": len(reports),
            "датасетов": len(datasets),
            "известные": ", ".join(known),
            "неоцененных записей": failures,
        })
        self.features.clear_cache()
        self._write_run_config(
            out_dir,
            "evaluate",
            {
                "models": list(model_paths),
                "ensemble": list(ensemble_paths),
                "ensemble_mode": ensemble_mode,
                "manifests": list(manifest_paths),
                "split": split,
                "known_used": known,
            },
        )
        return failures

    def gate_profile(self, model_path: str, manifest_paths: Sequence[str], out_dir: str,
                     split: str = "eval") -> Path:
        """Средние веса гейта MoE по датасетам"""
        detector, _ = self._load_detector(model_path)
        datasets = self._datasets(manifest_paths)
        self.events.log_stage("gate-profile", f"{len(datasets)} датасетов")

        profile = self.evaluation.gate_profile(detector, datasets, split)
        self.file_handler.emit_report(profile, out_dir)
        self._write_run_config(
            out_dir,
            "gate-profile",
            {"model": model_path, "manifests": list(manifest_paths), "split": split},
        )
        return Path(out_dir)

    # ------------------------------------------------------------------
    # Вспомогательные методы
    # ------------------------------------------------------------------

    def _load_manifests(self, paths: Sequence[str]) -> List[DatasetManifest]:
        manifests = [self.file_handler.load_manifest(path) for path in paths]
        # относительные пути манифеста считаются от его каталога, если корень не задан
        if self.features.data_root is None and paths:
            self.features.data_root = Path(paths[0]).parent
            self.logger.debug(f"📁 Корень данных: {self.features.data_root}")
        return manifests

    def _datasets(self, manifest_paths: Sequence[str]) -> Dict[str, DatasetManifest]:
        """Датасеты оценки: каждый домен каждого манифеста отдельно"""
        datasets: Dict[str, DatasetManifest] = {}
        for manifest in self._load_manifests(manifest_paths):
            for domain in manifest.domains():
                if domain in datasets:
                    self.logger.warning(f"⚠️ Домен {domain} встречается в нескольких манифестах")
                    continue
                datasets[domain] = manifest.by_domain(domain)
        return datasets

    def _known_set(self, datasets: Dict[str, DatasetManifest], domains: Sequence[str]) -> List[str]:
        """Известные датасеты: из конфигурации, иначе домены обучения оцениваемых систем"""
        candidates = self.config.known or list(dict.fromkeys(domains))
        return [name for name in candidates if name in datasets]

    def _load_detector(self, path: str) -> Tuple[Detector, List[str]]:
        kind = self.file_handler.checkpoint_kind(path)
        if kind == KIND_MOE:
            checkpoint = self.file_handler.load_moe(path)
            return checkpoint.model, checkpoint.domains
        if kind == KIND_EXPERT:
            expert = self.file_handler.load_expert(path)
            domains = expert.meta.get("source_domains") or [expert.domain]
            return expert.model, list(domains)
        raise ValueError(f"Неизвестный тип контрольной точки {path}: {kind!r}")

    def _write_run_config(self, out_dir: str, command: str, inputs: Dict[str, Any]):
        data = self.config.to_dict()
        data["command"] = command
        data["inputs"] = inputs
        self.file_handler.write_json(data, Path(out_dir) / RUN_CONFIG_FILE)


def _common_parser() -> argparse.ArgumentParser:
    """Общие флаги; значения по умолчанию None, чтобы переопределять только заданное"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Единый сид всех случайных процессов')
    common.add_argument('--data-root', default=None,
                        help='Корень относительных путей манифестов (или переменная MOE_DATA_ROOT)')
    common.add_argument('--config', default=None, help='JSON-файл конфигурации')
    common.add_argument('--debug', action='store_true', help='Режим отладки')
    common.add_argument('--log-file', default=None, help='Файл логов')
    common.add_argument('--epochs', type=int, default=None, help='Максимум эпох (100)')
    common.add_argument('--patience', type=int, default=None, help='Терпение ранней остановки (20)')
    common.add_argument('--batch-size', type=int, default=None, help='Размер батча (128 / 64 для MoE)')
    common.add_argument('--lr', type=float, default=None, help='Начальная скорость обучения (1e-4)')
    common.add_argument('--weight-decay', type=float, default=None, help='Weight decay AdamW (0.01)')
    common.add_argument('--freeze-expert-bn', dest='update_expert_bn', action='store_const',
                        const=False, default=None,
                        help='Не обновлять статистику BN экспертов при обучении MoE')
    common.add_argument('--n-mels', type=int, default=None, help='Число мел-полос (80)')
    common.add_argument('--n-fft', type=int, default=None, help='Размер окна STFT (1024)')
    common.add_argument('--hop', type=int, default=None, help='Шаг STFT (256)')
    common.add_argument('--known', nargs='+', default=None, help='Известные датасеты для строки Known')
    return common


def build_parser() -> argparse.ArgumentParser:
    """Парсер командной строки со всеми подкомандами"""
    common = _common_parser()
    parser = argparse.ArgumentParser(description='Детектор синтетической речи на основе смеси экспертов')
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth-corpus', parents=[common], help='Генерация синтетического корпуса')
    synth.add_argument('--out', required=True, help='Каталог корпуса')
    synth.add_argument('--domains', type=int, default=4, help='Число известных доменов')
    synth.add_argument('--per-domain', type=int, default=32, help='Клипов на домен и класс')
    synth.add_argument('--unseen', type=int, default=0, help='Число неизвестных доменов (только eval)')
    synth.add_argument('--clip-seconds', type=float, default=4.0, help='Длительность клипа')

    expert = commands.add_parser('train-expert', parents=[common], help='Обучение эксперта')
    expert.add_argument('--manifest', required=True, help='Манифест домена')
    expert.add_argument('--out', required=True, help='Каталог контрольной точки')
    expert.add_argument('--domain', default=None, help='Метка домена эксперта')

    joint = commands.add_parser('train-joint', parents=[common], help='Совместно обученная базовая модель')
    joint.add_argument('--manifests', nargs='+', required=True, help='Манифесты доменов')
    joint.add_argument('--out', required=True, help='Каталог контрольной точки')

    moe = commands.add_parser('train-moe', parents=[common], help='Обучение смеси экспертов')
    moe.add_argument('--variant', choices=['standard', 'enhanced'], required=True, help='Вариант гейта')
    moe.add_argument('--experts', nargs='+', required=True, help='Контрольные точки экспертов')
    moe.add_argument('--manifests', nargs='+', required=True, help='Манифесты доменов')
    moe.add_argument('--out', required=True, help='Каталог контрольной точки')

    evaluate = commands.add_parser('evaluate', parents=[common], help='Оценка EER/AUC')
    evaluate.add_argument('--model', nargs='+', default=[], help='Контрольные точки систем')
    evaluate.add_argument('--ensemble', nargs='+', default=[],
                          help='Эксперты для ансамбля-усреднения')
    evaluate.add_argument('--ensemble-mode', choices=['prob', 'logit'], default='prob',
                          help='Усреднять вероятности или логиты')
    evaluate.add_argument('--manifests', nargs='+', required=True, help='Манифесты датасетов')
    evaluate.add_argument('--split', choices=['train', 'dev', 'eval'], default='eval', help='Разбиение')
    evaluate.add_argument('--out', required=True, help='Каталог отчетов')

    profile = commands.add_parser('gate-profile', parents=[common], help='Профиль весов гейта')
    profile.add_argument('--model', required=True, help='Контрольная точка MoE')
    profile.add_argument('--manifests', nargs='+', required=True, help='Манифесты датасетов')
    profile.add_argument('--split', choices=['train', 'dev', 'eval'], default='eval', help='Разбиение')
    profile.add_argument('--out', required=True, help='Каталог отчетов')

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "data_root": args.data_root,
        "output_dir": args.out,
        "known": args.known,
        "train.epochs": args.epochs,
        "train.patience": args.patience,
        "train.batch_size": args.batch_size,
        "train.lr0": args.lr,
        "train.weight_decay": args.weight_decay,
        "train.update_expert_bn": args.update_expert_bn,
        "mel.n_mels": args.n_mels,
        "mel.n_fft": args.n_fft,
        "mel.hop": args.hop,
    }


def _dispatch(system: DetectorSystem, args: argparse.Namespace) -> int:
    config = system.config
    if args.command == 'synth-corpus':
        spec = SynthCorpusSpec(
            num_domains=args.domains,
            clips_per_domain_per_class=args.per_domain,
            clip_seconds=args.clip_seconds,
            seed=config.seed,
            num_unseen_domains=args.unseen,
        )
        system.synth_corpus(args.out, spec)
    elif args.command == 'train-expert':
        system.train_expert(args.manifest, args.out, args.domain)
    elif args.command == 'train-joint':
        system.train_joint(args.manifests, args.out)
    elif args.command == 'train-moe':
        system.train_moe(args.variant, args.experts, args.manifests, args.out)
    elif args.command == 'evaluate':
        failures = system.evaluate(
            args.model, args.manifests, args.out, args.ensemble, args.ensemble_mode, args.split
        )
        if failures:
            system.logger.error(f"❌ Не удалось оценить {failures} записей, подробности в логе")
            return EXIT_FAILURE
    elif args.command == 'gate-profile':
        system.gate_profile(args.model, args.manifests, args.out, args.split)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Главная функция программы"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = RunConfig.resolve(args.config, _overrides(args))
    except (FileNotFoundError, ValueError, TypeError) as e:
        print(f"Ошибка конфигурации: {e}", file=sys.stderr)
        return EXIT_USAGE

    system = DetectorSystem(config, debug_mode=args.debug, log_file=args.log_file)
    log_system_info()

    try:
        status = _dispatch(system, args)
    except FileNotFoundError as e:
        system.logger.error(f"❌ Стадия {args.command}: {e}")
        return EXIT_USAGE
    except Exception as e:
        system.events.log_error_with_context(e, f"стадии {args.command}")
        return EXIT_FAILURE

    if status == EXIT_OK:
        system.logger.info(f"✅ Стадия {args.command} завершена за {system.events.get_uptime()}")
    return status


if __name__ == "__main__":
    sys.exit(main())
