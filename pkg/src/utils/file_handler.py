"""
Утилиты для работы с файлами
Манифесты, контрольные точки моделей, журналы обучения и отчеты оценки
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402

from ..models.checkpoint import (  # noqa: E402
    FORMAT_VERSION,
    KIND_EXPERT,
    KIND_MOE,
    ExpertCheckpoint,
    MoECheckpoint,
)
from ..models.gating import build_gate  # noqa: E402
from ..models.lcnn import ARCH_TAG, LCNNExpert  # noqa: E402
from ..models.manifest import MANIFEST_COLUMNS, DatasetManifest, ManifestEntry  # noqa: E402
from ..models.moe import MoEModel  # noqa: E402
from ..models.report import ALL_ROW, KNOWN_ROW, EvalReport, GateProfile, ScoreRecord  # noqa: E402

WEIGHTS_FILE = "model.pt"
SIDECAR_FILE = "model.json"
TRAIN_LOG_FILE = "train_log.csv"
RUN_CONFIG_FILE = "run_config.json"
TRAIN_LOG_COLUMNS = ["epoch", "train_loss", "dev_loss", "lr", "stopped"]


class FileHandler:
    """
    Класс для обработки файловых операций

    Обеспечивает загрузку и сохранение манифестов, моделей и отчетов,
    валидацию входных данных и обработку ошибок
    """

    def __init__(self, logger: logging.Logger):
        """
        Инициализация обработчика файлов

        Args:
            logger: Логгер для записи событий
        """
        self.logger = logger

    # ------------------------------------------------------------------
    # Манифесты
    # ------------------------------------------------------------------

    def load_manifest(self, file_path: Union[str, Path]) -> DatasetManifest:
        """
        Загрузка манифеста из CSV

        Ожидаемый формат файла (заголовок обязателен):
        path,label,domain,split

        Args:
            file_path: Путь к CSV-файлу

        Returns:
            Манифест с записями, отсортированными по пути

        Raises:
            FileNotFoundError: Если файл не найден
            ValueError: Если заголовок или строка некорректны (с номером строки)
        """
        file_path = Path(file_path)

        if not file_path.exists():
            raise FileNotFoundError(f"Файл манифеста не найден: {file_path}")

        self.logger.debug(f"📄 Чтение манифеста из {file_path}")

        try:
            frame = pd.read_csv(
                file_path,
                dtype=str,
                keep_default_na=False,
                skip_blank_lines=False,
                index_col=False,
                encoding="utf-8",
            )
        except pd.errors.ParserError as e:
            raise ValueError(f"Ошибка разбора манифеста {file_path}: {e}") from e
        except pd.errors.EmptyDataError as e:
            raise ValueError(f"Манифест {file_path} пуст") from e

        frame = frame.fillna("")

        if tuple(frame.columns) != MANIFEST_COLUMNS:
            raise ValueError(
                f"строка 1: заголовок должен быть {','.join(MANIFEST_COLUMNS)}, "
                f"получено {','.join(map(str, frame.columns))}"
            )

        entries = []
        for index, row in enumerate(frame.itertuples(index=False)):
            line_number = index + 2  # строка 1 - заголовок

            # Пропускаем пустые строки
            if not any(str(value).strip() for value in row):
                continue

            entries.append(self._parse_manifest_row(row, line_number))

        if not entries:
            raise ValueError(f"Манифест {file_path} не содержит ни одной записи")

        manifest = DatasetManifest(name=file_path.stem, entries=tuple(entries))
        self.logger.info(f"📄 Загружено {len(manifest)} записей из манифеста {file_path.name}")
        return manifest

    def _parse_manifest_row(self, row: Any, line_number: int) -> ManifestEntry:
        """
        Разбор и валидация строки манифеста

        Raises:
            ValueError: С указанием номера строки
        """
        path, label, domain, split = (str(value).strip() for value in row)
        try:
            label_value = int(label)
        except ValueError:
            raise ValueError(
                f"строка {line_number}: метка должна быть целым числом, получено {label!r}"
            ) from None

        try:
            return ManifestEntry(path=path, label=label_value, domain=domain, split=split)
        except ValueError as e:
            raise ValueError(f"строка {line_number}: {e}") from None

    def write_manifest(self, manifest: DatasetManifest, file_path: Union[str, Path]) -> Path:
        """
        Сохранение манифеста в CSV

        Args:
            manifest: Манифест
            file_path: Путь к файлу

        Returns:
            Путь к сохраненному файлу
        """
        output_path = Path(file_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        frame = pd.DataFrame(
            [(e.path, e.label, e.domain, e.split) for e in manifest.entries],
            columns=list(MANIFEST_COLUMNS),
        )
        try:
            frame.to_csv(output_path, index=False, lineterminator="\n", encoding="utf-8")
        except OSError as e:
            self.logger.error(f"❌ Ошибка сохранения манифеста {output_path}: {e}")
            raise

        self.logger.debug(f"📄 Манифест сохранен: {output_path} ({len(manifest)} записей)")
        return output_path

    # ------------------------------------------------------------------
    # Контрольные точки
    # ------------------------------------------------------------------

    @staticmethod
    def checkpoint_dir(path: Union[str, Path]) -> Path:
        """Каталог контрольной точки (допускается путь к model.pt)"""
        path = Path(path)
        return path.parent if path.name == WEIGHTS_FILE else path

    def checkpoint_kind(self, path: Union[str, Path]) -> str:
        """
        Тип контрольной точки по сайдкару

        Raises:
            FileNotFoundError: Если контрольная точка не найдена
        """
        sidecar = self._read_sidecar(self.checkpoint_dir(path))
        return sidecar.get("kind", "")

    def save_expert(self, checkpoint: ExpertCheckpoint, out_dir: Union[str, Path]) -> Path:
        """
        Сохранение эксперта: model.pt + model.json

        Args:
            checkpoint: Эксперт и метаданные
            out_dir: Каталог контрольной точки

        Returns:
            Каталог контрольной точки
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        torch.save(
            {
                "format_version": FORMAT_VERSION,
                "kind": KIND_EXPERT,
                "arch_tag": ARCH_TAG,
                "domain": checkpoint.domain,
                "state_dict": checkpoint.model.state_dict(),
            },
            out_dir / WEIGHTS_FILE,
        )
        sidecar = {
            "format_version": FORMAT_VERSION,
            "kind": KIND_EXPERT,
            "arch_tag": ARCH_TAG,
            "domain": checkpoint.domain,
            "epochs_run": checkpoint.epochs_run,
            "best_dev_loss": checkpoint.best_dev_loss,
            **checkpoint.meta,
        }
        self.write_json(sidecar, out_dir / SIDECAR_FILE)
        if checkpoint.train_log:
            self.write_train_log(checkpoint.train_log, out_dir / TRAIN_LOG_FILE)
        self.logger.info(f"💾 Эксперт ({checkpoint.domain}) сохранен в {out_dir}")
        return out_dir

    def load_expert(self, path: Union[str, Path]) -> ExpertCheckpoint:
        """
        Загрузка эксперта

        Raises:
            FileNotFoundError: Если контрольная точка не найдена
            ValueError: Если тег архитектуры не совпадает или это не эксперт
        """
        ckpt_dir = self.checkpoint_dir(path)
        sidecar = self._read_sidecar(ckpt_dir)
        payload = self._read_weights(ckpt_dir)

        if payload.get("kind") != KIND_EXPERT:
            raise ValueError(f"{ckpt_dir} не является контрольной точкой эксперта")
        if payload.get("arch_tag") != ARCH_TAG:
            raise ValueError(
                f"Несовместимая архитектура в {ckpt_dir}: {payload.get('arch_tag')!r}, "
                f"ожидается {ARCH_TAG!r}"
            )

        expert = LCNNExpert()
        expert.load_state_dict(payload["state_dict"])
        expert.eval()

        self.logger.debug(f"📦 Эксперт {payload['domain']} загружен из {ckpt_dir}")
        return ExpertCheckpoint(
            model=expert,
            domain=payload["domain"],
            meta={k: v for k, v in sidecar.items() if k not in ("epochs_run", "best_dev_loss")},
            epochs_run=int(sidecar.get("epochs_run", 0)),
            best_dev_loss=float(sidecar.get("best_dev_loss", float("inf"))),
        )

    def save_moe(self, checkpoint: MoECheckpoint, out_dir: Union[str, Path]) -> Path:
        """
        Сохранение смеси экспертов одним контейнером (эксперты, гейт, p, вариант, N)

        Args:
            checkpoint: Модель и метаданные
            out_dir: Каталог контрольной точки

        Returns:
            Каталог контрольной точки
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        model = checkpoint.model

        torch.save(
            {
                "format_version": FORMAT_VERSION,
                "kind": KIND_MOE,
                "arch_tag": ARCH_TAG,
                "variant": model.variant,
                "num_experts": model.num_experts,
                "domains": list(model.domains),
                "state_dict": model.state_dict(),
            },
            out_dir / WEIGHTS_FILE,
        )
        sidecar = {
            "format_version": FORMAT_VERSION,
            "kind": KIND_MOE,
            "arch_tag": ARCH_TAG,
            "variant": model.variant,
            "num_experts": model.num_experts,
            "domains": list(model.domains),
            "epochs_run": checkpoint.epochs_run,
            "best_dev_loss": checkpoint.best_dev_loss,
            **checkpoint.meta,
        }
        self.write_json(sidecar, out_dir / SIDECAR_FILE)
        if checkpoint.train_log:
            self.write_train_log(checkpoint.train_log, out_dir / TRAIN_LOG_FILE)
        self.logger.info(f"💾 MoE ({model.variant}, N={model.num_experts}) сохранена в {out_dir}")
        return out_dir

    def load_moe(self, path: Union[str, Path]) -> MoECheckpoint:
        """
        Загрузка смеси экспертов

        Raises:
            FileNotFoundError: Если контрольная точка не найдена
            ValueError: Если это не MoE или архитектура экспертов не совпадает
        """
        ckpt_dir = self.checkpoint_dir(path)
        sidecar = self._read_sidecar(ckpt_dir)
        payload = self._read_weights(ckpt_dir)

        if payload.get("kind") != KIND_MOE:
            raise ValueError(f"{ckpt_dir} не является контрольной точкой MoE")
        if payload.get("arch_tag") != ARCH_TAG:
            raise ValueError(f"Несовместимая архитектура экспертов в {ckpt_dir}")

        num_experts = int(payload["num_experts"])
        experts = [LCNNExpert() for _ in range(num_experts)]
        gate = build_gate(payload["variant"], num_experts, seed=0)
        model = MoEModel(experts, gate, payload["domains"])
        model.load_state_dict(payload["state_dict"])
        model.eval()

        self.logger.debug(f"📦 MoE ({payload['variant']}) загружена из {ckpt_dir}")
        return MoECheckpoint(
            model=model,
            meta={k: v for k, v in sidecar.items() if k not in ("epochs_run", "best_dev_loss")},
            epochs_run=int(sidecar.get("epochs_run", 0)),
            best_dev_loss=float(sidecar.get("best_dev_loss", float("inf"))),
        )

    def _read_sidecar(self, ckpt_dir: Path) -> Dict[str, Any]:
        sidecar_path = ckpt_dir / SIDECAR_FILE
        if not sidecar_path.exists():
            raise FileNotFoundError(f"Контрольная точка не найдена: {ckpt_dir}")
        with open(sidecar_path, "r", encoding="utf-8") as file:
            return json.load(file)

    def _read_weights(self, ckpt_dir: Path) -> Dict[str, Any]:
        weights_path = ckpt_dir / WEIGHTS_FILE
        if not weights_path.exists():
            raise FileNotFoundError(f"Файл весов не найден: {weights_path}")
        payload = torch.load(weights_path, map_location="cpu", weights_only=True)
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"Неподдерживаемая версия формата в {weights_path}: "
                f"{payload.get('format_version')!r}"
            )
        return payload

    # ------------------------------------------------------------------
    # Журналы и конфигурация
    # ------------------------------------------------------------------

    def write_json(self, data: Dict[str, Any], file_path: Union[str, Path]) -> Path:
        """Сохранение JSON с фиксированным порядком ключей"""
        output_path = Path(file_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w", encoding="utf-8") as file:
            json.dump(data, file, ensure_ascii=False, indent=2, sort_keys=True)
            file.write("\n")
        return output_path

    def write_train_log(self, rows: List[Dict[str, Any]], file_path: Union[str, Path]) -> Path:
        """
        Журнал обучения по эпохам: epoch,train_loss,dev_loss,lr,stopped

        Args:
            rows: Записи эпох
            file_path: Путь к CSV

        Returns:
            Путь к файлу
        """
        output_path = Path(file_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(rows, columns=TRAIN_LOG_COLUMNS)
        frame["stopped"] = frame["stopped"].astype(int)
        frame.to_csv(output_path, index=False, lineterminator="\n", float_format="%.8g")
        self.logger.debug(f"📝 Журнал обучения ({len(rows)} эпох) сохранен в {output_path}")
        return output_path

    def write_scores(self, records: Sequence[ScoreRecord], file_path: Union[str, Path]) -> Path:
        """Оценки записей: path,label,domain,score"""
        output_path = Path(file_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(
            [(r.path, r.y, r.domain, r.score) for r in records],
            columns=["path", "label", "domain", "score"],
        )
        frame.to_csv(output_path, index=False, lineterminator="\n", float_format="%.8f")
        return output_path

    # ------------------------------------------------------------------
    # Отчеты
    # ------------------------------------------------------------------

    def emit_report(
        self, report: Union[EvalReport, GateProfile], out_dir: Union[str, Path]
    ) -> List[Path]:
        """
        Сохранение отчета

        EvalReport -> report_<system>.csv (dataset,eer_pct,auc_pct);
        GateProfile -> gate_profile.csv (dataset,alpha_1..alpha_N),
        gate_entropy.csv и столбчатая диаграмма gate_<dataset>.png на датасет

        Args:
            report: Таблица метрик или профиль гейта
            out_dir: Каталог вывода

        Returns:
            Список созданных файлов
        """
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            if isinstance(report, EvalReport):
                return [self._write_eval_report(report, out_dir)]
            return self._write_gate_profile(report, out_dir)
        except OSError as e:
            self.logger.error(f"❌ Ошибка сохранения отчета в {out_dir}: {e}")
            raise

    def _write_eval_report(self, report: EvalReport, out_dir: Path) -> Path:
        output_path = out_dir / f"report_{report.system}.csv"
        frame = pd.DataFrame(report.table(), columns=["dataset", "eer_pct", "auc_pct"])
        frame.to_csv(output_path, index=False, lineterminator="\n", float_format="%.2f")
        self.logger.info(f"📊 Отчет {report.system} сохранен: {output_path}")
        return output_path

    def _write_gate_profile(self, profile: GateProfile, out_dir: Path) -> List[Path]:
        columns = [f"alpha_{i + 1}" for i in range(profile.num_experts)]
        rows = [[name, *vector] for name, vector in profile.weights.items()]
        profile_path = out_dir / "gate_profile.csv"
        pd.DataFrame(rows, columns=["dataset", *columns]).to_csv(
            profile_path, index=False, lineterminator="\n", float_format="%.6f"
        )

        entropy_path = out_dir / "gate_entropy.csv"
        pd.DataFrame(
            list(profile.entropy.items()), columns=["dataset", "entropy"]
        ).to_csv(entropy_path, index=False, lineterminator="\n", float_format="%.6f")

        written = [profile_path, entropy_path]
        labels = profile.domains or columns
        for name, vector in profile.weights.items():
            written.append(self._plot_gate_weights(name, vector, labels, out_dir))

        self.logger.info(f"📊 Профиль гейта ({len(profile.weights)} датасетов) сохранен в {out_dir}")
        return written

    def _plot_gate_weights(
        self, dataset: str, weights: List[float], labels: List[str], out_dir: Path
    ) -> Path:
        figure, axis = plt.subplots(figsize=(4, 3))
        axis.bar(range(len(weights)), weights, color="tab:blue")
        axis.set_xticks(range(len(weights)))
        axis.set_xticklabels(labels, rotation=30)
        axis.set_ylim(0.0, 1.0)
        axis.set_ylabel("средний вес гейта")
        axis.set_title(dataset)
        figure.tight_layout()

        plot_path = out_dir / f"gate_{dataset}.png"
        figure.savefig(plot_path, dpi=100)
        plt.close(figure)
        return plot_path

    def write_results_table(
        self, reports: Sequence[EvalReport], file_path: Union[str, Path]
    ) -> Path:
        """
        Сводная таблица систем: строка на систему, столбцы
        <dataset>_eer_pct, <dataset>_auc_pct, затем Known и All

        Args:
            reports: Отчеты систем
            file_path: Путь к CSV

        Returns:
            Путь к файлу
        """
        if not reports:
            raise ValueError("Нет отчетов для сводной таблицы")

        table_rows = []
        columns: List[str] = ["system"]
        for report in reports:
            row: Dict[str, Any] = {"system": report.system}
            for name, eer, auc in report.table():
                for column, value in ((f"{name}_eer_pct", eer), (f"{name}_auc_pct", auc)):
                    row[column] = value
                    if column not in columns:
                        columns.append(column)
            table_rows.append(row)

        # агрегаты всегда в конце
        tail = [c for c in columns if c.rsplit("_", 2)[0] in (KNOWN_ROW, ALL_ROW)]
        columns = [c for c in columns if c not in tail] + tail

        output_path = Path(file_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(table_rows, columns=columns).to_csv(
            output_path, index=False, lineterminator="\n", float_format="%.2f"
        )
        self.logger.info(f"📊 Сводная таблица ({len(reports)} систем) сохранена: {output_path}")
        return output_path
