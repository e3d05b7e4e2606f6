"""
Сервис логирования
Настройка и конфигурация системы логирования детектора синтетической речи
"""

import logging
import platform
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import psutil
import torch

LOGGER_NAME = 'moe_detector'


class ColoredFormatter(logging.Formatter):
    """
    Форматтер с цветным выводом для консоли
    Добавляет цвета к различным уровням логирования
    """

    # Цветовые коды ANSI
    COLORS = {
        'DEBUG': '\033[36m',      # Голубой
        'INFO': '\033[32m',       # Зеленый
        'WARNING': '\033[33m',    # Желтый
        'ERROR': '\033[31m',      # Красный
        'CRITICAL': '\033[35m',   # Пурпурный
        'RESET': '\033[0m'        # Сброс цвета
    }

    def format(self, record):
        """
        Форматирование записи лога с добавлением цветов

        Args:
            record: Запись лога

        Returns:
            Отформатированная строка с цветами
        """
        original_levelname = record.levelname
        level_color = self.COLORS.get(record.levelname, '')
        record.levelname = f"{level_color}{record.levelname:8}{self.COLORS['RESET']}"

        formatted = super().format(record)

        # Восстанавливаем исходный уровень для остальных обработчиков
        record.levelname = original_levelname
        return formatted


class DetectorLogger:
    """
    Специализированный логгер детектора
    Предоставляет методы для логирования стадий обучения и оценки
    """

    def __init__(self, logger: logging.Logger):
        """
        Args:
            logger: Базовый логгер
        """
        self.logger = logger
        self._start_time = datetime.now()

    def log_stage(self, stage: str, details: str = ""):
        """
        Логирование начала стадии (обучение эксперта, оценка и т.п.)

        Args:
            stage: Название стадии
            details: Дополнительные детали
        """
        message = f"🚀 Стадия {stage}"
        if details:
            message += f" - {details}"
        self.logger.info(message)

    def log_epoch(self, tag: str, epoch: int, train_loss: float, dev_loss: float,
                  lr: float, improved: bool):
        """
        Логирование итогов эпохи

        Args:
            tag: Обучаемая модель
            epoch: Номер эпохи (с 1)
            train_loss: Средняя потеря на train
            dev_loss: Потеря на dev
            lr: Скорость обучения эпохи
            improved: Улучшилась ли лучшая dev-потеря
        """
        marker = "⭐" if improved else "  "
        self.logger.info(
            f"{marker} [{tag}] эпоха {epoch:3d}: train={train_loss:.4f} "
            f"dev={dev_loss:.4f} lr={lr:.2e}"
        )

    def log_metrics(self, system: str, rows: Dict[str, tuple]):
        """
        Логирование метрик системы по датасетам

        Args:
            system: Имя системы
            rows: датасет -> (EER %, AUC %)
        """
        self.logger.info(f"📈 Метрики {system}:")
        for name, (eer, auc) in rows.items():
            self.logger.info(f"   {name:>10}: EER={eer:6.2f}%  AUC={auc:6.2f}%")

    def log_system_stats(self, stats: dict):
        """
        Логирование сводной статистики

        Args:
            stats: Словарь со статистикой
        """
        self.logger.info("📈 Сводная статистика:")
        for key, value in stats.items():
            if isinstance(value, float):
                self.logger.info(f"   {key}: {value:.4f}")
            else:
                self.logger.info(f"   {key}: {value}")

    def log_error_with_context(self, error: Exception, context: str):
        """
        Логирование ошибки с контекстом

        Args:
            error: Исключение
            context: Контекст возникновения ошибки
        """
        self.logger.error(f"❌ Ошибка в {context}: {type(error).__name__}: {error}")

    def get_uptime(self) -> str:
        """
        Получение времени работы

        Returns:
            Строка с временем работы
        """
        uptime = datetime.now() - self._start_time
        return str(uptime).split('.')[0]  # Убираем микросекунды


def setup_logging(debug_mode: bool = False, log_file: Optional[str] = None) -> DetectorLogger:
    """
    Настройка системы логирования

    Args:
        debug_mode: Включить режим отладки
        log_file: Путь к файлу логов (опционально)

    Returns:
        Настроенный логгер детектора
    """
    log_level = logging.DEBUG if debug_mode else logging.INFO

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    # Очищаем существующие обработчики
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
    else:
        log_dir = Path('logs')
        log_dir.mkdir(exist_ok=True)
        log_path = log_dir / f"moe_detector_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"

    console_format = '%(asctime)s | %(levelname)s | %(message)s'
    file_format = '%(asctime)s | %(levelname)-8s | %(name)s | %(funcName)s:%(lineno)d | %(message)s'

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(log_level)
    if sys.stdout.isatty():  # Если вывод в терминал, используем цвета
        console_handler.setFormatter(ColoredFormatter(console_format))
    else:
        console_handler.setFormatter(logging.Formatter(console_format))
    logger.addHandler(console_handler)

    # В файл записываем все
    file_handler = logging.FileHandler(log_path, encoding='utf-8')
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(file_format))
    logger.addHandler(file_handler)

    logger.debug(f"Система логирования инициализирована, файл логов: {log_path}")
    return DetectorLogger(logger)


def get_logger() -> logging.Logger:
    """Логгер детектора без настройки обработчиков (для библиотечного использования и тестов)"""
    return logging.getLogger(LOGGER_NAME)


def log_system_info():
    """
    Логирование информации о системе
    """
    logger = get_logger()

    logger.info("💻 Информация о системе:")
    logger.info(f"   Платформа: {platform.platform()}")
    logger.info(f"   Python: {platform.python_version()}")
    logger.info(f"   PyTorch: {torch.__version__}")
    logger.info(f"   Ядер CPU: {psutil.cpu_count(logical=True)}")
    logger.info(f"   ОЗУ: {psutil.virtual_memory().total // (1024**3)} ГБ")
