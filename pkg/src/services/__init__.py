"""
Сервисы детектора
Содержит бизнес-логику: корпуса, фронтенд, детекцию, обучение и оценку
"""

from .detection_service import ensemble_average, moe_forward
from .evaluation_service import EvaluationService, compute_auc, compute_eer
from .frontend_service import FeatureExtractor
from .logging_service import DetectorLogger, setup_logging
from .training_service import TrainingService

__all__ = [
    'ensemble_average',
    'moe_forward',
    'EvaluationService',
    'compute_auc',
    'compute_eer',
    'FeatureExtractor',
    'DetectorLogger',
    'setup_logging',
    'TrainingService'
]
