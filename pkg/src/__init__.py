"""
Детектор синтетической речи на основе смеси экспертов
Корневой пакет системы
"""

__version__ = "1.0.0"
__author__ = "Amir B."
__description__ = "Детектор поддельной речи: LCNN-эксперты доменов, гейтирующая сеть и слияние логитов"
