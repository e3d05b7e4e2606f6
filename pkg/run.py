"""
Скрипт полного настольного эксперимента
Корпус -> 4 эксперта -> совместная модель -> MoE (standard, enhanced) -> оценка -> профиль гейта
"""

import argparse
import subprocess
import sys
from pathlib import Path
from typing import List

NUM_DOMAINS = 4
NUM_UNSEEN = 2


def create_directories(workdir: Path):
    """Создание необходимых директорий"""
    for directory in (workdir, workdir / "checkpoints", workdir / "reports", Path("logs")):
        directory.mkdir(parents=True, exist_ok=True)
    print(f"📁 Директории созданы в {workdir}")


def run_stage(name: str, args: List[str]) -> bool:
    """Запуск одной стадии через CLI детектора"""
    print(f"🚀 {name}...")
    try:
        subprocess.run([sys.executable, "main.py", *args], check=True)
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Стадия {name} завершилась с кодом {e.returncode}")
        return False


def main():
    parser = argparse.ArgumentParser(description='Полный эксперимент со смесью экспертов')
    parser.add_argument('--seed', type=int, default=0, help='Единый сид эксперимента')
    parser.add_argument('--workdir', default='output', help='Каталог эксперимента')
    parser.add_argument('--per-domain', type=int, default=64, help='Клипов на домен и класс')
    parser.add_argument('--epochs', type=int, default=None, help='Максимум эпох (по умолчанию 100)')
    args = parser.parse_args()

    workdir = Path(args.workdir)
    corpus = workdir / "corpus"
    checkpoints = workdir / "checkpoints"
    common = ["--seed", str(args.seed)]
    if args.epochs is not None:
        common += ["--epochs", str(args.epochs)]

    print("🧪 Детектор синтетической речи: смесь экспертов")
    print("=" * 40)
    create_directories(workdir)

    domains = [f"synth_{k}" for k in range(NUM_DOMAINS)]
    manifests = [str(corpus / f"manifest_{domain}.csv") for domain in domains]
    experts = [str(checkpoints / f"expert_{domain}") for domain in domains]

    stages = [
        ("Генерация корпуса", [
            "synth-corpus", "--out", str(corpus), "--domains", str(NUM_DOMAINS),
            "--per-domain", str(args.per_domain), "--unseen", str(NUM_UNSEEN), *common,
        ]),
    ]
    for domain, manifest, expert in zip(domains, manifests, experts):
        stages.append((f"Эксперт {domain}", [
            "train-expert", "--manifest", manifest, "--out", expert, *common,
        ]))
    stages.append(("Совместная модель", [
        "train-joint", "--manifests", *manifests, "--out", str(checkpoints / "joint"), *common,
    ]))
    for variant in ("standard", "enhanced"):
        stages.append((f"MoE ({variant})", [
            "train-moe", "--variant", variant, "--experts", *experts,
            "--manifests", *manifests, "--out", str(checkpoints / f"moe_{variant}"), *common,
        ]))
    stages.append(("Оценка", [
        "evaluate",
        "--model", *experts, str(checkpoints / "joint"),
        str(checkpoints / "moe_standard"), str(checkpoints / "moe_enhanced"),
        "--ensemble", *experts,
        "--manifests", str(corpus / "manifest.csv"),
        "--known", *domains,
        "--out", str(workdir / "reports"), *common,
    ]))
    stages.append(("Профиль гейта", [
        "gate-profile", "--model", str(checkpoints / "moe_enhanced"),
        "--manifests", str(corpus / "manifest.csv"),
        "--out", str(workdir / "reports" / "gate"), *common,
    ]))

    for name, stage_args in stages:
        if not run_stage(name, stage_args):
            return 1

    print("\n✅ Эксперимент завершен!")
    print(f"📂 Результаты в директории: {workdir / 'reports'}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
