"""
Тесты обучения: расписание, ранняя остановка, стадии обучения на маленьком корпусе
"""

import logging
import math
from dataclasses import replace

import pytest
import torch
import torch.nn.functional as F

from conftest import make_moe
from src.models.checkpoint import ExpertCheckpoint
from src.models.config import TrainConfig
from src.models.lcnn import init_expert
from src.models.manifest import SynthCorpusSpec
from src.models.moe import EnsembleAverage
from src.services.corpus_service import pool_manifests
from src.services.evaluation_service import EvaluationService, compute_eer
from src.services.frontend_service import FeatureExtractor
from src.services.training_service import TrainingService, TrainState, cosine_lr, early_stop_update
from src.utils.data_generator import synth_corpus


DESK_DOMAINS = ["synth_0", "synth_1", "synth_2", "synth_3"]
DESK_CONFIG = TrainConfig(epochs=30, patience=10, batch_size=16)


def same_state(first: torch.nn.Module, second: torch.nn.Module) -> bool:
    a, b = first.state_dict(), second.state_dict()
    return a.keys() == b.keys() and all(torch.equal(a[name], b[name]) for name in a)


def expert_checkpoints(count: int = 2):
    return [ExpertCheckpoint(model=init_expert(10 + k), domain=f"synth_{k}") for k in range(count)]


class TestCosineLr:

    def test_start(self):
        assert cosine_lr(0, 100, 1e-4) == 1e-4

    def test_end(self):
        assert cosine_lr(100, 100, 1e-4) == 0.0

    def test_midpoint(self):
        assert cosine_lr(50, 100, 1e-4) == pytest.approx(5e-5, rel=1e-12)

    def test_monotone_decay(self):
        values = [cosine_lr(t, 10, 1.0) for t in range(11)]
        assert all(a > b for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("t, total", [(101, 100), (-1, 100), (0, 0)])
    def test_out_of_range(self, t, total):
        with pytest.raises(ValueError):
            cosine_lr(t, total, 1e-4)


class TestEarlyStop:

    def test_always_improving_never_stops(self):
        state = TrainState()
        for epoch in range(100):
            state, stop = early_stop_update(state, 1.0 - epoch * 1e-3, patience=20)
            assert not stop
        assert state.counter == 0 and state.best_epoch == 100

    def test_plateau_stops_after_patience(self):
        state = TrainState()
        losses = [5.0, 4.0, 3.0, 2.0, 1.0] + [1.0] * 30
        stopped_at = None
        for epoch, loss in enumerate(losses, start=1):
            state, stop = early_stop_update(state, loss, patience=20)
            if stop:
                stopped_at = epoch
                break
        assert stopped_at == 25
        assert state.best_epoch == 5

    def test_improvement_resets_counter(self):
        state = TrainState()
        state, _ = early_stop_update(state, 1.0, patience=20)
        for _ in range(19):
            state, stop = early_stop_update(state, 1.5, patience=20)
        assert state.counter == 19 and not stop
        state, stop = early_stop_update(state, 0.9, patience=20)
        assert state.counter == 0 and not stop

    def test_equal_loss_is_not_improvement(self):
        state, _ = early_stop_update(TrainState(), 0.5, patience=3)
        state, _ = early_stop_update(state, 0.5, patience=3)
        assert state.counter == 1 and state.best_epoch == 1

    def test_best_loss_non_increasing(self):
        generator = torch.Generator().manual_seed(0)
        state = TrainState()
        best = []
        for loss in torch.rand(50, generator=generator).tolist():
            state, stop = early_stop_update(state, loss, patience=50)
            assert state.counter <= 50
            best.append(state.best_dev_loss)
        assert all(a >= b for a, b in zip(best, best[1:]))

    def test_snapshot_is_a_copy(self):
        params = {"w": torch.ones(3)}
        state, _ = early_stop_update(TrainState(), 0.4, patience=2, params=params)
        params["w"].add_(1.0)
        assert torch.equal(state.snapshot["w"], torch.ones(3))

    def test_snapshot_kept_on_regression(self):
        state, _ = early_stop_update(TrainState(), 0.4, patience=5, params={"w": torch.zeros(1)})
        state, _ = early_stop_update(state, 0.6, patience=5, params={"w": torch.ones(1)})
        assert torch.equal(state.snapshot["w"], torch.zeros(1))

    @pytest.mark.parametrize("loss", [math.nan, math.inf])
    def test_non_finite_loss(self, loss):
        with pytest.raises(ValueError):
            early_stop_update(TrainState(), loss, patience=2)


class TestTrainConfig:

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.patience, cfg.lr0, cfg.weight_decay) == (100, 20, 1e-4, 0.01)
        assert cfg.batch_size_for("expert") == 128
        assert cfg.batch_size_for("joint") == 128
        assert cfg.batch_size_for("moe") == 64

    def test_explicit_batch_size_wins(self):
        assert TrainConfig(batch_size=8).batch_size_for("moe") == 8

    @pytest.mark.parametrize("changes", [{"epochs": 0}, {"patience": 0}, {"lr0": 0.0},
                                         {"batch_size": 3}, {"loss": "focal"}])
    def test_invalid(self, changes):
        with pytest.raises(ValueError):
            TrainConfig(**changes)


class TestTrainExpert:

    def test_log_and_checkpoint(self, logger, features, domain_manifests, tiny_train_config):
        ckpt = TrainingService(logger, features).train_expert(domain_manifests[0], tiny_train_config)
        assert ckpt.domain == "synth_0"
        assert ckpt.epochs_run == len(ckpt.train_log) == 2
        assert [row["epoch"] for row in ckpt.train_log] == [1, 2]
        assert ckpt.train_log[0]["lr"] == pytest.approx(1e-4)
        assert ckpt.best_dev_loss == min(row["dev_loss"] for row in ckpt.train_log)
        assert not ckpt.model.training
        assert ckpt.meta["batch_size"] == 4 and ckpt.meta["stage"] == "expert"

    def test_returned_model_has_best_dev_loss(self, logger, features, domain_manifests, tiny_train_config):
        service = TrainingService(logger, features)
        ckpt = service.train_expert(domain_manifests[0], tiny_train_config)
        dev = service.dev_loss(ckpt.model, lambda m, x: m(x)[0], domain_manifests[0], 4)
        assert dev == pytest.approx(ckpt.best_dev_loss, rel=1e-5)

    def test_deterministic(self, logger, features, domain_manifests, tiny_train_config):
        service = TrainingService(logger, features)
        first = service.train_expert(domain_manifests[0], tiny_train_config)
        second = service.train_expert(domain_manifests[0], tiny_train_config)
        assert same_state(first.model, second.model)
        assert first.train_log == second.train_log

    def test_degenerate_manifest(self, logger, features, domain_manifests, tiny_train_config):
        manifest = domain_manifests[0]
        only_fake = replace(manifest, entries=tuple(e for e in manifest.entries if e.label == 1))
        with pytest.raises(ValueError):
            TrainingService(logger, features).train_expert(only_fake, tiny_train_config)

    def test_early_stop_bounds_log(self, logger, features, domain_manifests):
        cfg = TrainConfig(epochs=6, patience=1, batch_size=4, seed=1)
        ckpt = TrainingService(logger, features).train_expert(domain_manifests[1], cfg)
        assert 1 <= len(ckpt.train_log) <= 6
        stopped = [row["stopped"] for row in ckpt.train_log]
        assert not any(stopped[:-1])
        if len(ckpt.train_log) < 6:
            assert stopped[-1]


class TestTrainJoint:

    def test_single_manifest_matches_expert(self, logger, features, domain_manifests, tiny_train_config):
        service = TrainingService(logger, features)
        expert = service.train_expert(domain_manifests[0], tiny_train_config)
        joint = service.train_joint_baseline([domain_manifests[0]], tiny_train_config)
        assert joint.domain == "joint"
        assert same_state(expert.model, joint.model)

    def test_pooled_domains_recorded(self, logger, features, domain_manifests):
        cfg = TrainConfig(epochs=1, patience=5, batch_size=4)
        joint = TrainingService(logger, features).train_joint_baseline(domain_manifests, cfg)
        assert joint.meta["source_domains"] == ["synth_0", "synth_1"]
        assert joint.meta["stage"] == "joint"

    def test_empty(self, logger, features, tiny_train_config):
        with pytest.raises(ValueError):
            TrainingService(logger, features).train_joint_baseline([], tiny_train_config)


class TestTrainMoE:

    def test_gate_gradients_nonzero(self, features, domain_manifests):
        model = make_moe("enhanced", num_experts=2)
        entries = domain_manifests[0].split("train")[:4] + domain_manifests[0].split("train")[-4:]
        mel = features.batch([entry.path for entry in entries])
        labels = torch.tensor([entry.label for entry in entries])
        model.train()
        F.cross_entropy(model(mel)[1], labels).backward()
        assert model.gate.head.dense.weight.grad.abs().sum() > 0
        assert model.gate.p.grad.abs().sum() > 0

    @pytest.mark.parametrize("variant", ["standard", "enhanced"])
    def test_experts_are_fine_tuned(self, logger, features, domain_manifests, variant):
        ckpts = expert_checkpoints()
        originals = [init_expert(10 + k) for k in range(2)]
        cfg = TrainConfig(epochs=1, patience=5, batch_size=4)
        moe = TrainingService(logger, features).train_moe(ckpts, variant, domain_manifests, cfg)

        assert moe.variant == variant and moe.domains == ["synth_0", "synth_1"]
        assert moe.epochs_run == 1 and moe.meta["batch_size"] == 4
        for trained, original, ckpt in zip(moe.model.experts, originals, ckpts):
            assert not same_state(trained, original)
            assert same_state(ckpt.model, original)

    def test_deterministic(self, logger, features, domain_manifests):
        cfg = TrainConfig(epochs=1, patience=5, batch_size=4, seed=2)
        service = TrainingService(logger, features)
        first = service.train_moe(expert_checkpoints(), "enhanced", domain_manifests, cfg)
        second = service.train_moe(expert_checkpoints(), "enhanced", domain_manifests, cfg)
        assert same_state(first.model, second.model)

    def test_frozen_expert_batch_norm(self, logger, features, domain_manifests):
        cfg = TrainConfig(epochs=1, patience=5, batch_size=4, update_expert_bn=False)
        ckpts = expert_checkpoints()
        moe = TrainingService(logger, features).train_moe(ckpts, "enhanced", domain_manifests, cfg)
        for trained, ckpt in zip(moe.model.experts, ckpts):
            assert torch.equal(trained.embedding_bn.running_mean, ckpt.model.embedding_bn.running_mean)

    def test_invalid_inputs(self, logger, features, domain_manifests, tiny_train_config):
        service = TrainingService(logger, features)
        with pytest.raises(ValueError):
            service.train_moe(expert_checkpoints(), "sparse", domain_manifests, tiny_train_config)
        with pytest.raises(ValueError):
            service.train_moe(expert_checkpoints(1), "enhanced", domain_manifests, tiny_train_config)
        foreign = expert_checkpoints()
        foreign[1].meta["arch_tag"] = "rawnet-v2"
        with pytest.raises(ValueError):
            service.train_moe(foreign, "enhanced", domain_manifests, tiny_train_config)


class TestGradientSanity:
    """Один шаг AdamW с малой скоростью уменьшает потерю на фиксированном батче"""

    @pytest.mark.parametrize("kind", ["expert", "moe"])
    def test_single_step_decreases_loss(self, features, domain_manifests, kind):
        entries = domain_manifests[0].split("train")
        mel = features.batch([entry.path for entry in entries]).double()
        labels = torch.tensor([entry.label for entry in entries])

        if kind == "expert":
            model = init_expert(0).double()
            logits_fn = lambda: model(mel)[0]
        else:
            model = make_moe("enhanced", num_experts=2, dtype=torch.float64)
            logits_fn = lambda: model(mel)[1]
        model.eval()

        optimizer = torch.optim.AdamW(model.parameters(), lr=1e-5, weight_decay=0.01)
        loss = F.cross_entropy(logits_fn(), labels)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            after = F.cross_entropy(logits_fn(), labels)
        assert float(after) < float(loss)


@pytest.mark.slow
class TestDeskScaleTraining:
    """Настольный эксперимент: 4 синтетических домена по 64 клипа на класс"""

    @pytest.fixture(scope="class")
    def desk_corpus(self, tmp_path_factory):
        out_dir = tmp_path_factory.mktemp("desk_corpus")
        manifest = synth_corpus(SynthCorpusSpec(clips_per_domain_per_class=64, seed=0), out_dir)
        return out_dir, manifest

    @pytest.fixture(scope="class")
    def desk_features(self, desk_corpus):
        out_dir, _ = desk_corpus
        return FeatureExtractor(logging.getLogger("moe_detector.tests"), data_root=str(out_dir))

    @pytest.fixture(scope="class")
    def desk_domains(self, desk_corpus):
        _, manifest = desk_corpus
        return [manifest.by_domain(domain) for domain in DESK_DOMAINS]

    @pytest.fixture(scope="class")
    def desk_experts(self, desk_features, desk_domains):
        service = TrainingService(logging.getLogger("moe_detector.tests"), desk_features)
        return [service.train_expert(domain, DESK_CONFIG) for domain in desk_domains]

    @pytest.fixture(scope="class")
    def desk_moe(self, desk_features, desk_domains, desk_experts):
        service = TrainingService(logging.getLogger("moe_detector.tests"), desk_features)
        return service.train_moe(desk_experts, "enhanced", desk_domains, DESK_CONFIG)

    def test_expert_dev_eer(self, logger, desk_features, desk_domains, desk_experts):
        evaluation = EvaluationService(logger, desk_features)
        for domain, ckpt in zip(desk_domains, desk_experts):
            result = evaluation.score_dataset(ckpt.model, domain, "dev")
            assert compute_eer(result.records) <= 0.05, ckpt.domain

    def test_joint_baseline_pooled_dev_eer(self, logger, desk_features, desk_domains):
        ckpt = TrainingService(logger, desk_features).train_joint_baseline(desk_domains, DESK_CONFIG)
        pooled = pool_manifests(desk_domains)
        result = EvaluationService(logger, desk_features).score_dataset(ckpt.model, pooled, "dev")
        assert compute_eer(result.records) <= 0.10

    def test_enhanced_moe_not_worse_than_ensemble(self, logger, desk_features, desk_domains,
                                                   desk_experts, desk_moe):
        evaluation = EvaluationService(logger, desk_features)
        pooled = pool_manifests(desk_domains)
        ensemble = EnsembleAverage([ckpt.model for ckpt in desk_experts], DESK_DOMAINS)

        moe_eer = compute_eer(evaluation.score_dataset(desk_moe.model, pooled, "eval").records)
        ensemble_eer = compute_eer(evaluation.score_dataset(ensemble, pooled, "eval").records)
        assert moe_eer <= ensemble_eer

    def test_gate_prefers_matching_expert(self, logger, desk_features, desk_domains, desk_moe):
        datasets = dict(zip(DESK_DOMAINS, desk_domains))
        profile = EvaluationService(logger, desk_features).gate_profile(desk_moe.model, datasets, "eval")
        matches = sum(profile.argmax(name) == desk_moe.domains.index(name) for name in DESK_DOMAINS)
        assert matches >= 3

    def test_frozen_uniform_gate_still_learns(self, logger, desk_features, desk_domains):
        pooled = pool_manifests(desk_domains[:2])
        model = make_moe("enhanced", num_experts=2)
        with torch.no_grad():
            model.gate.head.dense.weight.zero_()
            model.gate.head.dense.bias.zero_()
        for param in model.gate.parameters():
            param.requires_grad_(False)

        service = TrainingService(logger, desk_features)
        moe_logits = lambda m, x: m(x)[1]
        initial = service.dev_loss(model, moe_logits, pooled, 16)
        cfg = TrainConfig(epochs=5, patience=5, batch_size=16, lr0=1e-3)
        state, _ = service._fit(model, moe_logits, pooled, cfg, 16, tag="uniform-gate")
        assert state.best_dev_loss < initial
