import json
from pathlib import Path

import numpy as np
import pytest
import torch

from detloc import dataio
from detloc.dataio import DataError
from detloc.net import build_model
from detloc.synthbench import SpliceSpec, generate
from detloc.trainer import (
    Checkpoint,
    PreparedDataset,
    TrainConfig,
    build_epoch,
    run_training,
    select_checkpoint,
    train_step1,
    train_step2,
    _batch_losses,
)

TINY_KW = dict(
    backbone="reference-tiny",
    head_channels=4,
    hidden_units=8,
    input_size=32,
    batch_size=8,
    epochs_step1=1,
    epochs_step2=1,
)


class _Rec:
    def __init__(self, label):
        self.label = label


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    records = []
    records += generate(SpliceSpec(count=8, seed=1, size=32, split="train"), root)
    records += generate(SpliceSpec(count=4, seed=2, size=32, split="val"), root)
    records += generate(SpliceSpec(count=4, seed=3, size=32, split="test"), root)
    dataio.write_manifest(root / "manifest.jsonl", records)
    return root


def _datasets(corpus, cfg):
    records = dataio.load_manifest(corpus / "manifest.jsonl")
    train = PreparedDataset([r for r in records if r.split == "train"], cfg)
    val = PreparedDataset([r for r in records if r.split == "val"], cfg)
    return train, val


class TestBuildEpoch:
    def test_replication_counts(self):
        records = [_Rec("real")] * 2 + [_Rec("df")] * 8
        cfg = TrainConfig(real_replication_factor=4)
        order = build_epoch(records, cfg, epoch=0)
        assert len(order) == 16
        assert sum(1 for i in order if records[i].label == "real") == 8

    def test_same_seed_same_epoch_identical(self):
        records = [_Rec("real")] * 3 + [_Rec("ff")] * 5
        cfg = TrainConfig(seed=13)
        assert np.array_equal(build_epoch(records, cfg, 2), build_epoch(records, cfg, 2))
        assert not np.array_equal(build_epoch(records, cfg, 2), build_epoch(records, cfg, 3))

    def test_factor_one_is_manifest_multiset(self):
        records = [_Rec("real"), _Rec("df"), _Rec("nt")]
        cfg = TrainConfig(real_replication_factor=1)
        order = build_epoch(records, cfg, 0)
        assert sorted(order.tolist()) == [0, 1, 2]


class TestSelectCheckpoint:
    def test_single(self):
        ck = Checkpoint(epoch=0, val_auc=0.5, state_dict={})
        assert select_checkpoint([ck]) is ck

    def test_argmax(self):
        cks = [
            Checkpoint(0, 0.7, {}),
            Checkpoint(1, 0.9, {}),
            Checkpoint(2, 0.8, {}),
        ]
        assert select_checkpoint(cks).epoch == 1

    def test_tie_earliest_epoch(self):
        cks = [
            Checkpoint(3, 0.9, {}),
            Checkpoint(7, 0.9, {}),
        ]
        assert select_checkpoint(cks).epoch == 3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_checkpoint([])


class TestTrainConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(DataError):
            TrainConfig.from_dict({"lr": 0.1, "warmup": 3})

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(real_replication_factor=0)
        with pytest.raises(ValueError):
            TrainConfig(noise_reduction="median")

    def test_roundtrip(self):
        cfg = TrainConfig(lr=1e-3, sigma=10.0)
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg


def test_loss_descends_in_one_epoch(corpus):
    cfg = TrainConfig(seed=0, lr=1e-3, real_replication_factor=1, **TINY_KW)
    records = dataio.load_manifest(corpus / "manifest.jsonl")
    train = PreparedDataset([r for r in records if r.split == "train"][:8], cfg)
    val = PreparedDataset([r for r in records if r.split == "val"], cfg)
    idx = np.arange(8)
    for step_fn in (train_step1, train_step2):
        torch.manual_seed(cfg.seed)
        model = build_model(cfg.model_config())
        first = float(_batch_losses(model, train, idx, cfg, step_fn is train_step2).total.detach())
        step_fn(model, train, val, cfg)
        last = float(_batch_losses(model, train, idx, cfg, step_fn is train_step2).total.detach())
        assert last < first


def test_fixed_seed_gives_identical_loss_trajectory(corpus, tmp_path):
    cfg = TrainConfig(seed=5, real_replication_factor=1, **TINY_KW)
    traces = []
    for run in ("a", "b"):
        out = tmp_path / run
        run_training(corpus / "manifest.jsonl", cfg, out, step="all")
        trace = [
            json.loads(line)
            for line in (out / "train_log.jsonl").read_text().splitlines()
        ]
        traces.append(trace)
    assert traces[0] == traces[1]


def test_step1_leaves_noise_heads_bit_identical(corpus):
    cfg = TrainConfig(seed=1, real_replication_factor=1, **TINY_KW)
    train, val = _datasets(corpus, cfg)
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model_config())
    before = [p.detach().clone() for p in model.noise_parameters()]
    sem_before = model.sem_heads[0].project.weight.detach().clone()
    train_step1(model, train, val, cfg)
    for old, new in zip(before, model.noise_parameters()):
        assert torch.equal(old, new)
    assert not torch.equal(sem_before, model.sem_heads[0].project.weight)
    assert all(p.requires_grad for p in model.noise_parameters())


def test_lambda2_zero_matches_classification_only_run(corpus):
    from detloc import losses as L

    cfg = TrainConfig(seed=2, real_replication_factor=1, lambda2=0.0, **TINY_KW)
    train, val = _datasets(corpus, cfg)

    def fresh():
        torch.manual_seed(cfg.seed)
        return build_model(cfg.model_config())

    weighted = fresh()
    train_step1(weighted, train, val, cfg)

    manual = fresh()
    for p in manual.noise_parameters():
        p.requires_grad_(False)
    params = [p for p in manual.parameters() if p.requires_grad]
    opt = torch.optim.Adam(
        params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay
    )
    order = build_epoch(train.records, cfg, 0)
    from detloc.net import fake_score

    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        x, _, _, _, binary = train.batch(idx)
        _, _, logits = manual(x)
        loss = L.classification_loss(fake_score(logits), binary)
        opt.zero_grad()
        loss.backward()
        opt.step()
    for p in manual.noise_parameters():
        p.requires_grad_(True)

    for (ka, va), (kb, vb) in zip(
        sorted(weighted.state_dict().items()), sorted(manual.state_dict().items())
    ):
        assert ka == kb
        assert torch.equal(va, vb), ka


def test_memorization_loss_collapse(tmp_path):
    # full-width model at 64px: the soft-target BCE floor is low enough
    # for a 10x collapse within 200 steps
    generate(SpliceSpec(count=4, seed=1, size=64, split="train"), tmp_path)
    records = dataio.load_manifest(tmp_path / "manifest.jsonl")
    cfg = TrainConfig(seed=4, lr=1e-3, real_replication_factor=1, input_size=64, batch_size=8)
    train = PreparedDataset(records[:8], cfg)
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model_config())
    idx = np.arange(8)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    initial = float(_batch_losses(model, train, idx, cfg, True).total.detach())
    for _ in range(200):
        bundle = _batch_losses(model, train, idx, cfg, True)
        opt.zero_grad()
        bundle.total.backward()
        opt.step()
    final = float(_batch_losses(model, train, idx, cfg, True).total.detach())
    assert final < 0.1 * initial


def test_run_training_writes_checkpoints_and_logs(corpus, tmp_path):
    cfg = TrainConfig(seed=3, real_replication_factor=1, **TINY_KW)
    out = tmp_path / "run"
    final = run_training(corpus / "manifest.jsonl", cfg, out, step="all")
    assert final == out / "step2_best.pt"
    assert (out / "step1_best.pt").exists()
    lines = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    step_lines = [l for l in lines if "step" in l]
    epoch_lines = [l for l in lines if "epoch" in l]
    assert step_lines and epoch_lines
    assert set(step_lines[0]) == {"step", "L_c", "L_n", "L_b", "total"}
    # step-1 lines must log the excluded noise term as zero
    assert step_lines[0]["L_n"] == 0.0
    assert step_lines[-1]["L_n"] != 0.0
    assert all(0.0 <= l["val_auc"] <= 1.0 for l in epoch_lines)


def test_step2_requires_step1_checkpoint(corpus, tmp_path):
    cfg = TrainConfig(seed=3, real_replication_factor=1, **TINY_KW)
    with pytest.raises(DataError):
        run_training(corpus / "manifest.jsonl", cfg, tmp_path / "nope", step="2")


def test_step2_standalone_from_checkpoint(corpus, tmp_path):
    cfg = TrainConfig(seed=3, real_replication_factor=1, **TINY_KW)
    out = tmp_path / "run"
    run_training(corpus / "manifest.jsonl", cfg, out, step="1")
    assert (out / "step1_best.pt").exists()
    final = run_training(corpus / "manifest.jsonl", cfg, out, step="2")
    assert final.exists()


def test_missing_split_rejected(corpus, tmp_path):
    records = [r for r in dataio.load_manifest(corpus / "manifest.jsonl") if r.split == "train"]
    raw = [
        {
            "image_path": str(r.image_path),
            "label": r.label,
            "split": "train",
            "mask_path": str(r.mask_path),
        }
        for r in records
    ]
    path = tmp_path / "train_only.jsonl"
    dataio.write_manifest(path, raw)
    with pytest.raises(DataError):
        run_training(path, TrainConfig(**TINY_KW), tmp_path / "out", step="1")


def test_five_class_training_and_recall(corpus, tmp_path):
    from detloc.net import load_checkpoint
    from detloc.trainer import evaluate

    cfg = TrainConfig(seed=6, real_replication_factor=1, num_classes=5, **TINY_KW)
    out = tmp_path / "run5"
    final = run_training(corpus / "manifest.jsonl", cfg, out, step="all")
    model, _ = load_checkpoint(final)
    assert model.cfg.num_classes == 5
    records = dataio.load_manifest(corpus / "manifest.jsonl")
    ds = PreparedDataset([r for r in records if r.split == "test"], cfg)
    report, extras = evaluate(model, ds)
    assert 0.0 <= report.auc <= 1.0
    assert len(extras["per_class_recall"]) == 5


def test_mask_derived_from_pair_when_missing(corpus):
    cfg = TrainConfig(**TINY_KW)
    fakes = [r for r in dataio.load_manifest(corpus / "manifest.jsonl")
             if r.split == "test" and r.is_fake]
    stripped = [
        dataio.ManifestRecord(
            image_path=r.image_path,
            label=r.label,
            split=r.split,
            mask_path=None,
            pair_path=r.pair_path,
        )
        for r in fakes
    ]
    ds = PreparedDataset(stripped, cfg)
    with_masks = PreparedDataset(fakes, cfg)
    for derived, reference in zip(ds.gt_masks, with_masks.gt_masks):
        assert derived.sum() > 0
        inter = np.logical_and(derived > 0, reference > 0).sum()
        union = np.logical_or(derived > 0, reference > 0).sum()
        assert inter / union > 0.8


def test_divergence_raises_numerics_error(corpus, tmp_path):
    from detloc.trainer import NumericsError

    cfg = TrainConfig(seed=0, lr=1e18, real_replication_factor=1, **TINY_KW)
    with pytest.raises(NumericsError):
        run_training(corpus / "manifest.jsonl", cfg, tmp_path / "run", step="1")


def test_manifest_validation(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"image_path": "x.png", "label": "alien", "split": "train"}\n')
    with pytest.raises(DataError):
        dataio.load_manifest(bad)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(DataError):
        dataio.load_manifest(empty)
    with pytest.raises(DataError):
        dataio.load_manifest(tmp_path / "missing.jsonl")


def test_prepared_dataset_scales_and_normalization(corpus):
    cfg = TrainConfig(**TINY_KW)
    records = dataio.load_manifest(corpus / "manifest.jsonl")
    ds = PreparedDataset([r for r in records if r.split == "test"], cfg)
    assert ds.scale_sizes == [(8, 8), (4, 4), (2, 2)]
    assert float(ds.images.min()) >= -1.0 and float(ds.images.max()) <= 1.0
    for j, (h, w) in enumerate(ds.scale_sizes):
        assert tuple(ds.mask_targets[j].shape[1:]) == (h, w)
        assert tuple(ds.noise_targets[j].shape[1:]) == (3, h, w)
    assert ds.binary_labels.sum() == 4  # half the test split is fake
