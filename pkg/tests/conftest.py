"""Shared fixtures: a small trained world for CLI/API tests."""

import numpy as np
import pytest

from imn.data import SynthSpec, curated_split, generate_synthetic, write_manifest, zscore
from imn.model import ImnConfig, ImnModel, save_checkpoint
from imn.training import TrainConfig, fit


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """Tiny synthetic dataset plus a briefly trained binary checkpoint."""
    root = tmp_path_factory.mktemp("world")
    spec = SynthSpec(seed=101, num_per_class=30, signal_length=64,
                     anomaly_amplitude=0.8, noise_std=0.15)
    records = generate_synthetic(spec)
    manifest = write_manifest(records, root / "data")
    splits = curated_split([zscore(r) for r in records], "MI")
    model = ImnModel(ImnConfig(signal_length=64), seed=101)
    ckpt = root / "model.ckpt"
    hist = root / "history.jsonl"
    fit(model, splits["train"], splits["val"],
        TrainConfig(epochs=2, batch_size=16, seed=101),
        checkpoint_path=ckpt, history_path=hist)
    return {
        "root": root,
        "manifest": manifest,
        "checkpoint": ckpt,
        "history": hist,
        "records": records,
        "splits": splits,
        "spec": spec,
    }


@pytest.fixture(scope="session")
def long_world(tmp_path_factory):
    """L=1000 records with a primed (untrained) checkpoint for window math."""
    root = tmp_path_factory.mktemp("long_world")
    spec = SynthSpec(seed=77, num_per_class=3, signal_length=1000, fs=100.0)
    records = generate_synthetic(spec)
    manifest = write_manifest(records, root / "data")
    model = ImnModel(ImnConfig(signal_length=1000), seed=77)
    batch = np.stack([zscore(r).signal for r in records[:4]])
    model.prime_batchnorm(batch)
    ckpt = root / "model.ckpt"
    save_checkpoint(model, ckpt)
    return {"root": root, "manifest": manifest, "checkpoint": ckpt, "records": records}
