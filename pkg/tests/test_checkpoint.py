import struct

import pytest

from compactrnn.checkpoint import (MAGIC, CheckpointError, checkpoint_from_bytes, load_checkpoint,
                                   restore_into, save_checkpoint, trainer_to_bytes)
from compactrnn.config import config_from_dict
from compactrnn.recurrent_nets import count_parameters
from compactrnn.tasks import make_task
from compactrnn.training import Trainer


def mixed_config(max_steps=8):
    return config_from_dict({
        "task": {"num_utterances": 10, "length": 17, "num_classes": 5, "feature_dim": 3, "seed": 4},
        "network": {
            "layers": [{"type": "lstm", "hidden": 4, "projection": 3}, {"type": "lstm", "hidden": 4}],
            "projection_removal": "off",
            "compression": [
                {"matrix": "U", "layer": 1, "kind": "toeplitz", "rank": 2},
                {"matrix": "W", "layer": 2, "gates": ["i", "f"], "kind": "lowrank", "rank": 2},
                {"matrix": "W", "layer": 2, "gates": ["c", "o"], "kind": "hashed", "rank": 1},
            ],
        },
        "train": {"unroll": 5, "label_delay": 1, "batch_size": 3, "lr0": 0.3, "eval_interval": 4,
                  "max_steps": max_steps, "seed": 9},
    })


def trained(cfg, steps):
    trainer = Trainer(cfg, make_task(cfg.task))
    trainer.run(steps)
    return trainer


def test_roundtrip_is_bit_exact(tmp_path):
    cfg = mixed_config()
    trainer = trained(cfg, 5)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, trainer)
    fresh = restore_into(Trainer(cfg, make_task(cfg.task)), load_checkpoint(path))
    assert trainer_to_bytes(fresh) == path.read_bytes()


def test_header_layout(tmp_path):
    buf = trainer_to_bytes(trained(mixed_config(), 1))
    assert buf[:8] == MAGIC
    version, hlen = struct.unpack_from("<IQ", buf, 8)
    assert version == 1 and 20 + hlen < len(buf)


def test_rejects_bad_magic_and_version():
    buf = trainer_to_bytes(trained(mixed_config(), 1))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(b"XXXXXXXX" + buf[8:])
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_from_bytes(buf[:8] + struct.pack("<I", 2) + buf[12:])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(buf[:-1])


def test_resume_matches_uninterrupted(tmp_path):
    cfg = mixed_config(max_steps=12)
    straight = trained(cfg, 12)
    first = trained(cfg, 5)
    save_checkpoint(tmp_path / "mid.ckpt", first)
    resumed = restore_into(Trainer(cfg, make_task(cfg.task)), load_checkpoint(tmp_path / "mid.ckpt"))
    resumed.run(12)
    assert trainer_to_bytes(resumed) == trainer_to_bytes(straight)


def test_restore_rejects_other_architecture():
    cfg = mixed_config()
    other = config_from_dict({**cfg.model_dump(mode="json"),
                              "network": {"layers": [{"type": "lstm", "hidden": 4}]}})
    ckpt = checkpoint_from_bytes(trainer_to_bytes(trained(cfg, 1)))
    with pytest.raises(CheckpointError):
        restore_into(Trainer(other, make_task(other.task)), ckpt)


def test_storage_agrees_with_accounting():
    cfg = mixed_config()
    ckpt = checkpoint_from_bytes(trainer_to_bytes(trained(cfg, 2)))
    _, total = count_parameters(cfg.network)
    assert ckpt.param_blob_count() == total
    assert ckpt.config == cfg
