import numpy as np
import pytest

from modbias.data import Dataset, Sample, Split


@pytest.fixture
def tiny_dataset() -> Dataset:
    samples = (
        Sample("a1", "thank you so much", np.array([0.1, 0.2]), np.array([1.0, 0.0]), 0),
        Sample("a2", "oh sure great job", np.array([0.3, 0.4]), np.array([0.0, 1.0]), 1),
        Sample("a3", "thanks a lot", np.array([0.5, 0.6]), np.array([0.5, 0.5]), 0),
    )
    return Dataset("tiny", ("Thank", "Taunt"), 2, 2, samples)


def write_tiny_files(tmp_path, name="tiny"):
    meta = tmp_path / f"{name}.meta.json"
    body = tmp_path / f"{name}.jsonl"
    meta.write_text(
        '{"name": "tiny", "labels": ["Thank", "Taunt"], "audio_dim": 2, "video_dim": 2}\n',
        encoding="utf-8",
    )
    body.write_text(
        '{"id": "a1", "text": "thank you so much", "label": "Thank", "audio": [0.1, 0.2], "video": [1.0, 0.0], "split": null}\n'
        '{"id": "a2", "text": "oh sure great job", "label": "Taunt", "audio": [0.3, 0.4], "video": [0.0, 1.0], "split": "dev"}\n'
        '{"id": "a3", "text": "thanks a lot", "label": "Thank", "audio": [0.5, 0.6], "video": [0.5, 0.5], "split": "train"}\n',
        encoding="utf-8",
    )
    return tmp_path / name


def balanced_dataset(n_labels: int, per_label: int, name="flat") -> Dataset:
    """Minimal deterministic dataset: one token per label, 1-dim features."""
    samples = []
    idx = 0
    for label in range(n_labels):
        for _ in range(per_label):
            samples.append(
                Sample(f"x{idx:05d}", f"tok{label}", np.array([float(label)]), np.array([0.0]), label)
            )
            idx += 1
    return Dataset(name, tuple(f"L{i}" for i in range(n_labels)), 1, 1, tuple(samples))
