"""Named desk-scale benchmark configurations shared by scripts and the acceptance suite."""

from __future__ import annotations

from .config import ExperimentConfig


def synthetic_benchmark(seed: int = 0, out_dir: str = "runs/synthetic", **overrides) -> ExperimentConfig:
    """3 Gaussian classes in 32 dimensions (sigma 0.1, 300 train examples per class), SimSiam-lite.

    Batch 128 gives 7 steps per epoch on 900 examples.
    """
    cfg = ExperimentConfig(
        dataset="synthetic", synth_classes=3, synth_dim=32, synth_sigma=0.1, per_class=300,
        test_per_class=100, framework="simsiam", lam=0.1, tau=0.1, epochs=30, batch_size=128,
        eval_every=30, seed=seed, out_dir=out_dir,
    )
    return cfg.replace(**overrides)


def cifar_subset_benchmark(data_path: str, seed: int = 0, out_dir: str = "runs/cifar", **overrides) -> ExperimentConfig:
    """BYOL-lite on 5000 CIFAR-10 training images (500 per class), 50 epochs, KNN on the test split."""
    cfg = ExperimentConfig(
        dataset="cifar10", data_path=data_path, per_class=500, test_per_class=0, framework="byol",
        lam=0.1, tau=0.1, epochs=50, batch_size=256, eval_every=10, knn_k=20, precision="float32", seed=seed,
        out_dir=out_dir,
    )
    return cfg.replace(**overrides)
