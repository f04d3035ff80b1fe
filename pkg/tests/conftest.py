import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small seeded dataset shared by unit tests (not the acceptance runs)."""
    from skyforge.synth import generate_dataset

    root = tmp_path_factory.mktemp("tiny_ds")
    records = generate_dataset(
        60, seed=123, out_dir=root, splits={"train": 0.7, "val": 0.15, "test": 0.15}
    )
    return root, records


@pytest.fixture(scope="session")
def smoke_sky_model(tiny_dataset):
    """A briefly trained sky model: not accurate, but a real trained artifact
    with fitted normalizer and mean panorama."""
    from skyforge.config import SkyModelConfig
    from skyforge.skymodel import train_skynet

    root, records = tiny_dataset
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    cfg = SkyModelConfig(epochs=2, batch_size=16)
    model, _ = train_skynet(train, val, root, config=cfg, seed=11)
    return model


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
