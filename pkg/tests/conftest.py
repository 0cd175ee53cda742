import pytest

from tdpp.zoo import generate_dataset, train_mlp

DATASET_SEED = 7
TRAIN_SEED = 3
DIMS = (64, 80, 48, 10)


@pytest.fixture(scope="session")
def dataset():
    return generate_dataset(DATASET_SEED, 2000, 400, noise=70.0)


@pytest.fixture(scope="session")
def trained(dataset):
    return train_mlp(dataset, DIMS, epochs=30, seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def model(trained):
    return trained.model
