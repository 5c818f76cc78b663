import pytest

from locload.pipeline import DatasetSpec, generate_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds-small")
    return generate_dataset(DatasetSpec(root, 256, 128), seed=3)


@pytest.fixture(scope="session")
def timing_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds-2048")
    return generate_dataset(DatasetSpec(root, 2048, 256), seed=1)
