import numpy as np
import pytest

from farasr.corpus import generate_toy_corpus
from farasr.dataset import DataSource, compute_feature_stats
from farasr.farfield import build_rir_bank, load_rir_bank, write_rir_bank
from farasr.seq2seq import Vocabulary


@pytest.fixture(scope="session")
def small_workspace(tmp_path_factory):
    """Tiny corpus + impulse response banks shared by data/training tests."""
    root = tmp_path_factory.mktemp("workspace")
    manifests = generate_toy_corpus(
        root / "corpus", {"train": 20, "dev": 4, "eval": 4}, seed=11, min_len=3, max_len=5
    )
    entries = build_rir_bank(
        np.random.default_rng(12), sizes={"train": 6, "dev": 2, "eval": 2}, max_order=6
    )
    write_rir_bank(root / "rirs", entries)
    banks = load_rir_bank(root / "rirs")
    stats = compute_feature_stats(manifests["train"])
    return {"root": root, "manifests": manifests, "banks": banks, "stats": stats}


@pytest.fixture()
def small_data(small_workspace):
    ws = small_workspace
    return DataSource(ws["manifests"], ws["banks"], ws["stats"], Vocabulary(), base_seed=3)
