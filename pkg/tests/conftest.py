import sys

import numpy as np
import pytest

from drex.ingest import ingest
from drex.synth import SynthSpec, generate, write_dataset
from drex.text import load_embedding_file


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A reduced synthetic corpus, ingested, with its embedding table."""
    out = tmp_path_factory.mktemp("small_synth")
    spec = SynthSpec(n_users=40, n_items=60, per_user=25, n_noise=80)
    records, manifest, mapping = generate(spec, seed=3)
    paths = write_dataset(out, records, manifest, mapping)
    bundle, summary = ingest(paths["corpus"], seed=3)
    provider = load_embedding_file(paths["embeddings"])
    return {"bundle": bundle, "summary": summary, "provider": provider, "paths": paths,
            "manifest": manifest}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
