import pytest

from pairflow.pipeline import PipelineConfig, run_fused
from pairflow.synth import default_corpus_specs, generate_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A compact three-class corpus with planted hygiene failures."""
    out = tmp_path_factory.mktemp("corpus-small")
    specs = default_corpus_specs(12, seed=101, hygiene_rate=0.12)
    result = generate_corpus(specs, out)
    labels = {r["capture_name"]: r["label"] for r in result.labels}
    return result, labels


@pytest.fixture(scope="session")
def small_pipeline(small_corpus):
    result, labels = small_corpus
    compiled, registry = run_fused(result.capture_paths, PipelineConfig(), labels)
    return compiled, registry


@pytest.fixture(scope="session")
def small_flows(small_pipeline):
    return small_pipeline[0].flows
