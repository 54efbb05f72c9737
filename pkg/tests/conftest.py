import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tableforge.pipeline import PipelineConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def make_cfg(tmp_path):
    """Factory for small scripted-demo pipeline configs rooted in tmp."""

    def build(**overrides) -> PipelineConfig:
        defaults = dict(
            master_seed=5,
            n_tables=3,
            seeds_per_table=2,
            n_rounds=2,
            run_root=tmp_path / "runs",
            n_topics=2,
            subtopics_per_topic=2,
            titles_per_subtopic=2,
        )
        defaults.update(overrides)
        return PipelineConfig(**defaults)

    return build
