import os

# thread setup must precede the first numpy import (see cli.py)
os.environ.setdefault("OMP_WAIT_POLICY", "PASSIVE")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
import pytest

from deepquality.distortions import synthesize_corpus
from deepquality.imgio import load_luminance
from deepquality.textures import write_textures


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def texture_image():
    """One deterministic 192x192 test scene in [0, 1]."""
    from deepquality.textures import make_texture
    return make_texture(seed=7, size=192)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A small synthetic corpus: 5 scenes x 4 kinds x 5 levels."""
    base = tmp_path_factory.mktemp("corpus")
    paths = write_textures(base / "clean", count=5, seed=300, size=160)
    sources = {p.stem: load_luminance(p) for p in paths}
    manifest, records = synthesize_corpus(sources, base / "out", seed=9)
    return {"base": base, "manifest": manifest, "records": records,
            "clean_paths": paths}
