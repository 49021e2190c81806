import os
import sys
from pathlib import Path

# single-threaded BLAS: deterministic regardless of host core count, and
# faster than sharded GEMMs at these array sizes (must precede numpy import)
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for _oracles


@pytest.fixture(scope="session")
def cifar_dir(tmp_path_factory):
    """Five CIFAR-10-binary-format train files with 5000 'frog' records total.

    Pixels are random bytes; labels are balanced over the split like the real
    train set (5000 per class), but deliberately uneven per file.
    """
    root = tmp_path_factory.mktemp("cifar")
    rng = np.random.default_rng(0)
    frog = 6
    per_file_frogs = [998, 1002, 1000, 987, 1013]  # sums to 5000
    for i, n_frogs in enumerate(per_file_frogs, start=1):
        labels = np.full(10_000, -1, dtype=np.int64)
        labels[:n_frogs] = frog
        others = [c for c in range(10) if c != frog]
        rest = np.tile(others, (10_000 - n_frogs) // 9 + 1)[: 10_000 - n_frogs]
        labels[n_frogs:] = rest
        rng.shuffle(labels)
        pixels = rng.integers(0, 256, size=(10_000, 3072), dtype=np.uint8)
        records = np.concatenate(
            [labels.astype(np.uint8)[:, None], pixels], axis=1
        )
        records.tofile(root / f"data_batch_{i}.bin")
    return root
