import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from lgsample.store import EmbeddingMatrix, l2_normalize


def random_normalized(n, dim, seed, scopes=None, prefix="r"):
    """Normalized random embedding matrix fixture."""
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal((n, dim)).astype(np.float32)
    return l2_normalize(
        EmbeddingMatrix(
            vec,
            ids=tuple(f"{prefix}{i}" for i in range(n)),
            scope_labels=scopes,
        )
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One visible line per acceptance criterion, whatever the verbosity."""
    try:
        import test_acceptance
    except ImportError:
        return
    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in test_acceptance.RESULTS.items():
        terminalreporter.write_line(f"{verdict:4s}  {name}")
