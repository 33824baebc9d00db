import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ecaengine.kb import KnowledgeBase


def build_trace_kb(symbols, spacing=1):
    """KnowledgeBase holding occurs facts for a unit-spaced symbol trace."""
    kb = KnowledgeBase()
    lines = []
    for i, sym in enumerate(symbols):
        lines.append(f"occurs({sym}, {(i + 1) * spacing}).")
    if lines:
        kb.add_update_text("trace", "\n".join(lines))
    return kb


@pytest.fixture
def trace_kb():
    return build_trace_kb
