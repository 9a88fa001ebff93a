from __future__ import annotations

import pytest

from nlproof.llm import load_templates


@pytest.fixture(scope="session")
def templates():
    return load_templates()
