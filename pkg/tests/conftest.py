"""Shared fixtures: the three-image caption corpus and tiny helpers."""

from pathlib import Path

import pytest

from attrcap.corpus import build_documents, parse_caption_file

DATA_DIR = Path(__file__).parent / "data"

T1_PATH = DATA_DIR / "t1_captions.json"


@pytest.fixture(scope="session")
def t1_pairs():
    return parse_caption_file(T1_PATH)


@pytest.fixture(scope="session")
def t1_documents(t1_pairs):
    return build_documents(t1_pairs, apply_stemming=False)
