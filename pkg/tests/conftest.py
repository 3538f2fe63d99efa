import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def jsonl(tmp_path):
    def make(records, name="corpus.jsonl"):
        return write_jsonl(tmp_path / name, records)
    return make


@pytest.fixture
def three_reports():
    return [
        {"id": "r1", "text": "no effusion", "split": "train", "feature_source": {"seed": 1}},
        {"id": "r2", "text": "effusion present", "split": "train", "feature_source": {"seed": 2}},
        {"id": "r3", "text": "heart normal", "split": "train", "feature_source": {"seed": 3}},
    ]
