import json

import numpy as np
import pytest

from clip_export.encoders import HashedEncoder
from clip_export.errors import ExportError
from clip_export.export import DEFAULT_TEMPLATE, export_anchors, render_prompts

# the consumer's reader is the conformance oracle for emitted bytes
from calm.data_io import read_store


class RecordingEncoder(HashedEncoder):
    def __init__(self, dim=32):
        super().__init__(dim=dim)
        self.seen_texts = []

    def encode_texts(self, texts):
        self.seen_texts.extend(texts)
        return super().encode_texts(texts)


def test_prompt_template_applied_verbatim():
    enc = RecordingEncoder()
    export_anchors(["Holding a laptop", "Running"], DEFAULT_TEMPLATE, enc, "/tmp/_ignored")
    assert enc.seen_texts == [
        "The content of Holding a laptop",
        "The content of Running",
    ]


def test_157_labels_give_157_rows(tmp_path):
    labels = [f"action_{i:03d}" for i in range(157)]
    manifest = export_anchors(labels, DEFAULT_TEMPLATE, HashedEncoder(dim=64), tmp_path)
    store = read_store(tmp_path / "anchors.calm")
    assert store.shape == (157, 64)
    doc = json.loads(manifest.read_text())
    assert doc["labels"] == labels
    assert doc["template"] == DEFAULT_TEMPLATE


def test_single_label(tmp_path):
    manifest = export_anchors(["one"], DEFAULT_TEMPLATE, HashedEncoder(dim=8), tmp_path)
    assert read_store(tmp_path / "anchors.calm").shape == (1, 8)
    assert json.loads(manifest.read_text())["labels"] == ["one"]


def test_duplicate_label_rejected():
    with pytest.raises(ExportError, match="again"):
        render_prompts(["once", "again", "again"], DEFAULT_TEMPLATE)


def test_empty_inputs_rejected():
    with pytest.raises(ExportError):
        render_prompts([], DEFAULT_TEMPLATE)
    with pytest.raises(ExportError):
        render_prompts(["ok", "  "], DEFAULT_TEMPLATE)


def test_template_must_have_one_placeholder():
    with pytest.raises(ExportError, match="placeholder"):
        render_prompts(["a"], "no placeholder here")
    with pytest.raises(ExportError, match="placeholder"):
        render_prompts(["a"], "{label} and {label}")


def test_row_order_matches_label_order(tmp_path):
    enc = HashedEncoder(dim=16)
    labels = ["zebra", "apple", "mango"]
    export_anchors(labels, DEFAULT_TEMPLATE, enc, tmp_path)
    store = read_store(tmp_path / "anchors.calm")
    expected = enc.encode_texts([DEFAULT_TEMPLATE.replace("{label}", l) for l in labels])
    assert np.array_equal(store, expected.astype("<f4").astype(np.float64))
