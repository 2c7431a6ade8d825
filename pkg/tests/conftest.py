from __future__ import annotations

import numpy as np
import pytest

from trustgate.core import LogitTable, Rank, TaxonRecord, Taxonomy
from trustgate.fixtures import build_demo_bundle
from trustgate.ingest import PhotoRecord, build_manifest


@pytest.fixture(scope="session")
def bundle_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle")
    build_demo_bundle(path, seed=0)
    return path


@pytest.fixture
def labeled_table():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(40, 6))
    labels = rng.integers(0, 6, size=40)
    logits[np.arange(40), labels] += 3.0  # mostly correct argmax
    return LogitTable(
        item_ids=tuple(f"r{i}" for i in range(40)),
        logits=logits,
        labels=labels,
    )


def toy_taxonomy() -> Taxonomy:
    """class 1 -> orders 10, 11 -> five species 100..104."""
    records = [
        TaxonRecord(1, "Insecta", None, Rank.CLASS, ()),
        TaxonRecord(10, "Coleoptera", None, Rank.ORDER, (1,)),
        TaxonRecord(11, "Diptera", None, Rank.ORDER, (1,)),
        TaxonRecord(100, "Beetle one", "beetle", Rank.SPECIES, (1, 10)),
        TaxonRecord(101, "Beetle two", None, Rank.SPECIES, (1, 10)),
        TaxonRecord(102, "Fly one", "fly", Rank.SPECIES, (1, 11)),
        TaxonRecord(103, "Fly two", None, Rank.SPECIES, (1, 11)),
        TaxonRecord(104, "Fly three", None, Rank.SPECIES, (1, 11)),
        TaxonRecord(2, "Aves", None, Rank.CLASS, ()),
        TaxonRecord(200, "Bird", None, Rank.SPECIES, (2,)),
    ]
    return Taxonomy(records)


def make_photos(n: int, *, taxon_id: int = 100, start_id: int = 0) -> list[PhotoRecord]:
    return [
        PhotoRecord(
            photo_id=start_id + i,
            taxon_id=taxon_id,
            extension="jpg",
            quality_grade="research",
            license="CC0",
        )
        for i in range(n)
    ]


def manifest_of(n: int, **kw):
    return build_manifest(make_photos(n, **kw), {kw.get("taxon_id", 100)}, None,
                          filter_description={"source": "test fixture"})
