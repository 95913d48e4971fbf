import xml.etree.ElementTree as ET

import pytest

from shardgame.cli import results_csv
from shardgame.game import Scheme
from shardgame.sim import AggregateResult
from shardgame.svg import render

NS = "{http://www.w3.org/2000/svg}"


def _csv() -> str:
    rows = [
        AggregateResult(500.0, 0.0, 1.0, 0.0, -10.0, -10.0, 0.0, 100),
        AggregateResult(1000.0, 0.4, 0.6, -12.0, -10.0, -10.8, 0.3, 100),
        AggregateResult(1500.0, 1.0, 0.0, 3.5, 0.0, 3.5, 1.0, 100),
    ]
    return results_csv("avg_tx", Scheme.FAIR, rows)


def test_ratio_chart_has_two_series():
    root = ET.fromstring(render(_csv()))
    lines = root.findall(f"{NS}polyline")
    assert len(lines) == 2
    assert all(len(l.get("points").split()) == 3 for l in lines)
    labels = [t.text for t in root.iter(f"{NS}text")]
    assert "cooperative" in labels and "defective" in labels and "avg_tx" in labels


def test_rendering_depends_only_on_csv():
    text = _csv()
    assert render(text) == render(text)
    assert render(text, "utility") != render(text)


def test_utility_chart_single_series():
    root = ET.fromstring(render(_csv(), "utility"))
    assert len(root.findall(f"{NS}polyline")) == 1


def test_empty_csv_rejected():
    with pytest.raises(ValueError):
        render(_csv().splitlines()[0] + "\n")
