import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from fastlim.diagnostics import fit_rate
from fastlim.svg import emit_svg, rate_svg, series_svg

GOLDEN = Path(__file__).parent / "golden"
NS = "{http://www.w3.org/2000/svg}"


def _rate_report():
    eps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    return fit_rate([(e, max(3 * e**0.5, 1e-2)) for e in eps])


def _series():
    t = [0.0, 0.25, 0.5, 0.75, 1.0]
    return {"min_N": (t, [0.2, 0.25, 0.3, 0.32, 0.33]), "max_N": (t, [0.8, 0.79, 0.78, 0.78, 0.77])}


CASES = {
    "rates.svg": lambda: rate_svg(_rate_report(), title="residual vs eps"),
    "series.svg": lambda: series_svg(_series(), title="monitor", xlabel="t", ylabel="value"),
    "series_log.svg": lambda: series_svg(_series(), title="monitor", xlabel="t", ylabel="value", logy=True),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_svg_matches_golden(name):
    assert CASES[name]() == (GOLDEN / name).read_text()


@pytest.mark.parametrize("name", sorted(CASES))
def test_svg_is_well_formed_and_deterministic(name):
    text = CASES[name]()
    root = ET.fromstring(text)
    assert root.tag == NS + "svg"
    assert CASES[name]() == text


def test_rate_plot_marks_dropped_points():
    root = ET.fromstring(rate_svg(_rate_report()))
    circles = root.iter(NS + "circle")
    fills = [c.get("fill") for c in circles]
    assert fills.count("none") == 1  # the plateau point left out of the fit


def test_emit_dispatch_and_errors():
    assert emit_svg(_rate_report()) == rate_svg(_rate_report())
    assert emit_svg(_series()) == series_svg(_series())
    with pytest.raises(ValueError):
        series_svg({"a": ([0.0], [1.0])})
    with pytest.raises(ValueError):
        series_svg({})
    with pytest.raises(TypeError):
        emit_svg(3.0)
