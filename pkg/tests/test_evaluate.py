import json

import numpy as np
import pytest

from motifsnn.data import generate_split
from motifsnn.evaluate import (
    EvalReport,
    ModelResult,
    ReportError,
    accuracy,
    frozen_encoding,
    predict,
    simulate_chips,
    summarize,
)
from motifsnn.models import build_model
from motifsnn.plot import box_plot_svg, stars

STEPS = 20


@pytest.fixture(scope="module")
def split():
    return generate_split(40, 5, name="test")


def model(family, seed=0):
    m = build_model(family, (4, 16, 3), np.random.default_rng(seed), genes=4)
    # scale up so the untrained network actually spikes
    for p in m.parameters():
        p.values = p.values * 3.0
    return m


class TestPredict:
    def test_argmax(self):
        out = np.zeros((100, 3))
        out[:90, 0] = 1
        out[:3, 1] = 1
        out[:7, 2] = 1
        assert predict(out) == 0

    def test_tie_goes_to_lowest(self):
        out = np.zeros((10, 3))
        out[:5, 1] = out[:5, 2] = 1
        out[:2, 0] = 1
        assert predict(out) == 1
        assert predict(np.zeros((10, 3))) == 0

    def test_batch(self):
        out = np.zeros((4, 2, 3))
        out[:, 0, 2] = 1
        out[:, 1, 1] = 1
        assert predict(out).tolist() == [2, 1]


class TestChips:
    @pytest.mark.parametrize("family", ["mlp", "mlp-hw-aware", "cm"])
    def test_zero_noise_is_noiseless(self, split, family):
        m = model(family)
        trials = simulate_chips(m, split, 0.0, 3, STEPS, base_seed=9, freeze_encodings=True)
        clean = accuracy(m, split, frozen_encoding(split, STEPS, 9))
        assert [t.accuracy for t in trials] == [clean] * 3

    def test_reproducible(self, split):
        m = model("mlp")
        a = simulate_chips(m, split, 0.1, 3, STEPS, base_seed=4)
        b = simulate_chips(m, split, 0.1, 3, STEPS, base_seed=4)
        assert [t.accuracy for t in a] == [t.accuracy for t in b]
        for ta, tb in zip(a, b):
            for ea, eb in zip(ta.errors, tb.errors):
                np.testing.assert_array_equal(ea, eb)

    def test_chips_differ(self, split):
        trials = simulate_chips(model("mlp"), split, 0.1, 2, STEPS, base_seed=4)
        assert not np.array_equal(trials[0].errors[0], trials[1].errors[0])

    def test_error_shapes_match_weights(self, split):
        m = model("cm")
        (t,) = simulate_chips(m, split, 0.1, 1, STEPS, base_seed=1)
        assert [e.shape for e in t.errors] == [w.shape for w in m.weights()]
        assert 0 <= t.accuracy <= 1

    def test_chip_index_determines_trial(self, split):
        # a chip's result depends on its index only, not on how many chips run
        m = model("mlp")
        five = simulate_chips(m, split, 0.1, 5, STEPS, base_seed=2)
        two = simulate_chips(m, split, 0.1, 2, STEPS, base_seed=2)
        assert [t.accuracy for t in two] == [t.accuracy for t in five[:2]]

    def test_parallel_equals_sequential(self, split):
        m = model("mlp")
        seq = simulate_chips(m, split, 0.1, 3, STEPS, base_seed=3)
        par = simulate_chips(m, split, 0.1, 3, STEPS, base_seed=3, jobs=2)
        assert [t.accuracy for t in seq] == [t.accuracy for t in par]

    def test_bad_arguments(self, split):
        m = model("mlp")
        with pytest.raises(ValueError):
            simulate_chips(m, split, 0.1, 0, STEPS, 0)
        with pytest.raises(ValueError):
            simulate_chips(m, split, -0.1, 1, STEPS, 0)
        with pytest.raises(ValueError):
            simulate_chips(m, split.subset([]), 0.1, 1, STEPS, 0)


def results(accs):
    return [ModelResult(name, "hidden-32", "mlp", list(v)) for name, v in accs.items()]


class TestReport:
    def test_single_model(self):
        report = summarize(results({"mlp": [0.8] * 30}))
        assert report.comparisons == []

    def test_disjoint_vectors(self):
        report = summarize(results({"a": [0.9] * 30, "b": [0.8] * 30}))
        assert report.model("a").median - report.model("b").median == pytest.approx(0.1)
        assert report.comparison("hidden-32", "a", "b").p_adjusted < 0.001

    def test_identical_vectors(self):
        report = summarize(results({"a": [0.8] * 30, "b": [0.8] * 30}))
        assert report.comparisons[0].p_adjusted == 1.0

    def test_unequal_lengths(self):
        with pytest.raises(ValueError):
            summarize(results({"a": [0.8] * 30, "b": [0.8] * 29}))

    def test_groups_are_tested_separately(self):
        rs = results({"a": [0.9] * 5, "b": [0.8] * 5})
        rs += [ModelResult("a", "hidden-128", "mlp", [0.7] * 5)]
        report = summarize(rs)
        assert report.groups() == ["hidden-32", "hidden-128"]
        assert len(report.comparisons) == 1

    def test_json_round_trip(self):
        report = summarize(results({"a": list(np.linspace(0.7, 0.9, 30)), "b": [0.8] * 30}), alpha=0.1,
                           n_chips=30)
        back = EvalReport.from_json(report.to_json())
        assert back.to_dict() == report.to_dict()

    def test_malformed_json_names_location(self):
        with pytest.raises(ReportError, match=r"r.json:1:"):
            EvalReport.from_json("{bad", "r.json")

    def test_empty_accuracy_vector(self):
        text = json.dumps({"models": [{"name": "a", "group": "g", "family": "mlp", "accuracies": []}]})
        with pytest.raises(ReportError, match="empty"):
            EvalReport.from_json(text)

    def test_csv_exports(self):
        report = summarize(results({"a": [0.5, 0.6, 0.7], "b": [0.1, 0.2, 0.3]}))
        rows = report.accuracy_csv().splitlines()
        assert rows[0] == "group,model,chip,accuracy"
        assert len(rows) == 7
        box = report.box_csv().splitlines()
        assert box[0].startswith("group,model,median,q1,q3")
        assert box[1].startswith("hidden-32,a,0.6,")


class TestPlot:
    def test_stars(self):
        assert [stars(p) for p in (0.0001, 0.005, 0.03, 0.2)] == ["***", "**", "*", "ns"]

    def test_svg_has_boxes_and_brackets(self):
        report = summarize(results({"a": [0.9] * 30, "b": [0.8] * 30, "c": [0.8] * 30}))
        svg = box_plot_svg(report, title="demo")
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        assert svg.count("<rect x=") >= 3
        assert "***" in svg
        assert "demo" in svg

    def test_empty_report(self):
        with pytest.raises(ValueError):
            box_plot_svg(EvalReport([]))
