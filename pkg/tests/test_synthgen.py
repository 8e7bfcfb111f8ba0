"""Tests for the synthetic benchmark generator and instruction templates."""

import numpy as np
import pytest

from tsedit import synthgen
from tsedit.errors import ConfigError, SchemaError
from tsedit.synthgen import (
    SynthConfig,
    TemplateSet,
    component_series,
    compose_series,
    default_schema,
    gen_noise,
    gen_season,
    gen_season_info,
    gen_shift,
    gen_trend,
    generate_dataset,
    render_instruction,
)

T = 200


def rng_for(seed):
    return np.random.default_rng(seed)


def ols_slope(x):
    t = np.arange(len(x))
    return np.polyfit(t, x, 1)[0]


def estimate_step(x, passes=2, n_freqs=4):
    """Change-point oracle: largest step coefficient over all candidate times.

    Each pass projects out a quadratic trend plus the strongest in-band
    sinusoids (zero-padded periodogram peaks) and scans step candidates with
    the residual regression (Frisch-Waugh); the second pass re-estimates the
    seasonal frequencies after removing the detected step, so trend and
    seasonality do not masquerade as (or hide) steps.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    t = np.arange(n, dtype=float)
    pad = 4 * n
    step_est = np.zeros(n)
    best = 0.0
    for _ in range(passes):
        resid = x - step_est
        detr = resid - np.polyval(np.polyfit(t, resid, 2), t)
        spectrum = np.abs(np.fft.rfft(detr, pad))
        freqs = np.fft.rfftfreq(pad)
        banded = np.where((freqs > 1 / 55) & (freqs < 1 / 16), spectrum, 0.0)
        peaks = [i for i in range(1, len(banded) - 1)
                 if banded[i] > banded[i - 1] and banded[i] >= banded[i + 1] and banded[i] > 0]
        peaks.sort(key=lambda i: -banded[i])
        cols = [np.ones(n), t, t * t]
        for i in peaks[:n_freqs]:
            cols.append(np.sin(2 * np.pi * freqs[i] * t))
            cols.append(np.cos(2 * np.pi * freqs[i] * t))
        q, _ = np.linalg.qr(np.column_stack(cols))
        rx = x - q @ (q.T @ x)
        best, best_at = 0.0, None
        for s in range(10, n - 9):
            step = (t >= s).astype(float)
            rs = step - q @ (q.T @ step)
            denom = rs @ rs
            if denom > 1e-9:
                coef = (rx @ rs) / denom
                if abs(coef) > abs(best):
                    best, best_at = coef, s
        step_est = np.zeros(n)
        step_est[best_at:] = best
    return abs(best)


class TestTrend:
    def test_flat_is_constant(self):
        x = gen_trend("flat", rng_for(0), T)
        assert np.ptp(x) == 0.0
        assert -5.0 <= x[0] <= 5.0

    @pytest.mark.parametrize("seed", range(8))
    def test_upward_linear_slope_in_range(self, seed):
        slope = ols_slope(gen_trend("upward-linear", rng_for(seed), T))
        assert 0.05 <= slope <= 0.20

    @pytest.mark.parametrize("seed", range(8))
    def test_downward_linear_slope_in_range(self, seed):
        slope = ols_slope(gen_trend("downward-linear", rng_for(seed), T))
        assert -0.20 <= slope <= -0.05

    def test_downward_quadratic_has_negative_curvature(self):
        x = gen_trend("downward-quadratic", rng_for(3), T)
        assert np.all(np.diff(x, 2) < 0)

    def test_upward_quadratic_has_positive_curvature_and_offset_range(self):
        x = gen_trend("upward-quadratic", rng_for(4), T)
        assert np.all(np.diff(x, 2) > 0)
        assert abs(x.mean()) <= 5.0

    def test_linear_centered_mean_is_offset(self):
        x = gen_trend("upward-linear", rng_for(5), T)
        assert -5.0 <= x.mean() <= 5.0

    def test_unknown_level_raises(self):
        with pytest.raises(SchemaError):
            gen_trend("sideways", rng_for(0), T)


class TestSeason:
    def test_single_pattern_has_dominant_peak_at_its_period(self):
        found = 0
        for seed in range(40):
            x, info = gen_season_info("yes", rng_for(seed), T)
            if len(info["components"]) != 1:
                continue
            found += 1
            _, period, _ = info["components"][0]
            spectrum = np.abs(np.fft.rfft(x - x.mean()))
            freqs = np.fft.rfftfreq(T)
            peak = freqs[np.argmax(spectrum)]
            assert abs(peak - 1.0 / period) <= 1.0 / T
        assert found >= 5  # about half should be single-pattern draws

    def test_no_seasonality_stays_below_amplitude_floor(self):
        for seed in range(100):
            x = gen_season("no", rng_for(seed), T)
            assert np.max(np.abs(x)) < 0.3

    def test_multi_pattern_draws_at_least_two_components(self):
        seen = set()
        for seed in range(40):
            _, info = gen_season_info("yes", rng_for(seed), T)
            seen.add(len(info["components"]))
        assert seen - {1} != set() and all(k in (1, 2, 3) for k in seen)

    def test_fixed_seed_is_deterministic(self):
        assert np.array_equal(gen_season("yes", rng_for(9), T), gen_season("yes", rng_for(9), T))


class TestShift:
    @pytest.mark.parametrize("seed", range(8))
    def test_upward_change_point_in_valid_window(self, seed):
        x = gen_shift("upward", rng_for(seed), T)
        t_s = int(np.argmax(np.diff(x))) + 1
        assert 20 <= t_s <= 180

    @pytest.mark.parametrize("seed", range(8))
    def test_upward_jump_magnitude_matches_delta_range(self, seed):
        x = gen_shift("upward", rng_for(seed), T)
        t_s = int(np.argmax(np.diff(x))) + 1
        jump = x[t_s:].mean() - x[:t_s].mean()
        assert 14.5 <= jump <= 20.5

    def test_downward_shift_is_negative(self):
        x = gen_shift("downward", rng_for(2), T)
        t_s = int(np.argmin(np.diff(x))) + 1
        assert x[t_s:].mean() - x[:t_s].mean() < -14.5

    @pytest.mark.parametrize("seed", range(8))
    def test_none_has_small_mean(self, seed):
        assert abs(gen_shift("none", rng_for(seed), T).mean()) < 0.05

    def test_values_before_shift_near_zero(self):
        x = gen_shift("upward", rng_for(1), T)
        t_s = int(np.argmax(np.diff(x))) + 1
        assert np.max(np.abs(x[:t_s])) < 0.3


class TestNoise:
    @pytest.mark.parametrize("seed", range(8))
    def test_low_noise_std_in_range(self, seed):
        assert 0.005 < gen_noise("low", rng_for(seed), T).std() < 0.15

    @pytest.mark.parametrize("seed", range(8))
    def test_high_noise_std_in_range(self, seed):
        assert 1.3 < gen_noise("high", rng_for(seed), T).std() < 2.2

    def test_fixed_seed_regenerates_identically(self):
        assert np.array_equal(gen_noise("high", rng_for(3), T), gen_noise("high", rng_for(3), T))


class TestGenerateDataset:
    def test_one_sample_per_combination_gives_sixty_series(self):
        ds = generate_dataset(SynthConfig(samples_per_combination=1, seed=0))
        assert len(ds.series) == 60

    def test_combination_coverage_is_exact(self):
        ds = generate_dataset(SynthConfig(samples_per_combination=3, seed=1))
        counts = {}
        for s in ds.series:
            key = tuple(sorted(s.attributes.items()))
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 60
        assert set(counts.values()) == {3}

    def test_split_fractions(self):
        ds = generate_dataset(SynthConfig(samples_per_combination=5, seed=2))
        n = len(ds.series)
        assert len(ds.split("train")) == int(n * 0.7)
        assert len(ds.split("val")) == int(n * 0.2)
        assert len(ds.split("test")) == n - int(n * 0.7) - int(n * 0.2)

    def test_regeneration_is_bit_identical(self):
        a = generate_dataset(SynthConfig(samples_per_combination=2, seed=9))
        b = generate_dataset(SynthConfig(samples_per_combination=2, seed=9))
        for sa, sb in zip(a.series, b.series):
            assert sa.id == sb.id and sa.split == sb.split
            assert np.array_equal(sa.values, sb.values)

    def test_additivity_components_sum_bit_exactly(self):
        ds = generate_dataset(SynthConfig(samples_per_combination=1, seed=4))
        for s in ds.series[::7]:
            total = np.zeros(ds.config.T)
            for family, level in s.attributes.items():
                total = total + component_series(s.gen["seed"], s.gen["index"], family, level,
                                                 ds.config.T)
            assert np.array_equal(total, s.values)
            assert np.array_equal(
                compose_series(s.gen["seed"], s.gen["index"], s.attributes, ds.config.T),
                s.values)

    def test_enabled_families_restrict_schema_and_combos(self):
        ds = generate_dataset(SynthConfig(samples_per_combination=2, seed=3,
                                          families=("trend", "shift")))
        assert ds.schema.names == ["trend", "shift"]
        assert len(ds.series) == 5 * 3 * 2

    def test_descriptions_are_canonical(self):
        ds = generate_dataset(SynthConfig(samples_per_combination=1, seed=5))
        templates = TemplateSet.canonical(ds.schema)
        for s in ds.series[::11]:
            assert s.description == render_instruction(s.attributes, templates, "canonical")

    def test_too_short_series_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(T=10)


class TestLabelFaithfulness:
    @pytest.fixture(scope="class")
    def dataset(self):
        return generate_dataset(SynthConfig(samples_per_combination=3, seed=20))

    def test_upward_shift_series_have_detectable_step(self, dataset):
        items = [s for s in dataset.series if s.attributes["shift"] == "upward"]
        assert items
        for s in items:
            assert estimate_step(s.values) >= 14.0

    def test_high_noise_series_have_large_windowed_std(self, dataset):
        items = [s for s in dataset.series if s.attributes["noise"] == "high"]
        for s in items:
            windows = s.values.reshape(20, 10)
            assert np.median(windows.std(axis=1)) > 1.0

    def test_flat_trend_component_has_negligible_slope(self, dataset):
        items = [s for s in dataset.series if s.attributes["trend"] == "flat"]
        for s in items[:20]:
            component = component_series(s.gen["seed"], s.gen["index"], "trend", "flat", 200)
            assert abs(ols_slope(component)) < 0.01


class TestTemplatesAndInstructions:
    def test_canonical_rendering_matches_published_templates(self):
        schema = default_schema()
        templates = TemplateSet.canonical(schema)
        attrs = {"trend": "upward-linear", "seasonality": "yes", "shift": "none", "noise": "low"}
        assert render_instruction(attrs, templates) == (
            "The time series shows upward linear trend. "
            "The time series exhibits a seasonal pattern. "
            "No sharp shifts. "
            "The time series exhibits low variability."
        )

    def test_single_attribute_schema_renders_one_sentence(self):
        schema = synthgen.AttributeSchema([("noise", ("low", "high"))])
        templates = TemplateSet.canonical(schema)
        assert render_instruction({"noise": "high"}, templates) == \
            "The time series exhibits high variability."

    def test_missing_template_raises(self):
        schema = synthgen.AttributeSchema([("mystery", ("a", "b"))])
        with pytest.raises(SchemaError):
            TemplateSet.canonical(schema)

    def test_paraphrase_mode_without_file_is_config_error(self):
        templates = TemplateSet.canonical(default_schema())
        with pytest.raises(ConfigError):
            render_instruction({"trend": "flat", "seasonality": "no", "shift": "none",
                                "noise": "low"}, templates, "paraphrase-train",
                               np.random.default_rng(0))

    def test_paraphrase_split_is_disjoint_and_70_30(self):
        templates = TemplateSet.canonical(default_schema())
        records = [{"attribute": "trend", "level": "flat", "sentence": f"Trendless series v{i}."}
                   for i in range(10)]
        templates.load_paraphrases(records)
        train = set(templates.paraphrase_train[("trend", "flat")])
        heldout = set(templates.paraphrase_heldout[("trend", "flat")])
        assert len(train) == 7 and len(heldout) == 3
        assert not train & heldout

    def test_paraphrase_train_rendering_draws_from_train_pool(self):
        templates = TemplateSet.canonical(default_schema())
        templates.load_paraphrases(
            [{"attribute": "trend", "level": "flat", "sentence": f"No trend at all {i}."}
             for i in range(10)])
        attrs = {"trend": "flat", "seasonality": "no", "shift": "none", "noise": "low"}
        rng = np.random.default_rng(1)
        heldout = set(templates.paraphrase_heldout[("trend", "flat")])
        for _ in range(20):
            sentence = render_instruction(attrs, templates, "paraphrase-train", rng).split(". ")[0] + "."
            assert sentence not in heldout

    def test_schema_validation(self):
        with pytest.raises(SchemaError):
            synthgen.AttributeSchema([("a", ("x",))])
        with pytest.raises(SchemaError):
            synthgen.AttributeSchema([("a", ("x", "x"))])
        with pytest.raises(SchemaError):
            synthgen.AttributeSchema([("a", ("x", "y")), ("a", ("p", "q"))])
