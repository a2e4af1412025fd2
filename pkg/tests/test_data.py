import csv
import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coreloss.data import (
    CSV_HEADER,
    TABLE_SE_COEFFS,
    Dataset,
    GeneratorConfig,
    SplitSpec,
    Standardizer,
    fit_standardizer,
    load_csv,
    load_split,
    save_csv,
    save_split,
    split,
    split_indices,
    split_sizes,
    synth_dataset,
)
from coreloss.empirical import SteinmetzCoeffs, se_predict
from coreloss.errors import DataError
from coreloss.waveform import FLUX_LENGTH, synth_waveform


def make_ds(materials, losses=None, temps=None):
    n = len(materials)
    flux = np.array([synth_waveform("sine", 0.05 + 0.01 * i, 1e5).values for i in range(n)])
    return Dataset(
        tuple(materials), ("sine",) * n,
        np.full(n, 25.0) if temps is None else np.asarray(temps, dtype=float),
        np.linspace(1e5, 2e5, n), flux,
        np.arange(1.0, n + 1) if losses is None else np.asarray(losses, dtype=float),
    )  # fmt: skip


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def good_row(material="3C94", wave="sine", t="25", f="100000", loss="1234.5", n_flux=FLUX_LENGTH):
    return [material, wave, t, f, loss, *(["0.01"] * n_flux)]


class TestDataset:
    def test_vocab_first_appearance(self):
        ds = make_ds(["N87", "3C94", "N87"])
        assert ds.material_vocab == ("N87", "3C94")
        assert ds.waveform_vocab == ("sine",)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            Dataset(("a",), ("sine",), np.zeros(2), np.ones(1), np.zeros((1, FLUX_LENGTH)), np.ones(1))

    def test_flux_shape(self):
        with pytest.raises(DataError):
            Dataset(("a",), ("sine",), np.zeros(1), np.ones(1), np.zeros((1, 1000)), np.ones(1))

    def test_immutable_arrays(self):
        ds = make_ds(["a", "b"])
        with pytest.raises(ValueError):
            ds.loss[0] = 5.0

    def test_take_tracks_origin(self):
        ds = make_ds(["a", "b", "c", "d"])
        sub = ds.take([3, 1])
        assert sub.materials == ("d", "b")
        np.testing.assert_array_equal(sub.origin_index, [3, 1])
        np.testing.assert_array_equal(sub.take([1]).origin_index, [1])

    def test_getitem_and_labeled(self):
        ds = make_ds(["a", "b"], losses=[1.0, np.nan])
        assert ds[0].loss == 1.0 and ds[1].loss is None
        assert not ds.labeled
        assert make_ds(["a"]).labeled

    def test_unknown_channel(self):
        with pytest.raises(DataError):
            make_ds(["a"]).channel("pressure")


class TestCsv:
    def test_two_rows_order_preserved(self, tmp_path):
        p = tmp_path / "d.csv"
        write_rows(p, CSV_HEADER, [good_row("N87", loss="5"), good_row("3C94", loss="7")])
        ds = load_csv(p)
        assert len(ds) == 2
        assert ds.materials == ("N87", "3C94")
        np.testing.assert_array_equal(ds.loss, [5.0, 7.0])
        assert ds.material_vocab == ("N87", "3C94")

    def test_short_flux_row_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        write_rows(p, CSV_HEADER, [good_row(), good_row(n_flux=1023)])
        with pytest.raises(DataError, match="line 3"):
            load_csv(p)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "d.csv"
        header = [c for c in CSV_HEADER if c != "temperature_C"]
        write_rows(p, header, [])
        with pytest.raises(DataError, match="temperature_C"):
            load_csv(p)

    @pytest.mark.parametrize("field,value,column", [
        ("f", "abc", "frequency_Hz"), ("f", "-5", "frequency_Hz"), ("loss", "0", "core_loss_W_per_m3"),
        ("t", "300", "temperature_C"), ("wave", "square", "waveform"), ("loss", "nan", "core_loss_W_per_m3")])
    def test_bad_cells(self, tmp_path, field, value, column):
        p = tmp_path / "d.csv"
        write_rows(p, CSV_HEADER, [good_row(), good_row(**{field: value})])
        with pytest.raises(DataError, match=f"line 3.*{column}"):
            load_csv(p)

    def test_non_numeric_flux(self, tmp_path):
        p = tmp_path / "d.csv"
        row = good_row()
        row[5 + 17] = "x"
        write_rows(p, CSV_HEADER, [row])
        with pytest.raises(DataError, match="b_0017"):
            load_csv(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(DataError):
            load_csv(p)

    def test_unlabeled(self, tmp_path):
        p = tmp_path / "d.csv"
        write_rows(p, CSV_HEADER, [good_row(loss="")])
        with pytest.raises(DataError):
            load_csv(p)
        ds = load_csv(p, require_loss=False)
        assert np.isnan(ds.loss[0])

    def test_round_trip_bit_exact(self, tmp_path):
        ds = synth_dataset(GeneratorConfig(n_samples=12), seed=3)
        p = tmp_path / "d.csv"
        save_csv(ds, p)
        back = load_csv(p)
        assert back.materials == ds.materials
        assert back.waveform_classes == ds.waveform_classes
        for name in ("temperature", "frequency", "flux", "loss"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
        assert back.material_vocab == ds.material_vocab

    def test_save_respects_umask(self, tmp_path):
        p = tmp_path / "d.csv"
        save_csv(make_ds(["a"]), p)
        mask = os.umask(0)
        os.umask(mask)
        assert (p.stat().st_mode & 0o777) == (0o666 & ~mask)
        assert [q.name for q in tmp_path.iterdir()] == ["d.csv"]


class TestSplit:
    def test_full_corpus_sizes(self):
        assert split_sizes(12400, SplitSpec()) == (8680, 1860, 1860)

    def test_small_sizes(self):
        assert split_sizes(10, SplitSpec()) == (8, 1, 1)

    def test_deterministic(self):
        a = split_indices(100, SplitSpec(seed=4))
        b = split_indices(100, SplitSpec(seed=4))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    @given(st.integers(3, 3000), st.integers(0, 2**31))
    def test_partition(self, n, seed):
        parts = split_indices(n, SplitSpec(seed=seed))
        np.testing.assert_array_equal(np.sort(np.concatenate(parts)), np.arange(n))
        assert tuple(len(p) for p in parts) == split_sizes(n, SplitSpec())

    def test_empty(self):
        with pytest.raises(DataError):
            split_indices(0, SplitSpec())

    @pytest.mark.parametrize("fr", [(0.7, 0.2, 0.2), (0.0, 0.5, 0.5), (-0.1, 0.6, 0.5)])
    def test_bad_spec(self, fr):
        with pytest.raises(DataError):
            SplitSpec(*fr)

    def test_split_datasets(self):
        ds = make_ds([str(i) for i in range(20)])
        tr, va, te = split(ds, SplitSpec(seed=1))
        assert (len(tr), len(va), len(te)) == (14, 3, 3)
        assert sorted(tr.materials + va.materials + te.materials, key=int) == list(ds.materials)

    def test_sidecar_round_trip(self, tmp_path):
        spec = SplitSpec(seed=2)
        parts = split_indices(50, spec)
        p = tmp_path / "split.json"
        save_split(p, parts, spec, 50)
        back = load_split(p, 50)
        for x, y in zip(parts, back):
            np.testing.assert_array_equal(x, y)
        with pytest.raises(DataError):
            load_split(p, 51)


class TestStandardizer:
    def test_two_points(self):
        ds = make_ds(["a", "b"], temps=[0.0, 2.0])
        s = fit_standardizer(ds, ("temperature",))
        assert s.mean == (1.0,) and s.std == (1.0,)
        np.testing.assert_array_equal(s.transform("temperature", [0.0, 2.0]), [-1.0, 1.0])

    def test_constant_channel(self):
        ds = make_ds(["a", "b", "c"], temps=[5.0, 5.0, 5.0])
        with pytest.warns(RuntimeWarning):
            s = fit_standardizer(ds, ("temperature",))
        assert s.constant == (True,)
        np.testing.assert_array_equal(s.transform("temperature", ds.temperature), 0.0)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31))
    def test_round_trip_and_moments(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        temps = rng.uniform(-60, 200, n)
        ds = make_ds(["a"] * n, losses=np.exp(rng.normal(size=n)), temps=temps)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            s = fit_standardizer(ds, ("temperature", "frequency", "log_loss"))
        z = s.transform("temperature", temps)
        assert abs(z.mean()) < 1e-9 and abs(z.var() - 1.0) < 1e-9
        np.testing.assert_allclose(s.inverse("temperature", z), temps, rtol=1e-12)

    def test_dict_round_trip(self):
        s = fit_standardizer(make_ds(["a", "b"], temps=[1.0, 4.0]), ("temperature", "frequency"))
        assert Standardizer.from_dict(s.to_dict()) == s

    def test_empty(self):
        with pytest.raises(DataError):
            fit_standardizer(make_ds([]))


class TestGenerator:
    def test_deterministic(self, tmp_path):
        cfg = GeneratorConfig(n_samples=30)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_csv(synth_dataset(cfg, 7), a)
        save_csv(synth_dataset(cfg, 7), b)
        assert a.read_bytes() == b.read_bytes()

    def test_noise_free_sine_matches_se(self):
        cfg = GeneratorConfig(n_samples=40, noise=0.0, temp_coeff=0.0, waveform_classes=("sine",))
        ds = synth_dataset(cfg, 0)
        for i in range(len(ds)):
            c = SteinmetzCoeffs(*TABLE_SE_COEFFS[ds.materials[i]])
            expected = se_predict(c, ds.frequency[i], ds.flux[i].max())
            assert ds.loss[i] == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("c", [0.0, 1e-4, 3e-4])
    def test_temperature_law(self, c):
        # loss / SE is exactly tau(T); with c = 0 temperature has no effect at all.
        cfg = GeneratorConfig(n_samples=200, noise=0.0, temp_coeff=c, waveform_classes=("sine",))
        ds = synth_dataset(cfg, 1)
        assert set(ds.temperature) == {25.0, 50.0, 70.0, 90.0}
        se = np.array([se_predict(SteinmetzCoeffs(*TABLE_SE_COEFFS[m]), f, b.max())
                       for m, f, b in zip(ds.materials, ds.frequency, ds.flux)])
        np.testing.assert_allclose(ds.loss / se, 1 + c * (ds.temperature - 70.0) ** 2, rtol=1e-9)

    def test_temperature_factor(self):
        cfg = GeneratorConfig()
        assert cfg.temperature_factor(70.0) == 1.0
        assert cfg.temperature_factor(25.0) == pytest.approx(1 + 1e-4 * 45**2)

    def test_balanced_and_positive(self):
        ds = synth_dataset(GeneratorConfig(n_samples=400), 2)
        assert ds.labeled and np.all(ds.loss > 0)
        counts = [ds.materials.count(m) for m in TABLE_SE_COEFFS]
        assert counts == [100] * 4
        assert ds.provenance == "synthetic" and ds.rng_seed == 2

    @pytest.mark.parametrize("kwargs", [
        dict(n_samples=0), dict(coeffs={"x": (0.0, 1.5, 2.5)}), dict(noise=-0.1),
        dict(sampling="normal"), dict(waveform_classes=("square",)), dict(coeffs={})])
    def test_rejects(self, kwargs):
        with pytest.raises(DataError):
            GeneratorConfig(**kwargs)

    def test_log_uniform_bounds(self):
        cfg = GeneratorConfig(n_samples=300, sampling="log-uniform")
        ds = synth_dataset(cfg, 0)
        assert ds.frequency.min() >= 5e4 and ds.frequency.max() <= 5e5

    def test_dict_round_trip(self):
        cfg = GeneratorConfig(n_samples=9, sampling="log-uniform")
        assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg
