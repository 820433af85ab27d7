import numpy as np
import pytest

from simecs import experiments


@pytest.fixture(scope="module")
def missing_sweep():
    return experiments.fig4_missing(m=500, fractions=(0.0, 0.5))


def test_missing_sweep_agrees_with_mean_fill_when_nothing_is_hidden(missing_sweep):
    simec = missing_sweep.series("simec_YYt")[0.0]
    fill = missing_sweep.series("mean_fill_eig")[0.0]
    assert abs(simec - fill) <= 0.1 * fill


def test_half_missing_stays_above_full_kpca(missing_sweep):
    assert missing_sweep.series("simec_YYt")[0.5] > missing_sweep.series("kpca_full")[0.5]


def test_split_nonmetric_parts_are_psd():
    _, s, _ = experiments.simpson_target(120)
    s1, s2 = experiments.split_nonmetric(s, 4)
    for part in (s1, s2):
        np.testing.assert_allclose(part, part.T, atol=1e-12)
        assert np.linalg.eigvalsh(part).min() > -1e-10
    # the two parts capture opposite-sign spectra of s
    assert np.sum(s * s1) > 0 and np.sum(s * s2) < 0


def test_result_csv_is_sorted_by_sweep_order(tmp_path):
    res = experiments.ExperimentResult("demo", [2.0, 1.0])
    res.add(1.0, "b", 0.5)
    res.add(2.0, "a", 0.25)
    res.add(1.0, "a", 1 / 3)
    path = tmp_path / "demo.csv"
    res.write_csv(path)
    assert path.read_text().splitlines() == [
        "sweep_value,method,mse", "2,a,0.25", "1,a,0.33333333333333331", "1,b,0.5"]
