import math

import numpy as np
import pytest

from shotsort.content import (
    calibrate_photon_number,
    estimate_photons,
    export_calibration_csv,
    rank_shots,
    signal_content,
    PhotonCalibration,
)
from shotsort.dataset import ShotSet
from shotsort.distance import Roi
from shotsort.errors import CalibrationRangeError, InvalidParameterError
from shotsort.traces import TimeAxis, Trace, detector_kernel


class TestSignalContent:
    def test_hand_value(self):
        axis = TimeAxis(0.0, 0.5, 4)
        tr = Trace(axis=axis, values=[1.0, 3.0, 0.0, 7.0])
        # window [0, 1) covers bins 0 and 1
        want = (math.log(2.0) + math.log(4.0)) * 0.5
        assert signal_content(tr, Roi(0.0, 1.0)) == pytest.approx(want)

    def test_negative_values_clamped(self):
        axis = TimeAxis(0.0, 1.0, 2)
        # ShotSet clamps at source; Trace alone may carry negatives
        tr = Trace(axis=axis, values=[-0.5, 1.0])
        assert signal_content(tr, Roi(0.0, 2.0)) == pytest.approx(math.log(2.0))


class TestRankShots:
    def _set(self):
        axis = TimeAxis(0.0, 1.0, 8)
        traces = np.zeros((4, 8))
        traces[0, 4] = 1.0
        traces[1, 4] = 5.0
        traces[2, 4] = 3.0
        traces[3, 4] = 5.0  # ties with shot 1, lower index wins
        return ShotSet(axis=axis, traces=traces)

    def test_descending_with_index_ties(self):
        ranking = rank_shots(self._set())
        assert np.array_equal(ranking.order, [1, 3, 2, 0])
        assert np.array_equal(ranking.top(2), [1, 3])

    def test_default_window_starts_at_3ns(self):
        ranking = rank_shots(self._set())
        assert ranking.window.t_start_ns == 3.0
        assert ranking.window.t_end_ns == 8.0

    def test_early_window_guard(self):
        shots = self._set()
        with pytest.raises(InvalidParameterError):
            rank_shots(shots, window=Roi(0.0, 8.0))
        ranking = rank_shots(shots, window=Roi(0.0, 8.0), allow_early=True)
        assert ranking.window.t_start_ns == 0.0

    def test_early_content_counts_only_with_override(self):
        axis = TimeAxis(0.0, 1.0, 8)
        traces = np.zeros((2, 8))
        traces[0, 1] = 9.0  # before 3 ns, ignored by default
        traces[1, 5] = 1.0
        shots = ShotSet(axis=axis, traces=traces)
        assert rank_shots(shots).order[0] == 1
        assert rank_shots(shots, window=Roi(0.0, 8.0),
                          allow_early=True).order[0] == 0


class TestCalibration:
    def _calibration(self, n_values=(1, 5, 20), n_sims=120):
        axis = TimeAxis(0.0, 0.5, 120)
        t = axis.times()
        avg = Trace(axis=axis, values=np.exp(-t / 25.0))
        kernel = detector_kernel(2.5, 0.5)
        return calibrate_photon_number(avg, kernel, n_values, n_sims,
                                       tail=Roi(30.0, 60.0),
                                       full=Roi(3.0, 60.0), rng_seed=0)

    def test_monotone_entries(self):
        cal = self._calibration()
        means = [e[1] for e in cal.entries]
        assert means == sorted(means)
        assert all(e[2] >= 0 for e in cal.entries)

    def test_deterministic(self):
        a = self._calibration()
        b = self._calibration()
        assert a.entries == b.entries

    def test_n_sims_floor(self):
        with pytest.raises(InvalidParameterError):
            self._calibration(n_sims=99)

    def test_inversion_roundtrip(self):
        cal = self._calibration()
        for n, mean, _ in cal.entries:
            if n < cal.entries[0][0] + 1:
                continue
            est, sigma = estimate_photons(mean, cal)
            assert est == pytest.approx(n, rel=1e-9)
            assert sigma >= 0

    def test_out_of_range(self):
        cal = self._calibration()
        top = cal.entries[-1][1]
        with pytest.raises(CalibrationRangeError) as err:
            estimate_photons(top * 2.0, cal)
        assert err.value.nearest == cal.entries[-1]

    def test_entry_order_validated(self):
        with pytest.raises(InvalidParameterError):
            PhotonCalibration(entries=((5, 1.0, 0.1), (2, 0.5, 0.1)),
                              tail_window=Roi(10.0, 20.0))

    def test_csv_export(self, tmp_path):
        cal = self._calibration()
        path = tmp_path / "cal.csv"
        export_calibration_csv(cal, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "N,content_mean,content_std"
        assert len(lines) == 1 + len(cal.entries)
