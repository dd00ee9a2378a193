//! Averaged gradient maps, per-channel band aggregation and CSV export.

use ndarray::Array2;

use crate::{Error, Result};

/// What each map cell averages across windows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientMode {
    /// Complex-gradient magnitude per bin; cells are nonnegative.
    #[default]
    Magnitude,
    /// Derivative of the similarity along scaling the window's own
    /// content at that bin: positive where amplifying what is already
    /// there raises the similarity, negative where it lowers it.
    Signed,
}

/// Frequency-domain gradient map: one row per channel, one column per
/// real-DFT bin, averaged over a window set.
#[derive(Debug, Clone)]
pub struct GradientMap {
    pub channels: Vec<String>,
    /// Bin center frequencies, `0 ..= rate/2`.
    pub freq_axis_hz: Vec<f64>,
    /// `channels x bins` cell values. The name follows the default mode;
    /// under [`GradientMode::Signed`] cells may be negative.
    pub magnitudes: Array2<f64>,
    pub prompt: String,
    pub n_windows_averaged: usize,
    pub mode: GradientMode,
}

impl GradientMap {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_freq_bins(&self) -> usize {
        self.freq_axis_hz.len()
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.freq_axis_hz.last().copied().unwrap_or(0.0)
    }

    /// Shape agreement, an ascending axis starting at zero, at least one
    /// averaged window, and nonnegative cells in magnitude mode.
    pub fn validate(&self) -> Result<()> {
        let (c, b) = self.magnitudes.dim();
        if c != self.channels.len() || b != self.freq_axis_hz.len() {
            return Err(Error::validation(format!(
                "map is {c}x{b} but has {} channel names and {} axis points",
                self.channels.len(),
                self.freq_axis_hz.len()
            )));
        }
        if b == 0 || self.freq_axis_hz[0] != 0.0 {
            return Err(Error::validation("frequency axis must start at 0"));
        }
        if self.freq_axis_hz.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("frequency axis must ascend"));
        }
        if self.n_windows_averaged == 0 {
            return Err(Error::validation("map averages at least one window"));
        }
        if self.mode == GradientMode::Magnitude
            && self.magnitudes.iter().any(|&v| v.is_nan() || v < 0.0)
        {
            return Err(Error::validation(
                "magnitude map holds a negative or NaN cell",
            ));
        }
        Ok(())
    }
}

/// Per-channel sum of cells with `low < freq <= high`; a band starting at
/// exactly zero also takes the DC bin. Bands tiling `(0, nyquist)` this
/// way cover every bin exactly once, so their aggregates add up.
pub fn topographic_aggregate(map: &GradientMap, band_hz: (f64, f64)) -> Result<Vec<f64>> {
    let (low, high) = band_hz;
    let nyquist = map.nyquist_hz();
    if !(low >= 0.0 && low < high && high <= nyquist) {
        return Err(Error::validation(format!(
            "band {low}..{high} Hz does not satisfy 0 <= low < high <= {nyquist}"
        )));
    }
    let take = |k: usize, f: f64| (f > low && f <= high) || (low == 0.0 && k == 0);
    Ok(map
        .magnitudes
        .rows()
        .into_iter()
        .map(|row| {
            let mut sum = 0.0;
            for (k, (&f, &v)) in map.freq_axis_hz.iter().zip(row.iter()).enumerate() {
                if take(k, f) {
                    sum += v;
                }
            }
            sum
        })
        .collect())
}

/// CSV lines `channel,freq_hz,magnitude`, channels outer, bins inner.
/// Signed maps reuse the magnitude column.
pub fn gradient_map_csv(map: &GradientMap) -> String {
    let mut out = String::from("channel,freq_hz,magnitude\n");
    for (ch, row) in map.channels.iter().zip(map.magnitudes.rows()) {
        for (f, v) in map.freq_axis_hz.iter().zip(row.iter()) {
            out.push_str(&format!("{ch},{f},{v}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// 2 channels x 5 bins at 100 Hz over 8 samples (axis step 12.5 Hz).
    fn small_map(magnitudes: Array2<f64>) -> GradientMap {
        GradientMap {
            channels: vec!["CH01".into(), "CH02".into()],
            freq_axis_hz: vec![0.0, 12.5, 25.0, 37.5, 50.0],
            magnitudes,
            prompt: "test prompt".into(),
            n_windows_averaged: 3,
            mode: GradientMode::Magnitude,
        }
    }

    #[test]
    fn full_band_equals_row_sums() {
        let map = small_map(array![
            [0.5, 1.0, 0.25, 2.0, 0.125],
            [1.5, 0.0, 4.0, 0.5, 1.0],
        ]);
        let agg = topographic_aggregate(&map, (0.0, 50.0)).unwrap();
        for (a, row) in agg.iter().zip(map.magnitudes.rows()) {
            assert_eq!(*a, row.sum());
        }
    }

    #[test]
    fn band_away_from_the_mass_is_zero() {
        // All mass in bin 1 (12.5 Hz); the 25..50 band sees none of it.
        let map = small_map(array![[0.0, 3.0, 0.0, 0.0, 0.0], [0.0, 7.0, 0.0, 0.0, 0.0]]);
        assert_eq!(topographic_aggregate(&map, (25.0, 50.0)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn uniform_map_aggregates_equally_across_channels() {
        let map = small_map(Array2::from_elem((2, 5), 0.25));
        let agg = topographic_aggregate(&map, (10.0, 40.0)).unwrap();
        assert_eq!(agg[0], agg[1]);
        assert_eq!(agg[0], 0.75);
    }

    #[test]
    fn adjacent_bands_add_up_exactly() {
        // Dyadic cell values make every partial sum exact, so the
        // partition identity holds bitwise.
        let map = small_map(array![
            [0.5, 0.25, 8.0, 1.0, 0.125],
            [2.0, 0.0625, 4.0, 16.0, 0.5],
        ]);
        let left = topographic_aggregate(&map, (0.0, 25.0)).unwrap();
        let right = topographic_aggregate(&map, (25.0, 50.0)).unwrap();
        let whole = topographic_aggregate(&map, (0.0, 50.0)).unwrap();
        for ch in 0..2 {
            assert_eq!(left[ch] + right[ch], whole[ch]);
        }
    }

    #[test]
    fn partition_additivity_is_ulp_tight_on_arbitrary_values() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let m = Array2::from_shape_fn((2, 5), |_| rng.gen_range(0.0..1.0));
            let map = small_map(m);
            let cut = [12.5, 25.0, 37.5][rng.gen_range(0..3)];
            let left = topographic_aggregate(&map, (0.0, cut)).unwrap();
            let right = topographic_aggregate(&map, (cut, 50.0)).unwrap();
            let whole = topographic_aggregate(&map, (0.0, 50.0)).unwrap();
            for ch in 0..2 {
                let err = (left[ch] + right[ch] - whole[ch]).abs();
                assert!(err <= 4.0 * f64::EPSILON * whole[ch].abs());
            }
        }
    }

    #[test]
    fn invalid_bands_are_rejected() {
        let map = small_map(Array2::zeros((2, 5)));
        for band in [(-1.0, 10.0), (10.0, 10.0), (30.0, 20.0), (0.0, 50.1)] {
            assert!(topographic_aggregate(&map, band).is_err(), "band {band:?}");
        }
        // The full axis is the widest legal band.
        assert!(topographic_aggregate(&map, (0.0, 50.0)).is_ok());
    }

    #[test]
    fn validation_checks_shape_axis_and_sign() {
        let good = small_map(Array2::zeros((2, 5)));
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.channels.pop();
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.freq_axis_hz[0] = 0.5;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.freq_axis_hz[3] = 20.0;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.magnitudes[[1, 2]] = -0.25;
        assert!(bad.validate().is_err());
        bad.mode = GradientMode::Signed;
        bad.validate().unwrap();

        let mut bad = good.clone();
        bad.n_windows_averaged = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_lists_channels_outer_and_bins_inner() {
        let map = GradientMap {
            channels: vec!["T3".into(), "T5".into()],
            freq_axis_hz: vec![0.0, 0.5, 1.0],
            magnitudes: array![[0.5, 1.25, 0.0], [2.0, 0.75, 3.5]],
            prompt: "p".into(),
            n_windows_averaged: 1,
            mode: GradientMode::Magnitude,
        };
        let csv = gradient_map_csv(&map);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines,
            vec![
                "channel,freq_hz,magnitude",
                "T3,0,0.5",
                "T3,0.5,1.25",
                "T3,1,0",
                "T5,0,2",
                "T5,0.5,0.75",
                "T5,1,3.5",
            ]
        );
    }
}
