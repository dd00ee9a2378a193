//! Preprocessing chain and windowing for raw recordings.
//!
//! The chain runs in a fixed order: channel selection, cropping, amplitude
//! clipping, resampling, unit scaling. Every transform is a pure function;
//! recordings too short to crop are reported as errors so callers can skip
//! them instead of padding.

use ndarray::{s, Array2};

use crate::data::{Recording, STANDARD_CHANNELS};
use crate::{Error, Result};

/// Settings for [`preprocess`]. Defaults: the standard 21-channel subset,
/// skip 60 s then keep 120 s, clip at ±800 µV, resample to 100 Hz, divide
/// by 30.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub channel_subset: Vec<String>,
    pub skip_s: f64,
    pub keep_s: f64,
    pub clip_uv: f64,
    pub target_rate_hz: f64,
    pub scale_divisor: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            channel_subset: STANDARD_CHANNELS.iter().map(|s| s.to_string()).collect(),
            skip_s: 60.0,
            keep_s: 120.0,
            clip_uv: 800.0,
            target_rate_hz: 100.0,
            scale_divisor: 30.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_subset.is_empty() {
            return Err(Error::Config("channel_subset must be nonempty".into()));
        }
        if self.skip_s < 0.0 || self.keep_s.is_nan() || self.keep_s <= 0.0 {
            return Err(Error::Config("skip_s must be >= 0 and keep_s > 0".into()));
        }
        if self.clip_uv.is_nan() || self.clip_uv <= 0.0 {
            return Err(Error::Config("clip_uv must be positive".into()));
        }
        if self.target_rate_hz.is_nan() || self.target_rate_hz <= 0.0 {
            return Err(Error::Config("target_rate_hz must be positive".into()));
        }
        if self.scale_divisor == 0.0 || !self.scale_divisor.is_finite() {
            return Err(Error::Config("scale_divisor must be finite and nonzero".into()));
        }
        Ok(())
    }
}

/// Settings for [`window`]. Defaults: length 1200 samples, stride 519.
/// `stride_samples <= length_samples` guarantees gap-free coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub length_samples: usize,
    pub stride_samples: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length_samples: 1200,
            stride_samples: 519,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length_samples == 0 || self.stride_samples == 0 {
            return Err(Error::Config("window length and stride must be positive".into()));
        }
        if self.stride_samples > self.length_samples {
            return Err(Error::Config(format!(
                "stride {} exceeds window length {}, which would leave gaps",
                self.stride_samples, self.length_samples
            )));
        }
        Ok(())
    }
}

/// One fixed-length slice of a preprocessed recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub recording_id: String,
    pub start_sample: usize,
    pub data: Array2<f32>,
}

/// Reorders rows to `subset` order. Names must match exactly; a missing
/// name is an error that names it.
pub fn select_channels(recording: &Recording, subset: &[String]) -> Result<Recording> {
    let mut rows = Vec::with_capacity(subset.len());
    for name in subset {
        let idx = recording
            .channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| {
                Error::validation(format!(
                    "recording {} has no channel {:?}",
                    recording.id, name
                ))
            })?;
        rows.push(idx);
    }
    let n_samples = recording.n_samples();
    let mut signal = Array2::<f32>::zeros((subset.len(), n_samples));
    for (out_row, &src_row) in rows.iter().enumerate() {
        signal
            .row_mut(out_row)
            .assign(&recording.signal.row(src_row));
    }
    Ok(Recording {
        signal,
        channel_names: subset.to_vec(),
        ..recording.clone()
    })
}

/// Keeps samples `[skip_s*rate, (skip_s+keep_s)*rate)`. A recording shorter
/// than `skip_s + keep_s` is rejected so the caller can skip it.
pub fn crop(recording: &Recording, skip_s: f64, keep_s: f64) -> Result<Recording> {
    let rate = recording.rate_hz;
    let start = (skip_s * rate).round() as usize;
    let len = (keep_s * rate).round() as usize;
    let n = recording.n_samples();
    if start + len > n {
        return Err(Error::RecordingTooShort {
            id: recording.id.clone(),
            have_s: n as f64 / rate,
            need_s: skip_s + keep_s,
        });
    }
    Ok(Recording {
        signal: recording.signal.slice(s![.., start..start + len]).to_owned(),
        ..recording.clone()
    })
}

/// Saturates every value into `[-limit_uv, +limit_uv]`.
pub fn clip_amplitude(signal: &Array2<f32>, limit_uv: f64) -> Array2<f32> {
    let lim = limit_uv as f32;
    signal.mapv(|v| v.clamp(-lim, lim))
}

/// Elementwise division.
pub fn scale(signal: &Array2<f32>, divisor: f64) -> Array2<f32> {
    let d = divisor as f32;
    signal.mapv(|v| v / d)
}

/// Zeroth-order modified Bessel function, by power series.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_sq = (x / 2.0) * (x / 2.0);
    for k in 1..64 {
        term *= half_sq / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-14 {
            break;
        }
    }
    sum
}

/// Best rational approximation p/q to `x` with q bounded, via continued
/// fractions.
fn rational_approx(x: f64, max_den: u64) -> (u64, u64) {
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut rem = x;
    loop {
        let a = rem.floor();
        if a > max_den as f64 {
            break;
        }
        let p2 = (a as u64).saturating_mul(p1).saturating_add(p0);
        let q2 = (a as u64).saturating_mul(q1).saturating_add(q0);
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = rem - a;
        if frac < 1e-12 {
            break;
        }
        rem = 1.0 / frac;
    }
    if q1 == 0 {
        (1, 1)
    } else {
        (p1, q1)
    }
}

/// Polyphase windowed-sinc resampler (Kaiser window, beta 5). Output length
/// is `round(n * dst_hz / src_hz)`; tones below both Nyquist rates keep
/// their frequency. Equal rates return the input unchanged.
pub fn resample(signal: &Array2<f32>, src_hz: f64, dst_hz: f64) -> Array2<f32> {
    assert!(src_hz > 0.0 && dst_hz > 0.0, "rates must be positive");
    if src_hz == dst_hz {
        return signal.clone();
    }
    let (up, down) = rational_approx(dst_hz / src_hz, 4096);
    if up == down {
        return signal.clone();
    }
    let up = up as usize;
    let down = down as usize;

    let n_in = signal.ncols();
    let n_out = (n_in as f64 * dst_hz / src_hz).round() as usize;

    // Filter at the virtual upsampled rate: cutoff at the tighter Nyquist,
    // gain `up` to undo zero-stuffing attenuation.
    let half = 10 * up.max(down);
    let cutoff = 0.5 / up.max(down) as f64;
    let beta = 5.0;
    let denom = bessel_i0(beta);
    let taps: Vec<f64> = (-(half as isize)..=half as isize)
        .map(|d| {
            let x = d as f64;
            let sinc = if d == 0 {
                2.0 * cutoff
            } else {
                (std::f64::consts::TAU * cutoff * x).sin() / (std::f64::consts::PI * x)
            };
            let r = x / half as f64;
            let window = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom;
            up as f64 * sinc * window
        })
        .collect();

    let mut out = Array2::<f32>::zeros((signal.nrows(), n_out));
    for ch in 0..signal.nrows() {
        let row = signal.row(ch);
        for j in 0..n_out {
            // Center of output sample j on the upsampled grid.
            let u = j * down;
            // Input samples m with |u - m*up| <= half contribute.
            let m_lo = (u as isize - half as isize).div_euclid(up as isize).max(0) as usize;
            let m_hi = (((u + half) / up) + 1).min(n_in);
            let mut acc = 0.0f64;
            for m in m_lo..m_hi {
                let d = u as isize - (m * up) as isize;
                if d.unsigned_abs() <= half {
                    acc += row[m] as f64 * taps[(d + half as isize) as usize];
                }
            }
            out[[ch, j]] = acc as f32;
        }
    }
    out
}

/// Runs the full chain in order: select channels, crop, clip, resample,
/// scale. The result is sampled at `cfg.target_rate_hz`.
pub fn preprocess(recording: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    cfg.validate()?;
    let selected = select_channels(recording, &cfg.channel_subset)?;
    let cropped = crop(&selected, cfg.skip_s, cfg.keep_s)?;
    let clipped = clip_amplitude(&cropped.signal, cfg.clip_uv);
    let resampled = resample(&clipped, cropped.rate_hz, cfg.target_rate_hz);
    let scaled = scale(&resampled, cfg.scale_divisor);
    Ok(Recording {
        signal: scaled,
        rate_hz: cfg.target_rate_hz,
        ..cropped
    })
}

/// Window start positions for a recording of `n` samples: multiples of the
/// stride while the window fits, plus one end-aligned tail window when the
/// last base window stops short of `n`.
pub fn window_starts(n: usize, cfg: &WindowConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let len = cfg.length_samples;
    if n < len {
        return Err(Error::validation(format!(
            "recording of {n} samples is shorter than one {len}-sample window"
        )));
    }
    let mut starts: Vec<usize> = (0..)
        .map(|k| k * cfg.stride_samples)
        .take_while(|start| start + len <= n)
        .collect();
    let last_end = starts.last().unwrap() + len;
    if last_end != n {
        starts.push(n - len);
    }
    Ok(starts)
}

/// Cuts a recording into fixed-length windows covering every sample.
pub fn window(recording: &Recording, cfg: &WindowConfig) -> Result<Vec<Window>> {
    let starts = window_starts(recording.n_samples(), cfg)?;
    Ok(starts
        .into_iter()
        .map(|start| Window {
            recording_id: recording.id.clone(),
            start_sample: start,
            data: recording
                .signal
                .slice(s![.., start..start + cfg.length_samples])
                .to_owned(),
        })
        .collect())
}
