//! Small deterministic helpers shared across modules.

/// FNV-1a 64-bit hash. Stable across platforms and releases; used for
/// seed derivation, token bucketing and weight checksums.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a per-stage seed from the single run seed.
///
/// Every stochastic stage (corpus generation, split planning, training
/// shuffles, probe inits, ...) gets its own stream so that changing one
/// stage's consumption pattern does not perturb the others.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + stage.len());
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(stage.as_bytes());
    fnv1a64(&buf)
}

/// Running FNV-1a hasher for checksumming weight tensors.
#[derive(Debug, Clone)]
pub struct Checksum(u64);

impl Checksum {
    pub fn new() -> Self {
        Checksum(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn update_f64s(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.update(&v.to_le_bytes());
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Checksum {
    fn default() -> Self {
        Self::new()
    }
}

/// Percentile with linear interpolation between order statistics.
/// `q` in [0, 1]. Input need not be sorted; empty input returns None.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        Some(sorted[lo])
    } else {
        let frac = pos - lo as f64;
        Some(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
    }
}

/// Median via [`percentile`].
pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 0.5)
}
