use crate::error::{Error, Result};

/// Affine map applied to the raw observations: `stored = (raw − shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub shift: f64,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

/// Time-stamped scalar observations with strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    times: Vec<f64>,
    values: Vec<f64>,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        for (i, (t, y)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite(i));
            }
        }
        for i in 1..times.len() {
            if times[i] == times[i - 1] {
                return Err(Error::DuplicateTimestamp(i));
            }
            if times[i] < times[i - 1] {
                return Err(Error::NonIncreasingTimes(i));
            }
        }
        Ok(Self {
            times,
            values,
            normalization: Normalization::default(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Observations after normalization.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Subtracts the sample mean.
    pub fn centered(self) -> Self {
        let mean = self.raw_values().iter().sum::<f64>() / self.len() as f64;
        self.with_normalization(Normalization {
            shift: mean,
            scale: 1.0,
        })
    }

    /// Subtracts the sample mean and divides by the sample standard deviation.
    pub fn standardized(self) -> Self {
        let raw = self.raw_values();
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        self.with_normalization(Normalization { shift: mean, scale })
    }

    pub fn with_normalization(self, norm: Normalization) -> Self {
        let raw = self.raw_values();
        Self {
            values: raw.iter().map(|y| (y - norm.shift) / norm.scale).collect(),
            times: self.times,
            normalization: norm,
        }
    }

    pub fn raw_values(&self) -> Vec<f64> {
        let n = self.normalization;
        self.values.iter().map(|y| y * n.scale + n.shift).collect()
    }

    pub fn denormalize_mean(&self, m: f64) -> f64 {
        m * self.normalization.scale + self.normalization.shift
    }

    pub fn denormalize_variance(&self, v: f64) -> f64 {
        v * self.normalization.scale * self.normalization.scale
    }

    /// Rows with `times < cut` and the rest.
    pub fn split_at_time(&self, cut: f64) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.times[i] < cut)
    }

    /// Sub-dataset with the given (sorted) row indices and the same normalization.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut d = Dataset::new(
            rows.iter().map(|&i| self.times[i]).collect(),
            rows.iter().map(|&i| self.values[i]).collect(),
        )?;
        d.normalization = self.normalization;
        Ok(d)
    }

    /// Shifts every timestamp by `c`.
    pub fn translated(&self, c: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t + c).collect(),
            values: self.values.clone(),
            normalization: self.normalization,
        }
    }
}

/// Observation noise variance `σ_n²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma_n2: f64,
}

impl NoiseModel {
    pub fn new(sigma_n2: f64) -> Result<Self> {
        if !(sigma_n2.is_finite() && sigma_n2 > 0.0) {
            return Err(Error::InvalidNoise(sigma_n2));
        }
        Ok(Self { sigma_n2 })
    }

    pub fn variance(&self) -> f64 {
        self.sigma_n2
    }
}

/// Which state blocks carry an observation; unobserved blocks have infinite
/// observation variance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask(Vec<bool>);

impl ObservationMask {
    pub fn new(observed: Vec<bool>) -> Self {
        Self(observed)
    }

    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn none(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn n_observed(&self) -> usize {
        self.0.iter().filter(|o| **o).count()
    }
}
