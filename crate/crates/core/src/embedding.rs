use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-9;

/// A unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    values: Vec<f64>,
}

impl SpeakerEmbedding {
    /// Wrap an already normalized vector; rejects norms off by more than 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if values.is_empty() || !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self { values })
    }

    /// Scale `values` to unit length.
    pub fn normalize(mut values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &SpeakerEmbedding) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn negated(&self) -> SpeakerEmbedding {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

impl AsRef<[f64]> for SpeakerEmbedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
