//! Frame-by-bin feature matrices: the sample space of the diffusion model.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const HEADER: &str = "voxtend-fbank v1";

/// A `frames × bins` row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if frames == 0 || bins == 0 {
            return Err(Error::invalid(format!(
                "feature map needs at least one frame and one bin, got {frames}x{bins}"
            )));
        }
        if values.len() != frames * bins {
            return Err(Error::invalid(format!(
                "{} values for a {frames}x{bins} map",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at frame {} bin {}",
                i / bins,
                i % bins
            )));
        }
        Ok(Self {
            frames,
            bins,
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(frames: usize, bins: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), frames * bins);
        Self {
            frames,
            bins,
            values,
        }
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self::from_vec_unchecked(frames, bins, vec![0.0; frames * bins])
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Self {
        Self::from_vec_unchecked(frames, bins, vec![value; frames * bins])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let bins = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != bins) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(rows.len(), bins, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.bins)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> FeatureMap {
        Self::from_vec_unchecked(self.frames, self.bins, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two equally shaped maps.
    pub fn zip_with(&self, other: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> Result<FeatureMap> {
        self.ensure_same_shape(other)?;
        Ok(Self::from_vec_unchecked(
            self.frames,
            self.bins,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Frames `start..start + count`.
    pub fn slice_frames(&self, start: usize, count: usize) -> Result<FeatureMap> {
        if count == 0 || start + count > self.frames {
            return Err(Error::invalid(format!(
                "frame slice {start}..{} out of 0..{}",
                start + count,
                self.frames
            )));
        }
        Ok(Self::from_vec_unchecked(
            count,
            self.bins,
            self.values[start * self.bins..(start + count) * self.bins].to_vec(),
        ))
    }

    /// `self` followed by `other` along the frame axis.
    pub fn concat_frames(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.bins != other.bins {
            return Err(Error::ShapeMismatch {
                expected: (other.frames, self.bins),
                actual: other.shape(),
            });
        }
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        Ok(Self::from_vec_unchecked(self.frames + other.frames, self.bins, values))
    }

    /// Per-bin mean over frames.
    ///
    /// Frame sums use midpoint pairwise summation, so a map concatenated with
    /// itself pools to bit-identical values.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.bins];
        pairwise_row_sum(&self.values, self.bins, &mut sums);
        let n = self.frames as f64;
        sums.iter().map(|s| s / n).collect()
    }

    /// Subtract the per-bin mean from every frame.
    pub fn mean_normalized(&self) -> FeatureMap {
        let mean = self.mean_pool();
        let mut out = self.clone();
        for row in out.values.chunks_exact_mut(self.bins) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 12 + 40);
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "frames={} bins={}", self.frames, self.bins);
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<FeatureMap> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, other)) => return Err(Error::parse(n, format!("expected `{HEADER}`, got `{other}`"))),
            None => return Err(Error::parse(1, "empty input")),
        }
        let (n, dims) = lines.next().ok_or_else(|| Error::parse(2, "missing dimensions line"))?;
        let (frames, bins) = parse_dims(dims).ok_or_else(|| {
            Error::parse(n, format!("expected `frames=<F> bins=<M>`, got `{dims}`"))
        })?;
        let mut values = Vec::with_capacity(frames * bins);
        let mut rows = 0;
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let before = values.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(n, format!("bad number `{tok}`")))?;
                values.push(v);
            }
            if values.len() - before != bins {
                return Err(Error::parse(
                    n,
                    format!("expected {bins} values, found {}", values.len() - before),
                ));
            }
            rows += 1;
        }
        if rows != frames {
            return Err(Error::parse(0, format!("expected {frames} frames, found {rows}")));
        }
        FeatureMap::new(frames, bins, values)
    }
}

fn parse_dims(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let frames = it.next()?.strip_prefix("frames=")?.parse().ok()?;
    let bins = it.next()?.strip_prefix("bins=")?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((frames, bins))
}

fn pairwise_row_sum(values: &[f64], bins: usize, acc: &mut [f64]) {
    let frames = values.len() / bins;
    if frames <= 1 {
        for (a, v) in acc.iter_mut().zip(values) {
            *a += v;
        }
        return;
    }
    let mid = frames / 2;
    let mut left = vec![0.0; bins];
    let mut right = vec![0.0; bins];
    pairwise_row_sum(&values[..mid * bins], bins, &mut left);
    pairwise_row_sum(&values[mid * bins..], bins, &mut right);
    for ((a, l), r) in acc.iter_mut().zip(&left).zip(&right) {
        *a += l + r;
    }
}
