//! Noise schedules: per-step `beta`, `alpha = 1 - beta` and the running
//! product `alpha_bar`.
//!
//! Steps are 1-indexed everywhere in the public API (`t` in `1..=T`).

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

const HEADER: &str = "voxtend-schedule v1";

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// Which fixed reverse-process variance to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceKind {
    /// Posterior variance `(1 - ab_{t-1}) / (1 - ab_t) * beta_t`, with `beta_1` at `t = 1`.
    #[default]
    Posterior,
    /// `beta_t`.
    Beta,
}

impl FromStr for VarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(Self::Posterior),
            "beta" => Ok(Self::Beta),
            other => Err(Error::invalid(format!("unknown variance kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    variance: VarianceKind,
}

impl NoiseSchedule {
    pub fn build(kind: ScheduleKind, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let beta = match kind {
            ScheduleKind::Linear => linear_betas(total_steps),
            ScheduleKind::Cosine => cosine_betas(total_steps),
        };
        Self::from_betas(beta)
    }

    /// Validated construction from explicit per-step betas.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::invalid(format!("beta at step {} is {b}, outside (0, 1)", i + 1)));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            variance: VarianceKind::default(),
        })
    }

    /// Unvalidated construction from explicit betas and cumulative products.
    ///
    /// Lets tests inject edge cases (`alpha_t = 1`, `alpha_bar_t ≈ 0`) that
    /// [`NoiseSchedule::build`] can never produce.
    pub fn from_raw_parts(beta: Vec<f64>, alpha_bar: Vec<f64>) -> Self {
        assert_eq!(beta.len(), alpha_bar.len(), "beta and alpha_bar lengths differ");
        let alpha = beta.iter().map(|b| 1.0 - b).collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            variance: VarianceKind::default(),
        }
    }

    pub fn with_variance(mut self, variance: VarianceKind) -> Self {
        self.variance = variance;
        self
    }

    pub fn variance_kind(&self) -> VarianceKind {
        self.variance
    }

    pub fn total_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.beta.len() {
            return Err(Error::invalid(format!(
                "step {t} outside 1..={}",
                self.beta.len()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Reverse-process variance at step `t`; independent of the sample.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        let i = self.check_step(t)?;
        Ok(match self.variance {
            VarianceKind::Beta => self.beta[i],
            VarianceKind::Posterior if i == 0 => self.beta[0],
            VarianceKind::Posterior => {
                (1.0 - self.alpha_bar[i - 1]) / (1.0 - self.alpha_bar[i]) * self.beta[i]
            }
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "T={}", self.beta.len());
        for b in &self.beta {
            let _ = writeln!(out, "beta={b:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, other)) => {
                return Err(Error::parse(n, format!("expected `{HEADER}`, got `{other}`")))
            }
            None => return Err(Error::parse(1, "empty input")),
        }
        let (n, t_line) = lines.next().ok_or_else(|| Error::parse(2, "missing `T=` line"))?;
        let total: usize = t_line
            .strip_prefix("T=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(n, format!("expected `T=<int>`, got `{t_line}`")))?;
        let mut beta = Vec::with_capacity(total);
        for (n, line) in lines {
            let v: f64 = line
                .strip_prefix("beta=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(n, format!("expected `beta=<decimal>`, got `{line}`")))?;
            beta.push(v);
        }
        if beta.len() != total {
            return Err(Error::parse(0, format!("T={total} but {} beta lines", beta.len())));
        }
        Self::from_betas(beta)
    }
}

fn linear_betas(total: usize) -> Vec<f64> {
    if total == 1 {
        return vec![LINEAR_BETA_START];
    }
    let span = LINEAR_BETA_END - LINEAR_BETA_START;
    let last = (total - 1) as f64;
    (0..total)
        .map(|i| {
            if i == total - 1 {
                LINEAR_BETA_END
            } else {
                LINEAR_BETA_START + span * i as f64 / last
            }
        })
        .collect()
}

fn cosine_betas(total: usize) -> Vec<f64> {
    let f = |t: usize| {
        let x = (t as f64 / total as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    (1..=total)
        .map(|t| (1.0 - f(t) / f(t - 1)).clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 1000).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 2e-2);
        assert_eq!(s.alpha(1), 0.9999);
    }

    #[test]
    fn linear_alpha_bar_matches_high_precision_product() {
        // 50-digit products of (1 - beta_t) over the whole schedule
        let s = NoiseSchedule::build(ScheduleKind::Linear, 1000).unwrap();
        let want = 4.035_829_765_375_683e-5;
        assert!((s.alpha_bar(1000) - want).abs() <= 1e-12 * want);
        let s = NoiseSchedule::build(ScheduleKind::Linear, 200).unwrap();
        let want = 0.132_182_754_250_617_8;
        assert!((s.alpha_bar(200) - want).abs() <= 1e-13 * want);
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 1).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.alpha_bar(1), 0.9999);
    }

    #[test]
    fn bad_arguments() {
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 0).is_err());
        assert!("quadratic".parse::<ScheduleKind>().is_err());
        let s = NoiseSchedule::build(ScheduleKind::Linear, 10).unwrap();
        assert!(s.sigma(0).is_err());
        assert!(s.sigma(11).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn sigma_boundary_and_positivity() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 1000).unwrap();
        assert_eq!(s.sigma(1).unwrap(), s.beta(1));
        for t in 1..=1000 {
            assert!(s.sigma(t).unwrap() > 0.0);
        }
        let b = s.clone().with_variance(VarianceKind::Beta);
        assert_eq!(b.sigma(500).unwrap(), s.beta(500));
    }

    #[test]
    fn sigma_at_step_two_matches_formula() {
        // beta_1 = 1e-4, beta_2 = 1e-4 + 0.0199/999 for T = 1000.
        let b1 = 1e-4_f64;
        let b2 = 1e-4 + 0.0199 / 999.0;
        let ab1 = 1.0 - b1;
        let ab2 = ab1 * (1.0 - b2);
        let expected = (1.0 - ab1) / (1.0 - ab2) * b2;
        let s = NoiseSchedule::build(ScheduleKind::Linear, 1000).unwrap();
        assert!((s.sigma(2).unwrap() - expected).abs() <= 1e-15 * expected);
        // 50-digit evaluation of the same expression
        let exact = 5.453_187_661_302_605e-5;
        assert!((s.sigma(2).unwrap() - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn text_format_round_trip() {
        let s = NoiseSchedule::build(ScheduleKind::Cosine, 50).unwrap();
        let text = s.to_text();
        assert!(text.starts_with("voxtend-schedule v1\nT=50\nbeta="));
        assert_eq!(NoiseSchedule::from_text(&text).unwrap(), s);
        assert!(NoiseSchedule::from_text("voxtend-schedule v1\nT=2\nbeta=0.1\n").is_err());
    }

    proptest! {
        #[test]
        fn invariants_hold(total in 1usize..1200, cosine in any::<bool>()) {
            let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
            let s = NoiseSchedule::build(kind, total).unwrap();
            let ab = s.alpha_bars();
            prop_assert_eq!(ab[0], s.alphas()[0]);
            for t in 0..total {
                prop_assert!(s.betas()[t] > 0.0 && s.betas()[t] < 1.0);
                prop_assert_eq!(s.alphas()[t], 1.0 - s.betas()[t]);
                if t > 0 {
                    prop_assert!(ab[t] < ab[t - 1]);
                    let ratio = ab[t] / ab[t - 1];
                    prop_assert!((ratio - s.alphas()[t]).abs() <= 1e-12 * s.alphas()[t]);
                }
            }
            prop_assert!(ab[total - 1] > 0.0 && ab[0] < 1.0);
        }
    }
}
