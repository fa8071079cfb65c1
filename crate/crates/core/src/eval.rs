//! Verification trials, cosine scoring, EER and MinDCF.
//!
//! A trial is accepted iff `score >= threshold`. Metrics are computed from the
//! ROC step function over every distinct score plus `±inf`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Same,
    Different,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: Label,
}

/// Parse `<0|1> <enroll> <test>` lines; blank lines are skipped.
pub fn load_trials(text: &str) -> Result<Vec<Trial>> {
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, enroll, test] = fields[..] else {
            return Err(Error::parse(n, format!("expected 3 fields, found {}", fields.len())));
        };
        let label = match label {
            "1" => Label::Same,
            "0" => Label::Different,
            other => return Err(Error::parse(n, format!("label must be 0 or 1, got `{other}`"))),
        };
        trials.push(Trial {
            enroll: enroll.to_string(),
            test: test.to_string(),
            label,
        });
    }
    Ok(trials)
}

/// Dot product of two unit-norm embeddings.
pub fn cosine_score(a: impl AsRef<[f64]>, b: impl AsRef<[f64]>) -> Result<f64> {
    let (a, b) = (a.as_ref(), b.as_ref());
    if a.len() != b.len() {
        return Err(Error::invalid(format!("embedding dims differ: {} vs {}", a.len(), b.len())));
    }
    for (side, v) in [("first", a), ("second", b)] {
        let norm = crate::embedding::l2_norm(v);
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(Error::invalid(format!("{side} embedding has norm {norm}, expected 1")));
        }
    }
    Ok(crate::embedding::dot(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("NaN score"));
        }
        Ok(Self { scores, labels })
    }

    /// Build from separate same-speaker and different-speaker score lists.
    pub fn from_groups(same: &[f64], different: &[f64]) -> Result<Self> {
        let scores = same.iter().chain(different).copied().collect();
        let labels = std::iter::repeat_n(Label::Same, same.len())
            .chain(std::iter::repeat_n(Label::Different, different.len()))
            .collect();
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let same = self.labels.iter().filter(|l| **l == Label::Same).count();
        let diff = self.labels.len() - same;
        if same == 0 || diff == 0 {
            return Err(Error::invalid(
                "metrics need at least one same-speaker and one different-speaker trial",
            ));
        }
        Ok((same, diff))
    }

    /// `(P_miss, P_fa)` at `-inf`, at every distinct score ascending, and at `+inf`.
    pub fn operating_points(&self) -> Result<Vec<(f64, f64)>> {
        let (n_same, n_diff) = self.counts()?;
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let (ns, nd) = (n_same as f64, n_diff as f64);
        let mut points = Vec::with_capacity(order.len() + 2);
        points.push((0.0, 1.0));
        let (mut same_below, mut diff_below) = (0usize, 0usize);
        let mut i = 0;
        while i < order.len() {
            let v = self.scores[order[i]];
            points.push((same_below as f64 / ns, (n_diff - diff_below) as f64 / nd));
            while i < order.len() && self.scores[order[i]] == v {
                match self.labels[order[i]] {
                    Label::Same => same_below += 1,
                    Label::Different => diff_below += 1,
                }
                i += 1;
            }
        }
        points.push((1.0, 0.0));
        Ok(points)
    }
}

/// Equal error rate, linearly interpolated between the two operating points
/// that bracket `P_miss = P_fa`.
pub fn eer(s: &ScoreSet) -> Result<f64> {
    Ok(eer_from_points(&s.operating_points()?))
}

pub(crate) fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    let i = points
        .iter()
        .position(|(pm, pfa)| pm >= pfa)
        .expect("last operating point has P_miss = 1, P_fa = 0");
    if i == 0 {
        return points[0].0;
    }
    let (pm0, pfa0) = points[i - 1];
    let (pm1, pfa1) = points[i];
    let d0 = pfa0 - pm0;
    let d1 = pfa1 - pm1;
    let lambda = d0 / (d0 - d1);
    pm0 + lambda * (pm1 - pm0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_fa: f64,
    pub c_fr: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 1e-2,
            c_fa: 1.0,
            c_fr: 1.0,
        }
    }
}

/// Minimum detection cost normalized by the best trivial system's cost.
pub fn min_dcf(s: &ScoreSet, params: DcfParams) -> Result<f64> {
    let DcfParams { p_target, c_fa, c_fr } = params;
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::invalid(format!("p_target {p_target} outside (0, 1)")));
    }
    if !(c_fa > 0.0 && c_fr > 0.0) {
        return Err(Error::invalid("detection costs must be positive"));
    }
    let norm = (c_fr * p_target).min(c_fa * (1.0 - p_target));
    Ok(s.operating_points()?
        .iter()
        .map(|&(pm, pfa)| (c_fr * p_target * pm + c_fa * (1.0 - p_target) * pfa) / norm)
        .fold(f64::INFINITY, f64::min))
}

/// `metric=<name> value=<decimal>` lines.
pub fn format_metrics(eer: f64, min_dcf: f64) -> String {
    format!("metric=eer value={eer}\nmetric=mindcf value={min_dcf}\n")
}

/// Parse `score,label` rows (label 0/1); a non-numeric first row is a header.
pub fn load_score_csv(text: &str) -> Result<ScoreSet> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [score, label] = fields[..] else {
            return Err(Error::parse(n, format!("expected `score,label`, got `{line}`")));
        };
        let Ok(score) = score.parse::<f64>() else {
            if n == 1 {
                continue;
            }
            return Err(Error::parse(n, format!("bad score `{score}`")));
        };
        labels.push(match label {
            "1" => Label::Same,
            "0" => Label::Different,
            other => return Err(Error::parse(n, format!("label must be 0 or 1, got `{other}`"))),
        });
        scores.push(score);
    }
    ScoreSet::new(scores, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(same: &[f64], diff: &[f64]) -> ScoreSet {
        ScoreSet::from_groups(same, diff).unwrap()
    }

    #[test]
    fn cosine_values_and_errors() {
        assert_eq!(cosine_score([0.6, 0.8], [0.6, 0.8]).unwrap(), 1.0);
        assert_eq!(cosine_score([1.0, 0.0], [0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_score([0.6, 0.8], [-0.6, -0.8]).unwrap(), -1.0);
        assert!(cosine_score([3.0, 4.0], [0.6, 0.8]).is_err());
        assert!(cosine_score([1.0], [0.6, 0.8]).is_err());
    }

    #[test]
    fn eer_worked_examples() {
        assert_eq!(eer(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 0.0);
        assert_eq!(eer(&set(&[0.6, 0.4], &[0.5, 0.3])).unwrap(), 0.5);
        assert_eq!(eer(&set(&[1.0], &[1.0])).unwrap(), 0.5);
        assert!(eer(&set(&[1.0], &[])).is_err());
    }

    #[test]
    fn min_dcf_boundaries() {
        let p = DcfParams::default();
        assert_eq!(min_dcf(&set(&[0.9, 0.8], &[0.1, 0.2]), p).unwrap(), 0.0);
        // accept-all costs 0.99/0.01 = 99, reject-all costs 0.01/0.01 = 1
        assert_eq!(min_dcf(&set(&[0.5, 0.5], &[0.5, 0.5, 0.5]), p).unwrap(), 1.0);
        let bad = DcfParams { p_target: 1.0, ..p };
        assert!(min_dcf(&set(&[0.9], &[0.1]), bad).is_err());
        let bad = DcfParams { c_fa: 0.0, ..p };
        assert!(min_dcf(&set(&[0.9], &[0.1]), bad).is_err());
    }

    #[test]
    fn trials_parse() {
        let t = load_trials("1 a.wav b.wav\n\n0 a.wav c.wav\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].label, Label::Same);
        assert_eq!(t[1].label, Label::Different);
        assert_eq!(t[1].test, "c.wav");
        let err = load_trials("2 a.wav b.wav").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(matches!(load_trials("1 a\n").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn score_csv_parse() {
        let s = load_score_csv("score,label\n0.9,1\n0.1,0\n").unwrap();
        assert_eq!(s.len(), 2);
        assert!(load_score_csv("0.9,1\nx,0\n").is_err());
        assert!(load_score_csv("0.9,3\n").is_err());
    }

    #[test]
    fn metric_lines() {
        assert_eq!(format_metrics(0.25, 0.5), "metric=eer value=0.25\nmetric=mindcf value=0.5\n");
    }

    /// O(n^2) sweep: every candidate threshold counted from scratch.
    fn brute_points(scores: &[f64], labels: &[Label]) -> Vec<(f64, f64)> {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        thresholds.insert(0, f64::NEG_INFINITY);
        thresholds.push(f64::INFINITY);
        let ns = labels.iter().filter(|l| **l == Label::Same).count() as f64;
        let nd = labels.len() as f64 - ns;
        thresholds
            .iter()
            .map(|&th| {
                let mut miss = 0usize;
                let mut fa = 0usize;
                for (s, l) in scores.iter().zip(labels) {
                    match l {
                        Label::Same if *s < th => miss += 1,
                        Label::Different if *s >= th => fa += 1,
                        _ => {}
                    }
                }
                (miss as f64 / ns, fa as f64 / nd)
            })
            .collect()
    }

    fn score_sets() -> impl Strategy<Value = ScoreSet> {
        (2usize..200)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(prop_oneof![(0i32..12).prop_map(|k| k as f64 / 4.0), -3.0..3.0f64], n),
                    proptest::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both labels present", |(_, l)| l.iter().any(|b| *b) && l.iter().any(|b| !*b))
            .prop_map(|(s, l)| {
                let labels = l.into_iter().map(|b| if b { Label::Same } else { Label::Different }).collect();
                ScoreSet::new(s, labels).unwrap()
            })
    }

    proptest! {
        #[test]
        fn matches_brute_force_sweep(s in score_sets()) {
            let points = brute_points(s.scores(), s.labels());
            prop_assert_eq!(eer(&s).unwrap(), eer_from_points(&points));
            let p = DcfParams::default();
            let norm = (p.c_fr * p.p_target).min(p.c_fa * (1.0 - p.p_target));
            let brute = points
                .iter()
                .map(|&(pm, pfa)| (p.c_fr * p.p_target * pm + p.c_fa * (1.0 - p.p_target) * pfa) / norm)
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min_dcf(&s, p).unwrap(), brute);
        }

        #[test]
        fn rank_invariance(s in score_sets()) {
            let warped = ScoreSet::new(s.scores().iter().map(|x| x.exp() * 3.0 - 1.0).collect(), s.labels().to_vec()).unwrap();
            prop_assert_eq!(eer(&s).unwrap(), eer(&warped).unwrap());
            let p = DcfParams::default();
            prop_assert_eq!(min_dcf(&s, p).unwrap(), min_dcf(&warped, p).unwrap());
        }

        #[test]
        fn negation_with_swapped_labels(s in score_sets()) {
            let flipped = ScoreSet::new(
                s.scores().iter().map(|x| -x).collect(),
                s.labels().iter().map(|l| match l { Label::Same => Label::Different, Label::Different => Label::Same }).collect(),
            ).unwrap();
            prop_assert!((eer(&s).unwrap() - eer(&flipped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn bounds(s in score_sets()) {
            let e = eer(&s).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            // Same scores stochastically dominating different ones puts every
            // operating point on or below the chance diagonal.
            let points = brute_points(s.scores(), s.labels());
            if points.iter().all(|&(pm, pfa)| pm + pfa <= 1.0) {
                prop_assert!(e <= 0.5);
            }
            let d = min_dcf(&s, DcfParams::default()).unwrap();
            prop_assert!(d <= 1.0);
            let separable = points.iter().any(|&(pm, pfa)| pm == 0.0 && pfa == 0.0);
            prop_assert_eq!(d == 0.0, separable);
        }
    }
}

