//! Fit-quality metrics and the Mann-Whitney U rank-sum test used to compare
//! error distributions across models.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::models::ModelKind;

fn check_lengths(model: &[f64], target: &[f64]) -> Result<()> {
    if model.len() != target.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: model {} vs target {}",
            model.len(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::invalid("series must be non-empty"));
    }
    Ok(())
}

/// Relative L2 error `||model - target|| / ||target||`.
pub fn fit_error(model: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(model, target)?;
    let norm = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let residual = model
        .iter()
        .zip(target)
        .map(|(m, t)| (m - t) * (m - t))
        .sum::<f64>()
        .sqrt();
    Ok(residual / norm)
}

/// Mean absolute pointwise deviation.
pub fn mean_deviation(model: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(model, target)?;
    let sum: f64 = model.iter().zip(target).map(|(m, t)| (m - t).abs()).sum();
    Ok(sum / target.len() as f64)
}

/// Samples at or below this size (the smaller of the two) use the exact
/// permutation distribution of U.
pub const EXACT_MAX_SAMPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub n_a: usize,
    pub n_b: usize,
    /// U statistic of the first sample: pairs `(a, b)` with `a > b`, ties
    /// counting one half.
    pub u: f64,
    /// Tie- and continuity-corrected normal score of `u`.
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Mid-ranks (1-based) of the pooled sample, doubled so they are integers,
/// plus the tie-group sizes.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end; doubled mean = start + 1 + end.
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let (n_a, n_b) = (a.len(), b.len());
    let n = n_a + n_b;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    if ties.len() == 1 {
        return Err(Error::DegenerateTest("all observations are identical".into()));
    }

    let doubled_rank_sum: u64 = ranks[..n_a].iter().sum();
    let u = doubled_rank_sum as f64 / 2.0 - (n_a * (n_a + 1)) as f64 / 2.0;

    let (na, nb, nf) = (n_a as f64, n_b as f64, n as f64);
    let mean = na * nb / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let variance = na * nb / 12.0 * ((nf + 1.0) - tie_term);
    let deviation = ((u - mean).abs() - 0.5).max(0.0);
    let z = if variance > 0.0 {
        (u - mean).signum() * deviation / variance.sqrt()
    } else {
        0.0
    };

    let (p_value, method) = if n_a.min(n_b) <= EXACT_MAX_SAMPLE {
        (exact_two_sided(&ranks, n_a, doubled_rank_sum), PValueMethod::Exact)
    } else {
        (normal_two_sided(z), PValueMethod::Normal)
    };
    Ok(MannWhitney { n_a, n_b, u, z, p_value, method })
}

fn normal_two_sided(z: f64) -> f64 {
    let normal = Normal::standard();
    (2.0 * normal.sf(z.abs())).min(1.0)
}

/// Exact two-sided p-value: the fraction of all `C(n, n_a)` group
/// assignments whose rank sum is at least as far from its mean as the
/// observed one. Counted by dynamic programming over doubled ranks.
fn exact_two_sided(ranks: &[u64], n_a: usize, observed: u64) -> f64 {
    let max_sum: u64 = {
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable_by(|x, y| y.cmp(x));
        sorted[..n_a].iter().sum()
    };
    let width = max_sum as usize + 1;
    // counts[k][s]: subsets of size k with doubled rank sum s.
    let mut counts = vec![vec![0u128; width]; n_a + 1];
    counts[0][0] = 1;
    for &r in ranks {
        let r = r as usize;
        for k in (1..=n_a).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            let prev = &lower[k - 1];
            let cur = &mut upper[0];
            for s in (r..width).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    // Mean doubled rank sum is n_a * (n + 1); compare doubled deviations.
    let n = ranks.len() as i128;
    let centre = n_a as i128 * (n + 1);
    let observed_dev = (observed as i128 - centre).abs();
    let mut extreme = 0u128;
    let mut total = 0u128;
    for (s, &c) in counts[n_a].iter().enumerate() {
        total += c;
        if (s as i128 - centre).abs() >= observed_dev {
            extreme += c;
        }
    }
    (extreme as f64 / total as f64).min(1.0)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    Some(if sorted.len() % 2 == 0 {
        (sorted[m - 1] + sorted[m]) / 2.0
    } else {
        sorted[m]
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.005;
pub const HISTOGRAM_UPPER: f64 = 0.5;

/// Counts of `values` in bins of [`HISTOGRAM_BIN_WIDTH`] over
/// `[0, HISTOGRAM_UPPER)`. Values at or above the upper edge are returned
/// separately as overflow.
pub fn error_histogram(values: &[f64]) -> (Vec<u64>, u64) {
    let n_bins = (HISTOGRAM_UPPER / HISTOGRAM_BIN_WIDTH).round() as usize;
    let mut bins = vec![0u64; n_bins];
    let mut overflow = 0;
    for &v in values {
        let idx = (v / HISTOGRAM_BIN_WIDTH).floor();
        if idx >= 0.0 && (idx as usize) < n_bins {
            bins[idx as usize] += 1;
        } else {
            overflow += 1;
        }
    }
    (bins, overflow)
}

/// One cascade's outcome across the three models. Missing values mean the
/// fit failed; `status` carries the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub cascade_id: String,
    pub size: usize,
    pub error_sis: Option<f64>,
    pub error_seiz: Option<f64>,
    pub error_cdseiz: Option<f64>,
    pub mean_deviation_sis: Option<f64>,
    pub mean_deviation_seiz: Option<f64>,
    pub mean_deviation_cdseiz: Option<f64>,
    pub status: String,
}

impl ComparisonRow {
    pub fn error(&self, kind: ModelKind) -> Option<f64> {
        match kind {
            ModelKind::Sis => self.error_sis,
            ModelKind::Seiz => self.error_seiz,
            ModelKind::CdSeiz => self.error_cdseiz,
        }
    }

    pub fn mean_deviation(&self, kind: ModelKind) -> Option<f64> {
        match kind {
            ModelKind::Sis => self.mean_deviation_sis,
            ModelKind::Seiz => self.mean_deviation_seiz,
            ModelKind::CdSeiz => self.mean_deviation_cdseiz,
        }
    }

    pub fn failed(&self) -> bool {
        ModelKind::ALL.iter().any(|k| self.error(*k).is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub fitted: usize,
    pub failed: usize,
    pub median_error: Option<f64>,
    pub mean_error: Option<f64>,
    pub median_mean_deviation: Option<f64>,
    pub histogram_overflow: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    /// `"<a>_vs_<b>"`; `u` refers to model `a`.
    pub label: String,
    pub model_a: ModelKind,
    pub model_b: ModelKind,
    /// True for comparisons beyond the SEIZ vs CD-SEIZ headline test.
    pub extension: bool,
    /// `ok`, `insufficient sample` or `degenerate`.
    pub status: String,
    pub result: Option<MannWhitney>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<ModelSummary>,
    pub tests: Vec<PairwiseTest>,
    pub notes: Vec<String>,
}

/// Minimum per-model sample size for a pairwise test.
pub const MIN_TEST_SAMPLE: usize = 2;

impl ComparisonReport {
    /// Aggregate per-cascade rows. Rows are sorted by cascade id.
    pub fn from_rows(mut rows: Vec<ComparisonRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("comparison needs at least one row"));
        }
        rows.sort_by(|a, b| a.cascade_id.cmp(&b.cascade_id));
        let errors = |kind: ModelKind| -> Vec<f64> { rows.iter().filter_map(|r| r.error(kind)).collect() };

        let summary = ModelKind::ALL
            .iter()
            .map(|&kind| {
                let e = errors(kind);
                let md: Vec<f64> = rows.iter().filter_map(|r| r.mean_deviation(kind)).collect();
                ModelSummary {
                    model: kind,
                    fitted: e.len(),
                    failed: rows.len() - e.len(),
                    median_error: median(&e),
                    mean_error: mean(&e),
                    median_mean_deviation: median(&md),
                    histogram_overflow: error_histogram(&e).1,
                }
            })
            .collect();

        let pairs = [
            (ModelKind::Seiz, ModelKind::CdSeiz, false),
            (ModelKind::Sis, ModelKind::Seiz, true),
            (ModelKind::Sis, ModelKind::CdSeiz, true),
        ];
        let tests = pairs
            .iter()
            .map(|&(a, b, extension)| {
                let (ea, eb) = (errors(a), errors(b));
                let (status, result) = if ea.len() < MIN_TEST_SAMPLE || eb.len() < MIN_TEST_SAMPLE {
                    ("insufficient sample".to_string(), None)
                } else {
                    match mann_whitney_u(&ea, &eb) {
                        Ok(r) => ("ok".to_string(), Some(r)),
                        Err(Error::DegenerateTest(_)) => ("degenerate".to_string(), None),
                        Err(e) => return Err(e),
                    }
                };
                Ok(PairwiseTest {
                    label: format!("{a}_vs_{b}"),
                    model_a: a,
                    model_b: b,
                    extension,
                    status,
                    result,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ComparisonReport {
            rows,
            summary,
            tests,
            notes: vec![
                "Mann-Whitney p-values are two-sided; tie-corrected normal approximation with continuity correction, exact distribution when the smaller sample has at most 8 values".into(),
                "reported error is the relative L2 distance between the model's total infected curve and the observed cumulative total".into(),
            ],
        })
    }

    pub fn rows_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<ComparisonRow>> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<ComparisonRow>, _>>()
            .map_err(|e| Error::invalid(format!("bad comparison CSV: {e}")))
    }

    /// `bin_lo,bin_hi,sis,seiz,cdseiz`.
    pub fn histogram_csv(&self) -> String {
        let hist: Vec<Vec<u64>> = ModelKind::ALL
            .iter()
            .map(|&k| {
                let e: Vec<f64> = self.rows.iter().filter_map(|r| r.error(k)).collect();
                error_histogram(&e).0
            })
            .collect();
        let mut out = String::from("bin_lo,bin_hi,sis,seiz,cdseiz\n");
        for i in 0..hist[0].len() {
            let lo = i as f64 * HISTOGRAM_BIN_WIDTH;
            let hi = (i + 1) as f64 * HISTOGRAM_BIN_WIDTH;
            out.push_str(&format!("{lo:.3},{hi:.3},{},{},{}\n", hist[0][i], hist[1][i], hist[2][i]));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            cascades: usize,
            failed_rows: usize,
            summary: &'a [ModelSummary],
            tests: &'a [PairwiseTest],
            notes: &'a [String],
        }
        let s = Summary {
            cascades: self.rows.len(),
            failed_rows: self.rows.iter().filter(|r| r.failed()).count(),
            summary: &self.summary,
            tests: &self.tests,
            notes: &self.notes,
        };
        let mut text = serde_json::to_string_pretty(&s).expect("summary serializes");
        text.push('\n');
        text
    }

    pub fn test(&self, a: ModelKind, b: ModelKind) -> Option<&PairwiseTest> {
        self.tests.iter().find(|t| t.model_a == a && t.model_b == b)
    }

    pub fn model_summary(&self, kind: ModelKind) -> &ModelSummary {
        self.summary.iter().find(|s| s.model == kind).expect("all models summarized")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_error_examples() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(fit_error(&t, &t).unwrap(), 0.0);
        assert_eq!(fit_error(&[0.0; 3], &t).unwrap(), 1.0);
        let e = fit_error(&[1.0, 2.0, 4.0], &t).unwrap();
        assert!((e - 1.0 / 14f64.sqrt()).abs() < 1e-15);
        assert!(matches!(fit_error(&[1.0], &[0.0]), Err(Error::DegenerateTarget)));
        assert!(fit_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mean_deviation_examples() {
        assert_eq!(mean_deviation(&[5.0, 6.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert_eq!(mean_deviation(&[0.0, 0.0], &[2.0, 4.0]).unwrap(), 3.0);
        assert!((mean_deviation(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(mean_deviation(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn complete_separation() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.method, PValueMethod::Exact);
        // Two of the 20 splits are this extreme.
        assert!((r.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_have_no_effect() {
        let a = [0.3, 0.1, 0.7, 0.2];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u, 8.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(matches!(mann_whitney_u(&[1.0, 1.0], &[1.0]), Err(Error::DegenerateTest(_))));
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn normal_path_with_ties() {
        let a: Vec<f64> = (0..20).map(|i| (i / 2) as f64).collect();
        let b: Vec<f64> = (0..25).map(|i| (i / 2) as f64 + 3.0).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, PValueMethod::Normal);
        // Tie-corrected variance, continuity correction, by hand:
        // pooled value counts give tie groups; verified independently below.
        let mean = 20.0 * 25.0 / 2.0;
        let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        pooled.sort_by(f64::total_cmp);
        let mut tie_sum = 0.0;
        let mut i = 0;
        while i < pooled.len() {
            let j = pooled[i..].iter().take_while(|v| **v == pooled[i]).count();
            tie_sum += (j * j * j - j) as f64;
            i += j;
        }
        let n = 45.0;
        let var = 20.0 * 25.0 / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
        let u_pairs: f64 = a
            .iter()
            .map(|x| b.iter().map(|y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }).sum::<f64>())
            .sum();
        assert_eq!(r.u, u_pairs);
        let z = -((u_pairs - mean).abs() - 0.5) / var.sqrt();
        assert!((r.z - z).abs() < 1e-12);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn histogram_bins() {
        let (bins, overflow) = error_histogram(&[0.0, 0.0049, 0.005, 0.4999, 0.5, 2.0]);
        assert_eq!(bins.len(), 100);
        assert_eq!(bins[0], 2);
        assert_eq!(bins[1], 1);
        assert_eq!(bins[99], 1);
        assert_eq!(overflow, 2);
    }

    fn row(id: &str, e: [Option<f64>; 3]) -> ComparisonRow {
        ComparisonRow {
            cascade_id: id.into(),
            size: 10,
            error_sis: e[0],
            error_seiz: e[1],
            error_cdseiz: e[2],
            mean_deviation_sis: e[0],
            mean_deviation_seiz: e[1],
            mean_deviation_cdseiz: e[2],
            status: "ok".into(),
        }
    }

    #[test]
    fn single_row_report_has_insufficient_tests() {
        let report = ComparisonReport::from_rows(vec![row("a", [Some(0.1), Some(0.05), Some(0.01)])]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.tests.iter().all(|t| t.status == "insufficient sample" && t.result.is_none()));
        assert_eq!(report.tests.iter().filter(|t| !t.extension).count(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("b", [Some(0.1), None, Some(0.25)]), row("a", [Some(0.3), Some(0.2), Some(0.1)])];
        let report = ComparisonReport::from_rows(rows).unwrap();
        let csv = report.rows_csv().unwrap();
        assert!(csv.starts_with("cascade_id,size,error_sis"));
        assert_eq!(ComparisonReport::rows_from_csv(&csv).unwrap(), report.rows);
        assert_eq!(report.model_summary(ModelKind::Seiz).failed, 1);
        assert_eq!(report.histogram_csv().lines().count(), 101);
    }

    proptest! {
        #[test]
        fn fit_error_scale_covariant(
            pairs in proptest::collection::vec((0.0..100.0f64, 0.1..100.0f64), 1..30),
            c in 0.01..1000.0f64,
        ) {
            let (m, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ms: Vec<f64> = m.iter().map(|x| x * c).collect();
            let ts: Vec<f64> = t.iter().map(|x| x * c).collect();
            let a = fit_error(&m, &t).unwrap();
            let b = fit_error(&ms, &ts).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn swapping_samples_reflects_u(
            a in proptest::collection::vec(0u8..12, 1..30),
            b in proptest::collection::vec(0u8..12, 1..30),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            if let (Ok(x), Ok(y)) = (mann_whitney_u(&a, &b), mann_whitney_u(&b, &a)) {
                prop_assert_eq!(x.u, (a.len() * b.len()) as f64 - y.u);
                prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x.p_value));
            }
        }

        #[test]
        fn normal_p_monotone_in_z(z1 in 0.0..8.0f64, dz in 0.0..4.0f64) {
            prop_assert!(normal_two_sided(z1 + dz) <= normal_two_sided(z1));
        }
    }
}
