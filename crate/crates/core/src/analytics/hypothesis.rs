use serde::{Deserialize, Serialize};

use super::special::{chi2_upper_p, f_upper_p, t_two_sided_p};
use super::{AnalyticsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSize {
    CohensD,
    CramersV,
    EtaSquared,
}

/// Outcome of one hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df1: f64,
    /// Denominator degrees of freedom for F tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub p_value: f64,
    pub effect_size: f64,
    pub effect: EffectSize,
}

impl TestResult {
    /// Zero-variance data produced an infinite statistic.
    pub fn is_degenerate(&self) -> bool {
        self.statistic.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
}

impl GroupStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(AnalyticsError::InsufficientData("empty group".into()));
        }
        let mean = mean(values);
        let sd = if values.len() > 1 {
            (sum_sq(values, mean) / (values.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            n: values.len(),
            mean,
            sd,
        })
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sum_sq(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum()
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AnalyticsError::InvalidInput(format!("{what} contains non-finite values")))
    }
}

// t for a mean difference `diff` with standard error `se`; 0/0 is no difference.
fn t_ratio(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Two-sided pooled-variance t-test. `t` and Cohen's d are positive when `a`'s mean is
/// larger.
pub fn unpaired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "unpaired t-test needs two values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_finite(a, "group a")?;
    check_finite(b, "group b")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let df = na + nb - 2.0;
    let pooled_var = (sum_sq(a, ma) + sum_sq(b, mb)) / df;
    let sp = pooled_var.sqrt();
    let t = t_ratio(ma - mb, sp * (1.0 / na + 1.0 / nb).sqrt());
    Ok(TestResult {
        statistic: t,
        df1: df,
        df2: None,
        p_value: t_two_sided_p(t, df),
        effect_size: t_ratio(ma - mb, sp),
        effect: EffectSize::CohensD,
    })
}

/// Two-sided paired t-test on `a - b`, with d = mean(diff) / sd(diff).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(AnalyticsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "paired t-test needs two pairs, got {}",
            a.len()
        )));
    }
    check_finite(a, "first sample")?;
    check_finite(b, "second sample")?;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diff.len() as f64;
    let m = mean(&diff);
    let sd = (sum_sq(&diff, m) / (n - 1.0)).sqrt();
    let t = t_ratio(m, sd / n.sqrt());
    Ok(TestResult {
        statistic: t,
        df1: n - 1.0,
        df2: None,
        p_value: t_two_sided_p(t, n - 1.0),
        effect_size: t_ratio(m, sd),
        effect: EffectSize::CohensD,
    })
}

/// Pearson chi-square test of independence on an r×c table of counts, with Cramér's V.
pub fn chi_square_test(table: &[Vec<f64>]) -> Result<TestResult> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(AnalyticsError::DegenerateTable(format!(
            "need a rectangular table of at least 2x2, got {rows} rows"
        )));
    }
    if table.iter().flatten().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(AnalyticsError::DegenerateTable("counts must be non-negative".into()));
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let n: f64 = row_sums.iter().sum();
    if let Some(i) = row_sums.iter().position(|&s| s == 0.0) {
        return Err(AnalyticsError::DegenerateTable(format!("row {i} sums to zero")));
    }
    if let Some(j) = col_sums.iter().position(|&s| s == 0.0) {
        return Err(AnalyticsError::DegenerateTable(format!("column {j} sums to zero")));
    }
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / n;
            chi2 += (observed - expected).powi(2) / expected;
        }
    }
    let df = ((rows - 1) * (cols - 1)) as f64;
    let k = rows.min(cols) as f64 - 1.0;
    Ok(TestResult {
        statistic: chi2,
        df1: df,
        df2: None,
        p_value: chi2_upper_p(chi2, df),
        effect_size: (chi2 / (n * k)).sqrt(),
        effect: EffectSize::CramersV,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: usize,
    pub b: usize,
    /// Unadjusted pooled t-test of group `a` against group `b`.
    pub test: TestResult,
    /// Bonferroni-adjusted p-value.
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub test: TestResult,
    pub groups: Vec<GroupStats>,
    pub post_hoc: Vec<PairwiseComparison>,
}

/// η² implied by an F statistic and its degrees of freedom.
pub fn eta_squared_from_f(f: f64, df1: f64, df2: f64) -> f64 {
    f * df1 / (f * df1 + df2)
}

/// One-way ANOVA with η² and Bonferroni-corrected pairwise pooled t-tests.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "ANOVA needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some(i) = groups.iter().position(|g| g.len() < 2) {
        return Err(AnalyticsError::InsufficientData(format!(
            "ANOVA group {i} has {} values, needs 2",
            groups[i].len()
        )));
    }
    for g in groups {
        check_finite(g, "ANOVA group")?;
    }
    let k = groups.len() as f64;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let ss_between: f64 = groups
        .iter()
        .map(|g| g.len() as f64 * (mean(g) - grand).powi(2))
        .sum();
    let ss_within: f64 = groups.iter().map(|g| sum_sq(g, mean(g))).sum();
    let (df1, df2) = (k - 1.0, n - k);
    let f = t_ratio(ss_between / df1, (ss_within / df2).max(0.0));
    let ss_total = ss_between + ss_within;
    let eta2 = if ss_total > 0.0 { ss_between / ss_total } else { 0.0 };

    let m = groups.len() * (groups.len() - 1) / 2;
    let mut post_hoc = Vec::with_capacity(m);
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let test = unpaired_t_test(&groups[a], &groups[b])?;
            let p_adjusted = (test.p_value * m as f64).min(1.0);
            post_hoc.push(PairwiseComparison {
                a,
                b,
                test,
                p_adjusted,
            });
        }
    }
    Ok(AnovaResult {
        test: TestResult {
            statistic: f,
            df1,
            df2: Some(df2),
            p_value: f_upper_p(f, df1, df2),
            effect_size: eta2,
            effect: EffectSize::EtaSquared,
        },
        groups: groups.iter().map(|g| GroupStats::of(g)).collect::<Result<_>>()?,
        post_hoc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_unpaired() {
        let r = unpaired_t_test(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.effect_size - 2.0).abs() < 1e-12);
        assert!((r.statistic - 2.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.df1, 4.0);
    }

    #[test]
    fn identical_groups_are_null() {
        let g = [1.0, 5.0, 2.5, 7.0];
        let r = unpaired_t_test(&g, &g).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = paired_t_test(&g, &g).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let a = one_way_anova(&[g.to_vec(), g.to_vec(), g.to_vec()]).unwrap();
        assert_eq!((a.test.statistic, a.test.effect_size), (0.0, 0.0));
    }

    #[test]
    fn small_groups_rejected() {
        assert!(matches!(
            unpaired_t_test(&[1.0], &[1.0, 2.0]),
            Err(AnalyticsError::InsufficientData(_))
        ));
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[1.0]),
            Err(AnalyticsError::LengthMismatch(2, 1))
        ));
        assert!(one_way_anova(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn constant_shift_is_flagged_infinite() {
        let r = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.is_degenerate());
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn proportional_rows_are_independent() {
        let r = chi_square_test(&[vec![2.0, 4.0, 6.0], vec![3.0, 6.0, 9.0]]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!(r.effect_size.abs() < 1e-6);
        assert!(chi_square_test(&[vec![0.0, 0.0], vec![1.0, 2.0]]).is_err());
        assert!(chi_square_test(&[vec![0.0, 1.0], vec![0.0, 2.0]]).is_err());
    }

    #[test]
    fn post_hoc_is_bonferroni() {
        let g = vec![
            vec![1.0, 2.0, 3.0, 2.0],
            vec![4.0, 5.0, 6.0, 5.5],
            vec![1.5, 2.5, 2.0, 3.5],
        ];
        let a = one_way_anova(&g).unwrap();
        assert_eq!(a.post_hoc.len(), 3);
        for c in &a.post_hoc {
            assert!((c.p_adjusted - (3.0 * c.test.p_value).min(1.0)).abs() < 1e-15);
        }
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-50.0f64..50.0, 2..12)
    }

    proptest! {
        #[test]
        fn t_is_antisymmetric(a in sample(), b in sample()) {
            let ab = unpaired_t_test(&a, &b).unwrap();
            let ba = unpaired_t_test(&b, &a).unwrap();
            prop_assert!((ab.statistic + ba.statistic).abs() <= 1e-9 * (1.0 + ab.statistic.abs()));
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        }

        #[test]
        fn d_is_scale_invariant(a in sample(), b in sample(), s in 0.01f64..100.0) {
            let d = unpaired_t_test(&a, &b).unwrap().effect_size;
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * s).collect();
            let ds = unpaired_t_test(&sa, &sb).unwrap().effect_size;
            prop_assert!((d - ds).abs() <= 1e-9 * (1.0 + d.abs()));
        }

        #[test]
        fn eta_squared_identity(groups in proptest::collection::vec(sample(), 2..5)) {
            let r = one_way_anova(&groups).unwrap().test;
            prop_assert!((0.0..=1.0).contains(&r.effect_size));
            let (f, d1, d2) = (r.statistic, r.df1, r.df2.unwrap());
            if f.is_finite() {
                prop_assert!((r.effect_size - f * d1 / (f * d1 + d2)).abs() < 1e-12);
            }
        }

        #[test]
        fn chi_square_row_swap(t in proptest::collection::vec(proptest::collection::vec(1u32..60, 4), 2)) {
            let t: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let swapped = vec![t[1].clone(), t[0].clone()];
            let a = chi_square_test(&t).unwrap();
            let b = chi_square_test(&swapped).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
        }
    }
}
