//! Plug-in effect estimators, ground-truth metrics and seed aggregation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CovariateKind, Covariates};
use crate::error::{Error, Result};
use crate::scalar::{from_usize, Field};

/// The labeled subgroups a CATE vector is reported over.
///
/// Vector covariates give one group per dimension (multi-hot: a unit joins
/// every dimension it has active). Category covariates give one group per
/// listed value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CateGroups {
    Dimensions(Vec<String>),
    Categories(Vec<u32>),
}

impl CateGroups {
    /// Groups implied by a corpus: its schema dimensions, or every category
    /// value that occurs in it (ascending).
    pub fn from_corpus(corpus: &Corpus) -> Self {
        match corpus.schema().kind {
            CovariateKind::Vector => CateGroups::Dimensions(corpus.schema().names.clone()),
            CovariateKind::Category => {
                let values: BTreeSet<u32> = corpus
                    .units()
                    .iter()
                    .filter_map(|u| match u.covariates {
                        Covariates::Category(c) => Some(c),
                        Covariates::Vector(_) => None,
                    })
                    .collect();
                CateGroups::Categories(values.into_iter().collect())
            }
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            CateGroups::Dimensions(names) => names.clone(),
            CateGroups::Categories(vals) => vals.iter().map(|v| format!("c={v}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CateGroups::Dimensions(n) => n.len(),
            CateGroups::Categories(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row indices belonging to each group.
    pub fn members(&self, covariates: &[Covariates]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.len()];
        for (i, c) in covariates.iter().enumerate() {
            match (self, c) {
                (CateGroups::Dimensions(_), Covariates::Vector(v)) => {
                    for (d, &on) in v.iter().enumerate().take(out.len()) {
                        if on != 0 {
                            out[d].push(i);
                        }
                    }
                }
                (CateGroups::Categories(vals), Covariates::Category(x)) => {
                    if let Some(g) = vals.iter().position(|v| v == x) {
                        out[g].push(i);
                    }
                }
                _ => {}
            }
        }
        out
    }
}

/// Mean over pairs of `mu(g(W)) - mu(W)`.
pub fn plugin_ate<F: Field>(mu_source: &[F], mu_transformed: &[F]) -> Result<F> {
    if mu_source.is_empty() {
        return Err(Error::EmptyInput);
    }
    if mu_source.len() != mu_transformed.len() {
        return Err(Error::LengthMismatch {
            expected: mu_source.len(),
            found: mu_transformed.len(),
        });
    }
    let sum = mu_source
        .iter()
        .zip(mu_transformed)
        .fold(F::zero(), |acc, (&s, &t)| acc + (t - s));
    Ok(sum / from_usize::<F>(mu_source.len()))
}

/// Per-group mean of pair differences; `None` for groups without pairs.
/// `covariates[i]` belongs to pair `i` (the source unit's covariates).
pub fn plugin_cate<F: Field>(
    mu_source: &[F],
    mu_transformed: &[F],
    covariates: &[Covariates],
    groups: &CateGroups,
) -> Result<Vec<Option<F>>> {
    if mu_source.is_empty() {
        return Err(Error::EmptyInput);
    }
    for len in [mu_transformed.len(), covariates.len()] {
        if len != mu_source.len() {
            return Err(Error::LengthMismatch {
                expected: mu_source.len(),
                found: len,
            });
        }
    }
    Ok(groups
        .members(covariates)
        .iter()
        .map(|idx| {
            if idx.is_empty() {
                return None;
            }
            let s = idx
                .iter()
                .fold(F::zero(), |acc, &i| acc + (mu_transformed[i] - mu_source[i]));
            Some(s / from_usize::<F>(idx.len()))
        })
        .collect())
}

pub fn delta_ate<F: Field>(ate_hat: F, ate_true: F) -> F {
    (ate_hat - ate_true).abs()
}

/// Mean squared difference over entries defined in both vectors.
pub fn mse_cate<F: Field>(cate_hat: &[Option<F>], cate_true: &[Option<F>]) -> Result<F> {
    if cate_hat.len() != cate_true.len() {
        return Err(Error::LengthMismatch {
            expected: cate_true.len(),
            found: cate_hat.len(),
        });
    }
    let (sum, n) = cate_hat
        .iter()
        .zip(cate_true)
        .filter_map(|(a, b)| Some((*a)? - (*b)?))
        .fold((F::zero(), 0usize), |(s, n), d| (s + d * d, n + 1));
    if n == 0 {
        return Err(Error::NoDefinedEntries);
    }
    Ok(sum / from_usize::<F>(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(MeanStd { mean, std, n })
    }
}

/// Population-level truth an estimate is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub ate: f64,
    pub cate: Vec<Option<f64>>,
}

/// Estimates from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEstimate {
    pub seed: u64,
    pub ate_hat: f64,
    pub cate_hat: Vec<Option<f64>>,
    pub ground_truth: Option<TruthSummary>,
    pub delta_ate: Option<f64>,
    pub mse_cate: Option<f64>,
}

impl SeedEstimate {
    /// Scores the estimates against `truth` when given.
    pub fn new(
        seed: u64,
        ate_hat: f64,
        cate_hat: Vec<Option<f64>>,
        truth: Option<TruthSummary>,
    ) -> Result<Self> {
        let (delta, mse) = match &truth {
            Some(t) => {
                let mse = match mse_cate(&cate_hat, &t.cate) {
                    Ok(v) => Some(v),
                    Err(Error::NoDefinedEntries) => None,
                    Err(e) => return Err(e),
                };
                (Some(delta_ate(ate_hat, t.ate)), mse)
            }
            None => (None, None),
        };
        Ok(SeedEstimate {
            seed,
            ate_hat,
            cate_hat,
            ground_truth: truth,
            delta_ate: delta,
            mse_cate: mse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ate_hat: MeanStd,
    pub delta_ate: Option<MeanStd>,
    pub mse_cate: Option<MeanStd>,
    pub cate_hat: Vec<Option<MeanStd>>,
}

/// Estimates of one method across seeds. Top-level scalar fields hold the
/// seed means; `aggregate` adds standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub method: String,
    pub labels: Vec<String>,
    pub ate_hat: f64,
    pub cate_hat: Vec<Option<f64>>,
    pub ground_truth: Option<TruthSummary>,
    pub delta_ate: Option<f64>,
    pub mse_cate: Option<f64>,
    pub aggregate: Aggregate,
    pub per_seed: Vec<SeedEstimate>,
}

impl EffectReport {
    /// Report holding a single seed.
    pub fn single(method: impl Into<String>, labels: Vec<String>, est: SeedEstimate) -> Self {
        summarize(method.into(), labels, vec![est])
    }
}

fn summarize(method: String, labels: Vec<String>, per_seed: Vec<SeedEstimate>) -> EffectReport {
    let collect = |f: &dyn Fn(&SeedEstimate) -> Option<f64>| -> Vec<f64> {
        per_seed.iter().filter_map(f).collect()
    };
    let ate_hat = MeanStd::of(&collect(&|s| Some(s.ate_hat))).expect("at least one seed");
    let delta = MeanStd::of(&collect(&|s| s.delta_ate));
    let mse = MeanStd::of(&collect(&|s| s.mse_cate));
    let cate: Vec<Option<MeanStd>> = (0..labels.len())
        .map(|d| MeanStd::of(&collect(&|s| s.cate_hat.get(d).copied().flatten())))
        .collect();
    EffectReport {
        method,
        labels,
        ate_hat: ate_hat.mean,
        cate_hat: cate.iter().map(|c| c.map(|m| m.mean)).collect(),
        ground_truth: per_seed[0].ground_truth.clone(),
        delta_ate: delta.map(|m| m.mean),
        mse_cate: mse.map(|m| m.mean),
        aggregate: Aggregate {
            ate_hat,
            delta_ate: delta,
            mse_cate: mse,
            cate_hat: cate,
        },
        per_seed,
    }
}

/// Pools per-seed reports of one method. Seeds are ordered ascending so the
/// result does not depend on input order.
pub fn aggregate_runs(reports: &[EffectReport]) -> Result<EffectReport> {
    let first = reports.first().ok_or(Error::EmptyInput)?;
    let mut seeds = Vec::new();
    for r in reports {
        if r.labels != first.labels || r.method != first.method {
            return Err(Error::LabelMismatch);
        }
        seeds.extend(r.per_seed.iter().cloned());
    }
    seeds.sort_by_key(|s| s.seed);
    Ok(summarize(first.method.clone(), first.labels.clone(), seeds))
}

fn cell(m: Option<MeanStd>) -> String {
    match m {
        Some(m) => format!("{:.4} ± {:.4}", m.mean, m.std),
        None => "n/a".to_string(),
    }
}

/// Plain-text table with one row per method: ATE, ΔATE and MSE of CATE as
/// mean ± std over seeds.
pub fn format_table(reports: &[EffectReport]) -> String {
    let header = ["Method", "ATE", "ΔATE", "MSE of CATE"];
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                cell(Some(r.aggregate.ate_hat)),
                cell(r.aggregate.delta_ate),
                cell(r.aggregate.mse_cate),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            s.push_str(c);
            s.push_str(&" ".repeat(pad));
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    writeln!(out, "{}", line(&head)).unwrap();
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    writeln!(out, "{}", "-".repeat(total)).unwrap();
    for row in &rows {
        writeln!(out, "{}", line(row)).unwrap();
    }
    if let Some(n) = reports.first().map(|r| r.per_seed.len()) {
        writeln!(out, "({n} seed(s); mean ± sample std)").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plugin_examples() {
        assert!((plugin_ate::<f64>(&[0.5, 0.5], &[0.9, 0.7]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(plugin_ate::<f64>(&[0.4, 0.2], &[0.4, 0.2]).unwrap(), 0.0);
        assert!(matches!(plugin_ate::<f64>(&[], &[]), Err(Error::EmptyInput)));
        let g = CateGroups::Categories(vec![0, 1]);
        let cov = [Covariates::Category(0), Covariates::Category(1)];
        let c = plugin_cate::<f64>(&[0.1, 0.1], &[0.3, 0.5], &cov, &g).unwrap();
        assert!((c[0].unwrap() - 0.2).abs() < 1e-12);
        assert!((c[1].unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn multi_hot_contributes_to_each_active_dim() {
        let g = CateGroups::Dimensions(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
        let cov = [
            Covariates::Vector(vec![1, 0, 1, 0]),
            Covariates::Vector(vec![0, 1, 0, 0]),
            Covariates::Vector(vec![1, 0, 0, 0]),
        ];
        let c = plugin_cate::<f64>(&[0.0; 3], &[0.2, 0.4, 0.6], &cov, &g).unwrap();
        assert!((c[0].unwrap() - 0.4).abs() < 1e-12);
        assert!((c[1].unwrap() - 0.4).abs() < 1e-12);
        assert!((c[2].unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(c[3], None);
    }

    #[test]
    fn metrics() {
        assert!((delta_ate::<f64>(0.09, 0.19) - 0.10).abs() < 1e-12);
        let m = mse_cate::<f64>(&[Some(0.1), Some(0.3)], &[Some(0.2), Some(0.1)]).unwrap();
        assert!((m - 0.025).abs() < 1e-12);
        assert!(matches!(mse_cate(&[Some(0.1)], &[Some(0.1), None]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(mse_cate(&[None], &[Some(0.1f64)]), Err(Error::NoDefinedEntries)));
        let m = mse_cate::<f64>(&[Some(0.5), None], &[Some(0.1), Some(9.0)]).unwrap();
        assert!((m - 0.16).abs() < 1e-12);
    }

    fn seed(s: u64, ate: f64, truth: f64) -> EffectReport {
        let t = TruthSummary {
            ate: truth,
            cate: vec![Some(truth)],
        };
        EffectReport::single("baseline", vec!["c=0".into()], SeedEstimate::new(s, ate, vec![Some(ate)], Some(t)).unwrap())
    }

    #[test]
    fn aggregation() {
        let one = aggregate_runs(&[seed(1, 0.2, 0.1)]).unwrap();
        assert_eq!(one.aggregate.ate_hat.std, 0.0);
        let a = aggregate_runs(&[seed(1, 0.2, 0.1), seed(2, 0.4, 0.1)]).unwrap();
        let d = a.aggregate.delta_ate.unwrap();
        assert!((d.mean - 0.2).abs() < 1e-12);
        assert!((d.std - 0.1414213562).abs() < 1e-9);
        let b = aggregate_runs(&[seed(2, 0.4, 0.1), seed(1, 0.2, 0.1)]).unwrap();
        assert_eq!(a, b);
        let mut other = seed(3, 0.1, 0.1);
        other.labels = vec!["x".into()];
        assert!(matches!(aggregate_runs(&[a, other]), Err(Error::LabelMismatch)));
    }

    #[test]
    fn table_layout() {
        let a = aggregate_runs(&[seed(1, 0.2, 0.1), seed(2, 0.4, 0.1)]).unwrap();
        let t = format_table(&[a]);
        assert!(t.starts_with("Method"));
        assert!(t.contains("ΔATE"));
        assert!(t.contains("0.2000 ± 0.1414"));
    }
}
