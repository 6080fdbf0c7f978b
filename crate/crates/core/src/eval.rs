//! Time-based splitting, ranking metrics, and paired bootstrap comparison.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::RankedList;
use crate::trace::StackTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl SplitSpec {
    /// Partitions `reports` according to the split, keeping split order.
    pub fn apply<'a>(
        &self,
        reports: &'a [StackTrace],
    ) -> (Vec<&'a StackTrace>, Vec<&'a StackTrace>, Vec<&'a StackTrace>) {
        let by_id: std::collections::BTreeMap<&str, &StackTrace> =
            reports.iter().map(|r| (r.report_id.as_str(), r)).collect();
        let pick = |ids: &[String]| ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
        (pick(&self.train), pick(&self.validation), pick(&self.test))
    }
}

/// Sorts by (timestamp, id) and cuts contiguous train / validation / test
/// blocks of `floor(n * train)`, `floor(n * validation)` and the remainder.
pub fn split_by_time(reports: &[StackTrace], train_fraction: f64, validation_fraction: f64) -> Result<SplitSpec> {
    if reports.len() < 3 {
        return Err(Error::validation(
            "reports",
            format!("need at least 3 reports to split, got {}", reports.len()),
        ));
    }
    if !(train_fraction > 0.0 && validation_fraction >= 0.0 && train_fraction + validation_fraction < 1.0) {
        return Err(Error::validation(
            "fractions",
            format!("invalid split fractions {train_fraction}/{validation_fraction}"),
        ));
    }
    let mut order: Vec<&StackTrace> = reports.iter().collect();
    order.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.report_id.cmp(&b.report_id))
    });
    let n = reports.len() as f64;
    // The epsilon keeps exact ratios such as 8139/11139 from rounding down.
    let n_train = ((n * train_fraction + 1e-9).floor() as usize).max(1);
    let n_val = (n * validation_fraction + 1e-9).floor() as usize;
    let n_val = n_val.min(reports.len() - n_train - 1);
    let ids: Vec<String> = order.iter().map(|r| r.report_id.clone()).collect();
    Ok(SplitSpec {
        train: ids[..n_train].to_vec(),
        validation: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
        train_fraction,
        validation_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Acc1,
    Acc5,
    Acc10,
    Mrr,
}

impl Metric {
    pub fn evaluate(self, ranks: &[usize]) -> f64 {
        let n = ranks.len() as f64;
        match self {
            Metric::Acc1 => ranks.iter().filter(|&&r| r <= 1).count() as f64 / n,
            Metric::Acc5 => ranks.iter().filter(|&&r| r <= 5).count() as f64 / n,
            Metric::Acc10 => ranks.iter().filter(|&&r| r <= 10).count() as f64 / n,
            Metric::Mrr => ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc1 => "acc@1",
            Metric::Acc5 => "acc@5",
            Metric::Acc10 => "acc@10",
            Metric::Mrr => "mrr",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc@1" | "acc1" => Ok(Metric::Acc1),
            "acc@5" | "acc5" => Ok(Metric::Acc5),
            "acc@10" | "acc10" => Ok(Metric::Acc10),
            "mrr" => Ok(Metric::Mrr),
            other => Err(Error::validation("metric", format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(rename = "acc@1")]
    pub acc_at_1: f64,
    #[serde(rename = "acc@5")]
    pub acc_at_5: f64,
    #[serde(rename = "acc@10")]
    pub acc_at_10: f64,
    pub mrr: f64,
    pub n_queries: usize,
    /// 1-based rank of the target per query.
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

pub fn metrics_from_ranks(ranks: &[usize]) -> Result<EvalResult> {
    if ranks.is_empty() {
        return Err(Error::validation("queries", "cannot evaluate an empty query set"));
    }
    if ranks.contains(&0) {
        return Err(Error::validation("ranks", "ranks are 1-based"));
    }
    Ok(EvalResult {
        acc_at_1: Metric::Acc1.evaluate(ranks),
        acc_at_5: Metric::Acc5.evaluate(ranks),
        acc_at_10: Metric::Acc10.evaluate(ranks),
        mrr: Metric::Mrr.evaluate(ranks),
        n_queries: ranks.len(),
        ranks: ranks.to_vec(),
    })
}

/// Metrics of ranked lists against their target developers.
pub fn compute_metrics<'a>(queries: impl IntoIterator<Item = (&'a RankedList, &'a str)>) -> Result<EvalResult> {
    let ranks = queries
        .into_iter()
        .map(|(list, target)| {
            list.rank_of(target)
                .ok_or_else(|| Error::validation("target", format!("`{target}` missing from ranking")))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics_from_ranks(&ranks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub metric: Metric,
    /// metric(A) - metric(B) on the full query set.
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
    pub significant: bool,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Paired percentile bootstrap of `metric(A) - metric(B)`. Each resample
/// draws query indices with replacement from its own generator stream.
pub fn bootstrap_diff(
    ranks_a: &[usize],
    ranks_b: &[usize],
    metric: Metric,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval> {
    if ranks_a.len() != ranks_b.len() {
        return Err(Error::shape(ranks_a.len(), ranks_b.len()));
    }
    if ranks_a.is_empty() || resamples == 0 {
        return Err(Error::validation("queries", "bootstrap needs queries and resamples"));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::validation("level", format!("{level} not in (0, 1)")));
    }
    let n = ranks_a.len();
    let mut diffs: Vec<f64> = (0..resamples)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                a.push(ranks_a[i]);
                b.push(ranks_b[i]);
            }
            metric.evaluate(&a) - metric.evaluate(&b)
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = quantile(&diffs, tail);
    let hi = quantile(&diffs, 1.0 - tail);
    Ok(BootstrapInterval {
        metric,
        point: metric.evaluate(ranks_a) - metric.evaluate(ranks_b),
        lo,
        hi,
        level,
        resamples,
        significant: !(lo <= 0.0 && 0.0 <= hi),
    })
}
