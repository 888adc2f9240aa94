//! Aggregation of instance confusion vectors, the scalar objectives over the
//! aggregate, and Kendall's τ-b for agreement with human rankings.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::matching::{ConfusionVector, InstanceEvaluation};
use crate::{Error, Result};

/// Component-wise sum of normalized instance vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalConfusion {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub n_instances: usize,
}

impl GlobalConfusion {
    pub fn add(&mut self, c: &ConfusionVector) {
        self.tp += c.tp();
        self.tn += c.tn();
        self.fp += c.fp();
        self.fn_ += c.fn_();
        self.n_instances += 1;
    }

    pub fn merge(mut self, other: &GlobalConfusion) -> Self {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.n_instances += other.n_instances;
        self
    }

    pub fn total(&self) -> f64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn aggregate_confusion<'a>(cs: impl IntoIterator<Item = &'a ConfusionVector>) -> GlobalConfusion {
    let mut g = GlobalConfusion::default();
    for c in cs {
        g.add(c);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "f1")]
    F1,
    #[serde(rename = "mcc")]
    Mcc,
    #[serde(rename = "rec-fpr")]
    RecallMinusFpr,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::F1, MetricKind::Mcc, MetricKind::RecallMinusFpr];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::F1 => "f1",
            MetricKind::Mcc => "mcc",
            MetricKind::RecallMinusFpr => "rec-fpr",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(MetricKind::F1),
            "mcc" => Ok(MetricKind::Mcc),
            "rec-fpr" | "recall-fpr" | "rec_fpr" => Ok(MetricKind::RecallMinusFpr),
            other => Err(Error::InvalidInput(format!("unknown metric `{other}` (expected f1, mcc or rec-fpr)"))),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Evaluates `kind` on the aggregate. Any zero denominator yields 0.
pub fn phi_apply(kind: MetricKind, g: &GlobalConfusion) -> Result<f64> {
    if g.n_instances == 0 {
        return Err(Error::EmptyAggregate);
    }
    let GlobalConfusion { tp, tn, fp, fn_, .. } = *g;
    Ok(match kind {
        MetricKind::F1 => ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        MetricKind::RecallMinusFpr => ratio(tp, tp + fn_) - ratio(fp, fp + tn),
        MetricKind::Mcc => {
            let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
            if factors.contains(&0.0) {
                0.0
            } else {
                let den = libm::sqrt(factors[0] * factors[1] * factors[2] * factors[3]);
                (tp * tn - fp * fn_) / den
            }
        }
    })
}

/// Kendall's τ-b in O(n log n) (Knight's algorithm): sort by `(x, y)`,
/// count tie groups, then count the exchanges a merge sort on `y` performs.
/// Returns 0 when either side is entirely tied.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!("kendall_tau: length mismatch {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("kendall_tau needs at least 2 observations".into()));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("kendall_tau: NaN in input".into()));
    }
    // +0.0 folds -0.0 into 0.0 so total_cmp agrees with ==.
    let mut pairs: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(&x, &y)| (x + 0.0, y + 0.0)).collect();
    let n = pairs.len() as u64;
    let n0 = n * (n - 1) / 2;

    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n1 = tie_pairs(pairs.iter().map(|p| p.0));
    let n3 = tie_pairs_by(&pairs, |a, b| a == b);

    let mut y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = y.clone();
    let swaps = merge_count(&mut y, &mut buf);
    let n2 = tie_pairs(y.iter().copied());

    let left = n0 - n1;
    let right = n0 - n2;
    if left == 0 || right == 0 {
        return Ok(0.0);
    }
    let numerator = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(numerator as f64 / libm::sqrt((u128::from(left) * u128::from(right)) as f64))
}

/// Number of tied pairs in an already-sorted run.
fn tie_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let v: Vec<f64> = sorted.collect();
    tie_pairs_by(&v, |a, b| a == b)
}

fn tie_pairs_by<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort of `v`, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// How each instance is turned into a `(judge-side, human-side)` scalar pair
/// for the τ correlation.
#[derive(Debug, Clone, Copy, Default)]
pub enum AlignmentScalars {
    /// `(−|ŷ|, −|y|)`: fewer weaknesses ranks better on both sides.
    #[default]
    WeaknessCount,
    Custom(fn(&InstanceEvaluation, &Sample) -> (f64, f64)),
}

impl AlignmentScalars {
    pub fn scalars(&self, eval: &InstanceEvaluation, sample: &Sample) -> (f64, f64) {
        match self {
            AlignmentScalars::WeaknessCount => (-(eval.predicted_len() as f64), -(sample.weaknesses.len() as f64)),
            AlignmentScalars::Custom(f) => f(eval, sample),
        }
    }
}

pub fn human_alignment_tau(evals: &[(InstanceEvaluation, Sample)], strategy: AlignmentScalars) -> Result<f64> {
    let (judge, human): (Vec<f64>, Vec<f64>) = evals.iter().map(|(e, s)| strategy.scalars(e, s)).unzip();
    kendall_tau(&judge, &human)
}
