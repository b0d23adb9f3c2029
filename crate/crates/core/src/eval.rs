//! Link-sign predictions on hidden edges and the reported metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HiddenSet, NodeId, Sign, SignedGraph};
use crate::gsn::pair_distance;
use crate::matrix::Matrix;

/// Probability that an edge of latent length `dist` is positive:
/// `1 / (1 + exp(dist - mu))`.
#[inline]
pub fn predict_prob(dist: f64, mu: f64) -> f64 {
    1.0 / (1.0 + (dist - mu).exp())
}

/// Logistic edge classifier `p(+ | d) = 1 / (1 + exp(-(intercept + slope d)))`.
///
/// The fixed-threshold rule is `intercept = mu`, `slope = -1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeClassifier {
    pub intercept: f64,
    pub slope: f64,
}

impl EdgeClassifier {
    pub fn threshold(mu: f64) -> Self {
        Self { intercept: mu, slope: -1.0 }
    }

    pub fn prob(&self, dist: f64) -> f64 {
        if self.slope == -1.0 {
            return predict_prob(dist, self.intercept);
        }
        1.0 / (1.0 + (-(self.intercept + self.slope * dist)).exp())
    }

    /// Maximum-likelihood fit by Newton's method. A small ridge penalty keeps
    /// the fit finite on separable data.
    pub fn fit(dists: &[f64], labels: &[Sign]) -> Result<Self> {
        if dists.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: dists.len(), actual: labels.len() });
        }
        let n_pos = labels.iter().filter(|s| s.is_positive()).count();
        if n_pos == 0 || n_pos == labels.len() {
            return Err(Error::Evaluation("calibration needs both edge signs".into()));
        }
        const RIDGE: f64 = 1e-6;
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let (mut ga, mut gb) = (-RIDGE * a, -RIDGE * b);
            let (mut haa, mut hab, mut hbb) = (RIDGE, 0.0, RIDGE);
            for (&d, s) in dists.iter().zip(labels) {
                let p = 1.0 / (1.0 + (-(a + b * d)).exp());
                let y = if s.is_positive() { 1.0 } else { 0.0 };
                let w = p * (1.0 - p);
                ga += y - p;
                gb += (y - p) * d;
                haa += w;
                hab += w * d;
                hbb += w * d * d;
            }
            let det = haa * hbb - hab * hab;
            if !(det.abs() > 0.0) {
                break;
            }
            let da = (hbb * ga - hab * gb) / det;
            let db = (haa * gb - hab * ga) / det;
            a += da;
            b += db;
            if da.abs() + db.abs() < 1e-12 {
                break;
            }
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Evaluation("calibration did not converge".into()));
        }
        Ok(Self { intercept: a, slope: b })
    }

    /// Fit on the visible (observed) edges of `graph` at embedding `x`.
    pub fn fit_visible(graph: &SignedGraph, x: &Matrix) -> Result<Self> {
        let (dists, labels): (Vec<f64>, Vec<Sign>) = graph
            .edges()
            .iter()
            .filter_map(|e| e.observed.map(|s| (pair_distance(x.row(e.u.index()), x.row(e.v.index())), s)))
            .unzip();
        Self::fit(&dists, &labels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub edge: usize,
    pub u: NodeId,
    pub v: NodeId,
    pub true_sign: Sign,
    pub dist: f64,
    pub prob: f64,
    pub pred: Sign,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn truths(&self) -> Vec<Sign> {
        self.predictions.iter().map(|p| p.true_sign).collect()
    }

    pub fn preds(&self) -> Vec<Sign> {
        self.predictions.iter().map(|p| p.pred).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.prob).collect()
    }
}

/// `prob >= 0.5` predicts positive, so a tie goes to the positive class.
pub fn sign_of_prob(prob: f64) -> Sign {
    if prob >= 0.5 {
        Sign::Positive
    } else {
        Sign::Negative
    }
}

pub fn predict(
    graph: &SignedGraph,
    hidden: &HiddenSet,
    x: &Matrix,
    classifier: &EdgeClassifier,
) -> Result<PredictionSet> {
    if hidden.is_empty() {
        return Err(Error::Evaluation("hidden edge set is empty".into()));
    }
    if x.rows() != graph.n_nodes() {
        return Err(Error::DimensionMismatch { expected: graph.n_nodes(), actual: x.rows() });
    }
    let predictions = hidden
        .indices()
        .iter()
        .map(|&idx| {
            let e = graph.edge(idx);
            let dist = pair_distance(x.row(e.u.index()), x.row(e.v.index()));
            let prob = classifier.prob(dist);
            Prediction { edge: idx, u: e.u, v: e.v, true_sign: e.true_sign, dist, prob, pred: sign_of_prob(prob) }
        })
        .collect();
    Ok(PredictionSet { predictions })
}

/// Confusion counts with `+1` as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_labels(truths: &[Sign], preds: &[Sign]) -> Self {
        let mut c = Self::default();
        for (t, p) in truths.iter().zip(preds) {
            match (t.is_positive(), p.is_positive()) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
    pub weighted: f64,
    pub binary: f64,
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

impl F1Scores {
    pub fn from_confusion(c: &Confusion) -> Self {
        let pos = f1(c.tp, c.fp, c.fn_);
        let neg = f1(c.tn, c.fn_, c.fp);
        let n = c.total() as f64;
        let (sup_pos, sup_neg) = ((c.tp + c.fn_) as f64, (c.tn + c.fp) as f64);
        // Pooled over both classes every error counts once as FP and once as
        // FN, so micro F1 reduces to accuracy.
        let micro = if n == 0.0 { 0.0 } else { (c.tp + c.tn) as f64 / n };
        Self {
            micro,
            macro_: 0.5 * (pos + neg),
            weighted: if n == 0.0 { 0.0 } else { (sup_pos * pos + sup_neg * neg) / n },
            binary: pos,
        }
    }
}

pub fn f1_scores(truths: &[Sign], preds: &[Sign]) -> Result<F1Scores> {
    if truths.len() != preds.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), actual: preds.len() });
    }
    if truths.is_empty() {
        return Err(Error::Evaluation("no labels to score".into()));
    }
    Ok(F1Scores::from_confusion(&Confusion::from_labels(truths, preds)))
}

/// Mann-Whitney estimate of ROC AUC with midranks for tied scores.
pub fn auc(scores: &[f64], truths: &[Sign]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), actual: scores.len() });
    }
    let n_pos = truths.iter().filter(|s| s.is_positive()).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation("AUC needs both classes among the truths".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks are 1-based; the tie group covers ranks start+1 ..= end.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| truths[i].is_positive()).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        start = end;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

pub fn auc_p(set: &PredictionSet) -> Result<f64> {
    auc(&set.probs(), &set.truths())
}

pub fn auc_l(set: &PredictionSet) -> Result<f64> {
    let scores: Vec<f64> = set.predictions.iter().map(|p| if p.pred.is_positive() { 1.0 } else { 0.0 }).collect();
    auc(&scores, &set.truths())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub f1_binary: f64,
    pub auc_p: f64,
    pub auc_l: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub n_hidden: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Display names, in table order.
pub const METRIC_NAMES: [&str; 6] = ["F1-MI", "F1-MA", "F1-WT", "F1-BI", "AUC-P", "AUC-L"];

impl MetricsReport {
    pub fn from_predictions(set: &PredictionSet) -> Result<Self> {
        let truths = set.truths();
        let f = f1_scores(&truths, &set.preds())?;
        let c = Confusion::from_labels(&truths, &set.preds());
        Ok(Self {
            f1_micro: f.micro,
            f1_macro: f.macro_,
            f1_weighted: f.weighted,
            f1_binary: f.binary,
            auc_p: auc_p(set)?,
            auc_l: auc_l(set)?,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            n_hidden: set.len(),
            seed: 0,
            config_hash: String::new(),
        })
    }

    pub fn metrics(&self) -> [f64; 6] {
        [self.f1_micro, self.f1_macro, self.f1_weighted, self.f1_binary, self.auc_p, self.auc_l]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn evaluate(
    graph: &SignedGraph,
    hidden: &HiddenSet,
    x: &Matrix,
    classifier: &EdgeClassifier,
) -> Result<MetricsReport> {
    MetricsReport::from_predictions(&predict(graph, hidden, x, classifier)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub f1_micro: Summary,
    pub f1_macro: Summary,
    pub f1_weighted: Summary,
    pub f1_binary: Summary,
    pub auc_p: Summary,
    pub auc_l: Summary,
}

impl AggregateReport {
    pub fn new(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Evaluation("no reports to aggregate".into()));
        }
        let col = |i: usize| Summary::of(&reports.iter().map(|r| r.metrics()[i]).collect::<Vec<_>>());
        Ok(Self {
            n_runs: reports.len(),
            seeds: reports.iter().map(|r| r.seed).collect(),
            f1_micro: col(0),
            f1_macro: col(1),
            f1_weighted: col(2),
            f1_binary: col(3),
            auc_p: col(4),
            auc_l: col(5),
        })
    }

    pub fn summaries(&self) -> [Summary; 6] {
        [self.f1_micro, self.f1_macro, self.f1_weighted, self.f1_binary, self.auc_p, self.auc_l]
    }
}

/// Aligned table of per-seed reports (values in percent), followed by a
/// mean±std row when more than one report is given.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "seed");
    for name in METRIC_NAMES {
        let _ = write!(out, "{name:>16}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<10}", r.seed);
        for v in r.metrics() {
            let _ = write!(out, "{:>16.2}", 100.0 * v);
        }
        out.push('\n');
    }
    if reports.len() > 1 {
        if let Ok(agg) = AggregateReport::new(reports) {
            let _ = write!(out, "{:<10}", "mean±std");
            for s in agg.summaries() {
                let cell = format!("{:.2}±{:.2}", 100.0 * s.mean, 100.0 * s.std);
                let _ = write!(out, "{cell:>16}");
            }
            out.push('\n');
        }
    }
    out
}
