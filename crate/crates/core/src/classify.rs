//! Assigning fixation sequences to condition models, plus evaluation tables.
//!
//! Three decision rules are available: highest log-likelihood, highest
//! agreement between the decoded state path and a model's reference path,
//! and smallest Euclidean distance between the decoded path and the
//! reference path once both are mapped to state-mean coordinates.
//!
//! Candidates are keyed by label in a `BTreeMap`, so every scan runs in
//! lexicographic order and ties fall to the smallest label.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hmm::{GaussianHmm, HmmError};
use crate::Point;

/// Length of the canonical reference path.
pub const REFERENCE_LEN: usize = 19;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("no candidate models")]
    NoCandidates,
    #[error("sequence inadmissible under all candidates")]
    Inadmissible,
    #[error("reference path state {state} out of range for {n_states} states")]
    BadReference { state: usize, n_states: usize },
    #[error("reference path is empty")]
    EmptyReference,
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no ROI centers")]
    NoCenters,
    #[error(transparent)]
    Hmm(#[from] HmmError),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

/// Decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "loglik")]
    Loglik,
    #[serde(rename = "agreement")]
    Agreement,
    #[serde(rename = "path-distance")]
    PathDistance,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Loglik, Rule::Agreement, Rule::PathDistance];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Loglik => "loglik",
            Rule::Agreement => "agreement",
            Rule::PathDistance => "path-distance",
        }
    }

    /// Whether larger scores win under this rule.
    pub fn maximizes(self) -> bool {
        !matches!(self, Rule::PathDistance)
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rule `{s}` (expected loglik, agreement or path-distance)"))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A candidate model together with its reference state path and the
/// polyline of state means along that path.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    model: GaussianHmm,
    reference: Vec<usize>,
    polyline: Vec<Point>,
}

impl Candidate {
    /// Candidate with the canonical reference path of length [`REFERENCE_LEN`].
    pub fn new(model: GaussianHmm) -> Result<Self> {
        Self::with_reference_len(model, REFERENCE_LEN)
    }

    /// The canonical reference path: the Viterbi decode of the state-mean
    /// sequence laid along the chain's most probable trajectory.
    pub fn with_reference_len(model: GaussianHmm, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(ClassifyError::EmptyReference);
        }
        let means = model.means();
        let template: Vec<Point> = model.most_probable_states(len).into_iter().map(|s| means[s]).collect();
        let (path, _) = model.viterbi(&template)?;
        Self::with_reference(model, path)
    }

    /// Candidate with an explicit reference path.
    pub fn with_reference(model: GaussianHmm, reference: Vec<usize>) -> Result<Self> {
        if reference.is_empty() {
            return Err(ClassifyError::EmptyReference);
        }
        let k = model.n_states();
        if let Some(&state) = reference.iter().find(|&&s| s >= k) {
            return Err(ClassifyError::BadReference { state, n_states: k });
        }
        let polyline = state_polyline(&model, &reference);
        Ok(Candidate { model, reference, polyline })
    }

    pub fn model(&self) -> &GaussianHmm {
        &self.model
    }

    pub fn reference(&self) -> &[usize] {
        &self.reference
    }

    pub fn polyline(&self) -> &[Point] {
        &self.polyline
    }
}

/// Maps a state path to the corresponding state means.
pub fn state_polyline(model: &GaussianHmm, path: &[usize]) -> Vec<Point> {
    let means = model.means();
    path.iter().map(|&s| means[s]).collect()
}

/// Scores of one sequence under every candidate and the winning label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub rule: Rule,
    /// Non-finite scores serialize as `null`.
    pub per_label_scores: BTreeMap<String, f64>,
    pub chosen: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

/// Fraction of positions on the common prefix where two state paths agree.
pub fn path_agreement(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n as f64
}

/// Euclidean distance between two polylines over their common prefix.
pub fn polyline_distance(p: &[Point], q: &[Point]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt()
}

/// Agreement between the Viterbi path of `seq` under `model` and `reference`.
pub fn viterbi_agreement(seq: &[Point], model: &GaussianHmm, reference: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(ClassifyError::EmptyReference);
    }
    let (path, _) = model.viterbi(seq)?;
    Ok(path_agreement(&path, reference))
}

/// Distance between the decoded polyline of `seq` under the candidate model
/// and the candidate's reference polyline.
pub fn path_distance(seq: &[Point], candidate: &Candidate) -> Result<f64> {
    let (path, _) = candidate.model.viterbi(seq)?;
    Ok(polyline_distance(&state_polyline(&candidate.model, &path), &candidate.polyline))
}

fn report(rule: Rule, scores: BTreeMap<String, f64>) -> Result<ClassificationReport> {
    let mut best: Option<(&String, f64)> = None;
    for (label, &s) in &scores {
        let better = match best {
            None => true,
            Some((_, b)) if rule.maximizes() => s > b,
            Some((_, b)) => s < b,
        };
        if better {
            best = Some((label, s));
        }
    }
    let (chosen, _) = best.ok_or(ClassifyError::NoCandidates)?;
    let chosen = chosen.clone();
    Ok(ClassificationReport { rule, per_label_scores: scores, chosen, truth: None })
}

fn scores<F>(candidates: &BTreeMap<String, Candidate>, f: F) -> Result<BTreeMap<String, f64>>
where
    F: Fn(&Candidate) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(ClassifyError::NoCandidates);
    }
    candidates.iter().map(|(l, c)| Ok((l.clone(), f(c)?))).collect()
}

/// Highest log-likelihood wins.
pub fn classify_loglik(seq: &[Point], candidates: &BTreeMap<String, Candidate>) -> Result<ClassificationReport> {
    let s = scores(candidates, |c| Ok(c.model.log_likelihood(seq)?))?;
    if s.values().all(|&v| v == f64::NEG_INFINITY) {
        return Err(ClassifyError::Inadmissible);
    }
    report(Rule::Loglik, s)
}

/// Highest Viterbi agreement with the candidate's reference path wins.
/// Candidates under which the sequence is inadmissible score 0.
pub fn classify_agreement(seq: &[Point], candidates: &BTreeMap<String, Candidate>) -> Result<ClassificationReport> {
    let s = scores(candidates, |c| admissible(viterbi_agreement(seq, &c.model, &c.reference)))?;
    report(Rule::Agreement, fill_inadmissible(s, 0.0)?)
}

/// Smallest path distance wins. Inadmissible candidates score `+inf`.
pub fn classify_path_distance(
    seq: &[Point],
    candidates: &BTreeMap<String, Candidate>,
) -> Result<ClassificationReport> {
    let s = scores(candidates, |c| admissible(path_distance(seq, c)))?;
    report(Rule::PathDistance, fill_inadmissible(s, f64::INFINITY)?)
}

/// Maps a missing Viterbi path to NaN so the caller can substitute its
/// rule-specific worst score.
fn admissible(r: Result<f64>) -> Result<f64> {
    match r {
        Err(ClassifyError::Hmm(HmmError::NoAdmissiblePath)) => Ok(f64::NAN),
        other => other,
    }
}

fn fill_inadmissible(mut s: BTreeMap<String, f64>, worst: f64) -> Result<BTreeMap<String, f64>> {
    if s.values().all(|v| v.is_nan()) {
        return Err(ClassifyError::Inadmissible);
    }
    s.values_mut().filter(|v| v.is_nan()).for_each(|v| *v = worst);
    Ok(s)
}

pub fn classify(rule: Rule, seq: &[Point], candidates: &BTreeMap<String, Candidate>) -> Result<ClassificationReport> {
    match rule {
        Rule::Loglik => classify_loglik(seq, candidates),
        Rule::Agreement => classify_agreement(seq, candidates),
        Rule::PathDistance => classify_path_distance(seq, candidates),
    }
}

/// Classifies many sequences in parallel; output order follows input order.
pub fn classify_batch<S: AsRef<[Point]> + Sync>(
    rule: Rule,
    sequences: &[S],
    candidates: &BTreeMap<String, Candidate>,
) -> Result<Vec<ClassificationReport>> {
    sequences.par_iter().map(|s| classify(rule, s.as_ref(), candidates)).collect()
}

/// Counts with rows indexed by true label and columns by predicted label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    /// Sorted union of true and predicted labels.
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// `None` for labels that never occur as truth.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub overall_accuracy: f64,
}

pub fn confusion<S: AsRef<str>>(predictions: &[S], truths: &[S]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(ClassifyError::LengthMismatch { predictions: predictions.len(), truths: truths.len() });
    }
    let mut labels: Vec<String> = predictions.iter().chain(truths).map(|s| s.as_ref().to_string()).collect();
    labels.sort();
    labels.dedup();
    let index = |s: &str| labels.binary_search_by(|l| l.as_str().cmp(s)).expect("label collected above");
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (p, t) in predictions.iter().zip(truths) {
        counts[index(t.as_ref())][index(p.as_ref())] += 1;
    }
    let per_class_accuracy = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[i] as f64 / total as f64)
        })
        .collect();
    let correct: u64 = (0..n).map(|i| counts[i][i]).sum();
    let overall_accuracy = if truths.is_empty() { 0.0 } else { correct as f64 / truths.len() as f64 };
    Ok(ConfusionMatrix { labels, counts, per_class_accuracy, overall_accuracy })
}

impl ConfusionMatrix {
    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// CSV with a `truth` column, one column per predicted label, then the
    /// row total and accuracy. An optional `# ` comment line comes first.
    pub fn write_csv<W: Write>(&self, mut out: W, meta: Option<&str>) -> std::io::Result<()> {
        if let Some(m) = meta {
            writeln!(out, "# {m}")?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
        let mut header = vec!["truth".to_string()];
        header.extend(self.labels.iter().cloned());
        header.extend(["total".to_string(), "accuracy".to_string()]);
        w.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend(self.counts[i].iter().map(u64::to_string));
            row.push(self.row_total(i).to_string());
            row.push(self.per_class_accuracy[i].map_or(String::new(), |a| format!("{a:.6}")));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Percentage with two decimals followed by the raw counts, e.g. `80.95% (17/21)`.
pub fn format_accuracy(correct: u64, total: u64) -> String {
    let pct = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
    format!("{pct:.2}% ({correct}/{total})")
}

/// Mean squared deviation of ROI centers from the face center, per axis.
pub fn roi_spread(centers: &[Point], face_center: Point) -> Result<(f64, f64)> {
    if centers.is_empty() {
        return Err(ClassifyError::NoCenters);
    }
    let n = centers.len() as f64;
    let sx = centers.iter().map(|c| (c.x - face_center.x).powi(2)).sum::<f64>() / n;
    let sy = centers.iter().map(|c| (c.y - face_center.y).powi(2)).sum::<f64>() / n;
    Ok((sx, sy))
}
