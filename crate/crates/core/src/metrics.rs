//! Presentation attack detection error rates.
//!
//! Scores are bona-fide likelihoods; a sample is accepted as bona-fide when
//! its score is strictly above the decision threshold.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub score: f64,
    pub label: Label,
    pub domain: Domain,
}

impl ScoreRecord {
    pub fn new(score: f64, label: Label, domain: Domain) -> Self {
        Self { score, label, domain }
    }
}

pub fn write_scores(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Scores split by class, both sorted ascending.
struct Split {
    attack: Vec<f64>,
    bona: Vec<f64>,
}

fn split(records: &[ScoreRecord]) -> Result<Split> {
    let mut attack = Vec::new();
    let mut bona = Vec::new();
    for r in records {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::Domain(format!("score {} outside [0, 1]", r.score)));
        }
        match r.label {
            Label::Attack => attack.push(r.score),
            Label::BonaFide => bona.push(r.score),
        }
    }
    if attack.is_empty() || bona.is_empty() {
        return Err(Error::Domain("metrics need both attack and bona-fide samples".into()));
    }
    attack.sort_by(f64::total_cmp);
    bona.sort_by(f64::total_cmp);
    Ok(Split { attack, bona })
}

fn count_above(sorted: &[f64], threshold: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s <= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRates {
    pub apcer: f64,
    pub bpcer: f64,
}

impl ErrorRates {
    pub fn hter(&self) -> f64 {
        (self.apcer + self.bpcer) / 2.0
    }
}

impl Split {
    fn rates(&self, threshold: f64) -> ErrorRates {
        let accepted_attacks = count_above(&self.attack, threshold);
        let rejected_bona = self.bona.len() - count_above(&self.bona, threshold);
        ErrorRates {
            apcer: accepted_attacks as f64 / self.attack.len() as f64,
            bpcer: rejected_bona as f64 / self.bona.len() as f64,
        }
    }
}

/// Attacks accepted / attacks and bona-fides rejected / bona-fides.
pub fn apcer_bpcer(records: &[ScoreRecord], threshold: f64) -> Result<ErrorRates> {
    Ok(split(records)?.rates(threshold))
}

pub fn hter(records: &[ScoreRecord], threshold: f64) -> Result<f64> {
    Ok(apcer_bpcer(records, threshold)?.hter())
}

/// ROC operating points `(false accept rate, true accept rate)` from the
/// strictest threshold to the most lenient, one point per distinct score.
pub fn roc_curve(records: &[ScoreRecord]) -> Result<Vec<(f64, f64)>> {
    let s = split(records)?;
    let mut thresholds: Vec<f64> = s.attack.iter().chain(&s.bona).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        // accept score >= t
        let fa = s.attack.len() - s.attack.partition_point(|&v| v < t);
        let ta = s.bona.len() - s.bona.partition_point(|&v| v < t);
        points.push((fa as f64 / s.attack.len() as f64, ta as f64 / s.bona.len() as f64));
    }
    Ok(points)
}

/// Area under the ROC curve (trapezoidal); equals the probability that a
/// random bona-fide outscores a random attack with ties counted as half.
pub fn auc(records: &[ScoreRecord]) -> Result<f64> {
    let points = roc_curve(records)?;
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EerPoint {
    pub threshold: f64,
    pub rates: ErrorRates,
    /// HTER at the selected threshold.
    pub eer: f64,
}

/// Candidate thresholds: observed scores plus `{0, 1}`, ascending.
pub fn candidate_thresholds(records: &[ScoreRecord]) -> Vec<f64> {
    let mut out: Vec<f64> = records.iter().map(|r| r.score).chain([0.0, 1.0]).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Threshold minimizing `|APCER − BPCER|` over the candidates; ties go to the
/// lower threshold.
pub fn eer_threshold(records: &[ScoreRecord]) -> Result<EerPoint> {
    let s = split(records)?;
    let mut best: Option<(f64, f64, ErrorRates)> = None;
    for t in candidate_thresholds(records) {
        let rates = s.rates(t);
        let gap = (rates.apcer - rates.bpcer).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, t, rates));
        }
    }
    let (_, threshold, rates) = best.expect("candidates include 0 and 1");
    Ok(EerPoint {
        threshold,
        rates,
        eer: rates.hter(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Equal-error threshold chosen on the evaluated scores.
    #[default]
    Eer,
    Fixed(f64),
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::Eer => f.write_str("eer"),
            ThresholdPolicy::Fixed(t) => write!(f, "fixed({t})"),
        }
    }
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    /// `eer`, `fixed` (0.5) or `fixed:<t>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eer" => Ok(ThresholdPolicy::Eer),
            "fixed" => Ok(ThresholdPolicy::Fixed(0.5)),
            other => other
                .strip_prefix("fixed:")
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|t| (0.0..=1.0).contains(t))
                .map(ThresholdPolicy::Fixed)
                .ok_or_else(|| Error::config(format!("unknown threshold policy {other:?}"))),
        }
    }
}

/// One results-table row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub policy: String,
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub hter_pct: f64,
    pub auc_pct: f64,
    pub attacks: usize,
    pub bona_fides: usize,
}

impl MetricReport {
    /// `HTER% / AUC%` with two decimals.
    pub fn row(&self) -> String {
        format!("{:.2} / {:.2}", self.hter_pct, self.auc_pct)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "HTER(%) / AUC(%) = {} [threshold {} = {:.4}; APCER {:.4}, BPCER {:.4}; {} attack, {} bona-fide]",
            self.row(),
            self.policy,
            self.threshold,
            self.apcer,
            self.bpcer,
            self.attacks,
            self.bona_fides
        )
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn report(records: &[ScoreRecord], policy: ThresholdPolicy) -> Result<MetricReport> {
    let s = split(records)?;
    let threshold = match policy {
        ThresholdPolicy::Eer => eer_threshold(records)?.threshold,
        ThresholdPolicy::Fixed(t) => t,
    };
    let rates = s.rates(threshold);
    Ok(MetricReport {
        policy: policy.to_string(),
        threshold,
        apcer: rates.apcer,
        bpcer: rates.bpcer,
        hter_pct: round2(rates.hter() * 100.0),
        auc_pct: round2(auc(records)? * 100.0),
        attacks: s.attack.len(),
        bona_fides: s.bona.len(),
    })
}

/// A published results row kept for comparison with local runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRow {
    pub table: String,
    pub method: String,
    pub backbone: String,
    pub protocol: String,
    pub hter_pct: f64,
    pub auc_pct: Option<f64>,
}

pub fn load_reference_rows(path: &Path) -> Result<Vec<ReferenceRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
