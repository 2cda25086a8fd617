//! ISO/IEC 30107-3 PAD metrics.
//!
//! Conventions used throughout:
//!
//! * a presentation is classified bona fide iff `score >= threshold`;
//! * APCER = % of attacks classified bona fide, BPCER = % of bona fide
//!   classified as attacks;
//! * the threshold grid is the midpoints between consecutive distinct scores
//!   plus one sentinel below the minimum and one above the maximum, which
//!   visits every achievable (APCER, BPCER) pair exactly once;
//! * D-EER is the mean of APCER and BPCER at the grid point minimizing
//!   |APCER − BPCER|, lowest threshold on ties (no interpolation).

use serde::{Deserialize, Serialize};

use crate::svm::ScoreSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("score set has no bona fide samples")]
    NoBonaFide,
    #[error("score set has no attack samples")]
    NoAttacks,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("APCER target must be in (0, 100), got {0}")]
    BadTarget(f64),
    #[error("cannot average an empty list")]
    EmptyAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

/// Operating points by ascending threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<OperatingPoint>,
}

pub const DET_HEADER: &str = "threshold,apcer,bpcer";

impl DetCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(DET_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.apcer, p.bpcer));
        }
        out
    }

    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| {
            w[0].threshold < w[1].threshold && w[0].apcer >= w[1].apcer && w[0].bpcer <= w[1].bpcer
        })
    }
}

/// Integer count as a percentage of `total`.
#[inline]
pub fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Sorted bona fide and attack scores, validated non-empty and finite.
struct SortedScores {
    bona_fide: Vec<f64>,
    attacks: Vec<f64>,
}

impl SortedScores {
    fn new(scores: &ScoreSet) -> Result<Self, MetricsError> {
        let mut bona_fide = scores.bona_fide_scores();
        let mut attacks = scores.attack_scores();
        if bona_fide.is_empty() {
            return Err(MetricsError::NoBonaFide);
        }
        if attacks.is_empty() {
            return Err(MetricsError::NoAttacks);
        }
        if bona_fide.iter().chain(&attacks).any(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore);
        }
        bona_fide.sort_by(f64::total_cmp);
        attacks.sort_by(f64::total_cmp);
        Ok(SortedScores { bona_fide, attacks })
    }
}

pub fn apcer_bpcer(scores: &ScoreSet, threshold: f64) -> Result<(f64, f64), MetricsError> {
    let s = SortedScores::new(scores)?;
    // number of sorted values strictly below the threshold
    let below = |v: &[f64]| v.partition_point(|&x| x < threshold);
    let attacks_accepted = s.attacks.len() - below(&s.attacks);
    let bona_fide_rejected = below(&s.bona_fide);
    Ok((
        percent(attacks_accepted, s.attacks.len()),
        percent(bona_fide_rejected, s.bona_fide.len()),
    ))
}

/// A threshold strictly between `lo` and `hi` (`lo < hi`), or `hi` itself
/// when the two are adjacent floats; either classifies `hi` as accepted and
/// `lo` as rejected.
fn between(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid.is_finite() {
        mid
    } else {
        hi
    }
}

fn sentinel_below(min: f64) -> f64 {
    let t = min - 1.0;
    if t < min {
        t
    } else {
        f64::NEG_INFINITY
    }
}

fn sentinel_above(max: f64) -> f64 {
    let t = max + 1.0;
    if t > max {
        t
    } else {
        f64::INFINITY
    }
}

pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve, MetricsError> {
    let s = SortedScores::new(scores)?;
    let n_bf = s.bona_fide.len();
    let n_pa = s.attacks.len();

    // Merge both classes; walk distinct values from low to high. Before the
    // first value every sample is accepted.
    let mut merged: Vec<(f64, bool)> = s
        .bona_fide
        .iter()
        .map(|&v| (v, true))
        .chain(s.attacks.iter().map(|&v| (v, false)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::with_capacity(merged.len() + 1);
    let mut bf_rejected = 0usize;
    let mut pa_rejected = 0usize;
    points.push(OperatingPoint {
        threshold: sentinel_below(merged[0].0),
        apcer: 100.0,
        bpcer: 0.0,
    });
    let mut i = 0;
    while i < merged.len() {
        let value = merged[i].0;
        while i < merged.len() && merged[i].0 == value {
            if merged[i].1 {
                bf_rejected += 1;
            } else {
                pa_rejected += 1;
            }
            i += 1;
        }
        let threshold = match merged.get(i) {
            Some(&(next, _)) => between(value, next),
            None => sentinel_above(value),
        };
        points.push(OperatingPoint {
            threshold,
            apcer: percent(n_pa - pa_rejected, n_pa),
            bpcer: percent(bf_rejected, n_bf),
        });
    }
    Ok(DetCurve { points })
}

/// Index of the D-EER point: minimal |APCER − BPCER|, first (lowest
/// threshold) on ties.
fn eer_index(curve: &DetCurve) -> usize {
    let mut best = 0;
    let mut best_gap = f64::INFINITY;
    for (i, p) in curve.points.iter().enumerate() {
        let gap = (p.apcer - p.bpcer).abs();
        if gap < best_gap {
            best_gap = gap;
            best = i;
        }
    }
    best
}

/// (D-EER %, threshold).
pub fn d_eer(scores: &ScoreSet) -> Result<(f64, f64), MetricsError> {
    let curve = det_curve(scores)?;
    Ok(d_eer_from_curve(&curve))
}

pub fn d_eer_from_curve(curve: &DetCurve) -> (f64, f64) {
    let p = curve.points[eer_index(curve)];
    ((p.apcer + p.bpcer) / 2.0, p.threshold)
}

/// Lowest BPCER with APCER ≤ `target` (percent); 100 when none qualifies.
pub fn bpcer_at_apcer(scores: &ScoreSet, target: f64) -> Result<f64, MetricsError> {
    let curve = det_curve(scores)?;
    bpcer_at_apcer_from_curve(&curve, target)
}

pub fn bpcer_at_apcer_from_curve(curve: &DetCurve, target: f64) -> Result<f64, MetricsError> {
    if !(target > 0.0 && target < 100.0) {
        return Err(MetricsError::BadTarget(target));
    }
    Ok(curve
        .points
        .iter()
        .filter(|p| p.apcer <= target)
        .map(|p| p.bpcer)
        .fold(100.0, f64::min))
}

pub fn average_deer(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyAverage);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Everything reported for one (case, backbone) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub d_eer: f64,
    pub eer_threshold: f64,
    pub bpcer_at_apcer5: f64,
    pub bpcer_at_apcer10: f64,
    pub det: DetCurve,
}

pub fn evaluate(scores: &ScoreSet) -> Result<CaseMetrics, MetricsError> {
    let det = det_curve(scores)?;
    let (d_eer, eer_threshold) = d_eer_from_curve(&det);
    Ok(CaseMetrics {
        d_eer,
        eer_threshold,
        bpcer_at_apcer5: bpcer_at_apcer_from_curve(&det, 5.0)?,
        bpcer_at_apcer10: bpcer_at_apcer_from_curve(&det, 10.0)?,
        det,
    })
}
