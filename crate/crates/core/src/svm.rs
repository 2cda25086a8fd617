//! Linear SVM comparator.
//!
//! L1-hinge loss with L2 regularization, solved in the dual by coordinate
//! descent over a seeded random permutation per pass. The bias is folded
//! into the weight vector by appending a constant 1 feature, so it is
//! regularized like any other weight and the dual has box constraints only:
//!
//! ```text
//! min_w  ½‖w̃‖² + C Σ max(0, 1 − yᵢ w̃·x̃ᵢ)      x̃ᵢ = [xᵢ, 1], w̃ = [w, b]
//! min_α  ½ αᵀQα − Σ αᵢ,  0 ≤ αᵢ ≤ C            Qᵢⱼ = yᵢyⱼ x̃ᵢ·x̃ⱼ
//! ```

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::PresentationLabel;

/// Lower clamp for per-feature standard deviations.
pub const STD_EPSILON: f64 = 1e-12;

pub const MODEL_MAGIC: [u8; 4] = *b"PDSV";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SvmError {
    #[error("need at least 2 rows to fit a scaler, got {0}")]
    TooFewRows(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("label {0} is not +1 or -1")]
    InvalidLabel(i8),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("invalid SVM configuration: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    BadModelFile(String),
    #[error("model file io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerStats {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self, SvmError> {
        let n = x.nrows();
        if n < 2 {
            return Err(SvmError::TooFewRows(n));
        }
        let mean: Vec<f64> = x
            .axis_iter(Axis(1))
            .map(|col| col.sum() / n as f64)
            .collect();
        let std = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                var.sqrt().max(STD_EPSILON)
            })
            .collect();
        Ok(ScalerStats { mean, std })
    }

    /// Pass-through scaler (mean 0, std 1).
    pub fn identity(dim: usize) -> Self {
        ScalerStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, SvmError> {
        if x.ncols() != self.dim() {
            return Err(SvmError::DimMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
            seed: 42,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::InvalidConfig(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SvmError::InvalidConfig(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(SvmError::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Snapshot handed to a training observer after every full pass.
#[derive(Debug)]
pub struct PassStats<'a> {
    /// 1-based pass number.
    pub pass: usize,
    /// ½αᵀQα − Σα at the end of the pass.
    pub dual_objective: f64,
    /// Largest |projected gradient| seen during the pass.
    pub max_violation: f64,
    pub alpha: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scaler: ScalerStats,
    pub config: SvmConfig,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Train on already-standardized rows. `y` holds +1 (bona fide) / −1 (attack).
/// The returned model carries an identity scaler.
pub fn train_linear_svm(
    x: ArrayView2<'_, f64>,
    y: &[i8],
    cfg: &SvmConfig,
) -> Result<TrainedModel, SvmError> {
    train_linear_svm_observed(x, y, cfg, |_| {})
}

pub fn train_linear_svm_observed<F>(
    x: ArrayView2<'_, f64>,
    y: &[i8],
    cfg: &SvmConfig,
    mut observer: F,
) -> Result<TrainedModel, SvmError>
where
    F: FnMut(&PassStats<'_>),
{
    cfg.validate()?;
    let (n, dim) = x.dim();
    if y.len() != n {
        return Err(SvmError::LengthMismatch { rows: n, labels: y.len() });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(SvmError::SingleClass);
    }

    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    // Diagonal of Q for the augmented rows; always ≥ 1.
    let q_diag: Vec<f64> = x
        .axis_iter(Axis(0))
        .map(|row| row.dot(&row) + 1.0)
        .collect();

    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut converged = false;
    let mut passes = 0;

    for pass in 1..=cfg.max_iter {
        passes = pass;
        order.shuffle(&mut rng);
        let mut max_violation: f64 = 0.0;
        for &i in &order {
            let xi = x.row(i);
            let g = yf[i] * (dot(&w, xi) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * yf[i];
                if step != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(xi.iter()) {
                        *wj += step * xj;
                    }
                    b += step;
                }
            }
        }
        let dual_objective =
            0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b) - alpha.iter().sum::<f64>();
        observer(&PassStats {
            pass,
            dual_objective,
            max_violation,
            alpha: &alpha,
        });
        if max_violation <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(TrainedModel {
        weights: w,
        bias: b,
        scaler: ScalerStats::identity(dim),
        config: *cfg,
        iterations_used: passes,
        converged,
    })
}

/// Fit the scaler on `x_raw` (or use identity when `standardize` is false),
/// then train on the transformed rows.
pub fn fit(
    x_raw: ArrayView2<'_, f64>,
    y: &[i8],
    cfg: &SvmConfig,
    standardize: bool,
) -> Result<TrainedModel, SvmError> {
    let scaler = if standardize {
        ScalerStats::fit(x_raw)?
    } else {
        ScalerStats::identity(x_raw.ncols())
    };
    let x = scaler.transform(x_raw)?;
    let mut model = train_linear_svm(x.view(), y, cfg)?;
    model.scaler = scaler;
    Ok(model)
}

fn dot(w: &[f64], x: ArrayView1<'_, f64>) -> f64 {
    w.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// w·x + b on an already-standardized row.
    pub fn decision_standardized(&self, row: ArrayView1<'_, f64>) -> f64 {
        dot(&self.weights, row) + self.bias
    }

    /// Apply the stored scaler then w·x + b.
    pub fn decision_raw(&self, row: &[f64]) -> Result<f64, SvmError> {
        if row.len() != self.dim() || self.scaler.dim() != self.dim() {
            return Err(SvmError::DimMismatch {
                expected: self.dim(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.scaler.mean)
            .zip(&self.scaler.std)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| w * (v - m) / s)
            .sum::<f64>()
            + self.bias)
    }

    /// ½(‖w‖² + b²) + C Σ hinge on standardized rows.
    pub fn primal_objective(&self, x: ArrayView2<'_, f64>, y: &[i8]) -> f64 {
        let reg = 0.5 * (self.weights.iter().map(|v| v * v).sum::<f64>() + self.bias * self.bias);
        let loss: f64 = x
            .axis_iter(Axis(0))
            .zip(y)
            .map(|(row, &yi)| (1.0 - yi as f64 * self.decision_standardized(row)).max(0.0))
            .sum();
        reg + self.config.c * loss
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(64 + dim * 24);
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        self.weights.iter().copied().for_each(&mut put);
        put(self.bias);
        self.scaler.mean.iter().copied().for_each(&mut put);
        self.scaler.std.iter().copied().for_each(&mut put);
        put(self.config.c);
        put(self.config.tol);
        out.extend_from_slice(&(self.config.max_iter as u64).to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&(self.iterations_used as u64).to_le_bytes());
        out.push(self.converged as u8);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SvmError> {
        let bad = |m: &str| SvmError::BadModelFile(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], SvmError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(SvmError::BadModelFile(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut f64s = |n: usize| -> Result<Vec<f64>, SvmError> {
            Ok(take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let weights = f64s(dim)?;
        let bias = f64s(1)?[0];
        let mean = f64s(dim)?;
        let std = f64s(dim)?;
        let cfg = f64s(2)?;
        let mut u64s = |n: usize| -> Result<Vec<u64>, SvmError> {
            Ok(take(n * 8)?
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let ints = u64s(3)?;
        let converged = match take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(bad("converged flag")),
        };
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        if weights.iter().chain([&bias]).any(|v| !v.is_finite()) {
            return Err(bad("non-finite weights"));
        }
        Ok(TrainedModel {
            weights,
            bias,
            scaler: ScalerStats { mean, std },
            config: SvmConfig {
                c: cfg[0],
                tol: cfg[1],
                max_iter: ints[0] as usize,
                seed: ints[1],
            },
            iterations_used: ints[2] as usize,
            converged,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SvmError> {
        let bytes = self.to_bytes();
        crate::fsutil::write_atomic(path, |w| w.write_all(&bytes))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SvmError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub sample_id: String,
    pub label: PresentationLabel,
    pub score: f64,
}

/// Labelled decision scores. Higher means more bona fide.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

pub const SCORES_HEADER: [&str; 4] = ["sample_id", "label", "species", "score"];

impl ScoreSet {
    pub fn from_labelled<I>(items: I) -> Self
    where
        I: IntoIterator<Item = (String, PresentationLabel, f64)>,
    {
        ScoreSet {
            entries: items
                .into_iter()
                .map(|(sample_id, label, score)| ScoreEntry {
                    sample_id,
                    label,
                    score,
                })
                .collect(),
        }
    }

    /// Build from two score lists with synthetic ids; attacks are tagged
    /// with `species`.
    pub fn from_scores(
        bona_fide: &[f64],
        attacks: &[f64],
        species: crate::manifest::PaiSpecies,
    ) -> Self {
        let bf = bona_fide
            .iter()
            .enumerate()
            .map(|(i, &s)| (format!("bf{i}"), PresentationLabel::BonaFide, s));
        let at = attacks
            .iter()
            .enumerate()
            .map(|(i, &s)| (format!("pa{i}"), PresentationLabel::Attack(species), s));
        Self::from_labelled(bf.chain(at))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bona_fide_scores(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label.is_bona_fide())
            .map(|e| e.score)
            .collect()
    }

    pub fn attack_scores(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| !e.label.is_bona_fide())
            .map(|e| e.score)
            .collect()
    }

    /// CSV with header `sample_id,label,species,score`; scores use the
    /// shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(SCORES_HEADER).expect("in-memory write");
        for e in &self.entries {
            w.write_record([
                e.sample_id.as_str(),
                e.label.label_token(),
                e.label.species_token(),
                &e.score.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.iter().collect::<Vec<_>>() != SCORES_HEADER {
            return Err(format!(
                "scores header must be `{}`",
                SCORES_HEADER.join(",")
            ));
        }
        let mut entries = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| e.to_string())?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let label = crate::manifest::parse_label(&row[1], &row[2])
                .map_err(|e| format!("line {line}: bad label: {e:?}"))?;
            let score: f64 = row[3]
                .trim()
                .parse()
                .map_err(|_| format!("line {line}: bad score `{}`", &row[3]))?;
            entries.push(ScoreEntry {
                sample_id: row[0].to_string(),
                label,
                score,
            });
        }
        Ok(ScoreSet { entries })
    }
}

/// Score raw rows with the model's scaler and weights.
pub fn decision_scores(
    model: &TrainedModel,
    x_raw: ArrayView2<'_, f64>,
    ids: &[String],
    labels: &[PresentationLabel],
) -> Result<ScoreSet, SvmError> {
    if x_raw.ncols() != model.dim() {
        return Err(SvmError::DimMismatch {
            expected: model.dim(),
            found: x_raw.ncols(),
        });
    }
    if ids.len() != x_raw.nrows() || labels.len() != x_raw.nrows() {
        return Err(SvmError::LengthMismatch {
            rows: x_raw.nrows(),
            labels: labels.len().min(ids.len()),
        });
    }
    let x = model.scaler.transform(x_raw)?;
    Ok(ScoreSet {
        entries: x
            .axis_iter(Axis(0))
            .zip(ids)
            .zip(labels)
            .map(|((row, id), &label)| ScoreEntry {
                sample_id: id.clone(),
                label,
                score: model.decision_standardized(row),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn scaler_two_rows() {
        let s = ScalerStats::fit(array![[0.0], [2.0]].view()).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn scaler_identity_like() {
        let s = ScalerStats::fit(array![[1.0, 0.0], [0.0, 1.0]].view()).unwrap();
        assert_eq!(s.mean, vec![0.5, 0.5]);
        assert_eq!(s.std, vec![0.5, 0.5]);
    }

    #[test]
    fn scaler_constant_column_clamped() {
        let s = ScalerStats::fit(array![[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]].view()).unwrap();
        assert_eq!(s.std[0], STD_EPSILON);
        let t = s.transform(array![[3.0, 2.0]].view()).unwrap();
        assert_eq!(t[[0, 0]], 0.0);
    }

    #[test]
    fn scaler_needs_two_rows() {
        assert!(matches!(
            ScalerStats::fit(array![[1.0]].view()),
            Err(SvmError::TooFewRows(1))
        ));
    }

    fn one_d() -> (Array2<f64>, Vec<i8>) {
        (array![[1.0], [-1.0]], vec![1, -1])
    }

    #[test]
    fn one_d_max_margin() {
        let (x, y) = one_d();
        let cfg = SvmConfig {
            c: 10.0,
            ..SvmConfig::default()
        };
        let m = train_linear_svm(x.view(), &y, &cfg).unwrap();
        assert!(m.converged);
        assert_abs_diff_eq!(m.weights[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.bias, 0.0, epsilon = 1e-6);
        // bona fide support vector sits on the margin
        assert_abs_diff_eq!(m.decision_raw(&[1.0]).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn score_at_scaler_mean_is_bias() {
        let x = array![[1.0, 5.0], [2.0, 7.0], [-1.0, 4.0], [-3.0, 6.0]];
        let y = [1, 1, -1, -1];
        let m = fit(x.view(), &y, &SvmConfig::default(), true).unwrap();
        let at_mean = m.decision_raw(&m.scaler.mean.clone()).unwrap();
        assert_eq!(at_mean, m.bias);
    }

    #[test]
    fn single_class_and_dims() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            train_linear_svm(x.view(), &[1, 1], &SvmConfig::default()),
            Err(SvmError::SingleClass)
        ));
        assert!(matches!(
            train_linear_svm(x.view(), &[1], &SvmConfig::default()),
            Err(SvmError::LengthMismatch { .. })
        ));
        let (x, y) = one_d();
        let m = train_linear_svm(x.view(), &y, &SvmConfig::default()).unwrap();
        assert!(matches!(
            m.decision_raw(&[1.0, 2.0]),
            Err(SvmError::DimMismatch { .. })
        ));
        let err = decision_scores(
            &m,
            array![[1.0, 2.0]].view(),
            &["a".into()],
            &[PresentationLabel::BonaFide],
        );
        assert!(matches!(err, Err(SvmError::DimMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        for cfg in [
            SvmConfig { c: 0.0, ..Default::default() },
            SvmConfig { tol: -1.0, ..Default::default() },
            SvmConfig { max_iter: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(SvmError::InvalidConfig(_))));
        }
    }

    #[test]
    fn max_iter_reports_not_converged() {
        let x = array![[0.0], [0.1], [0.2], [0.05]];
        let y = [1, -1, 1, -1];
        let cfg = SvmConfig {
            c: 100.0,
            tol: 1e-12,
            max_iter: 2,
            seed: 1,
        };
        let m = train_linear_svm(x.view(), &y, &cfg).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations_used, 2);
    }

    #[test]
    fn model_bytes_round_trip() {
        let x = array![[1.0, 5.0], [2.0, 7.0], [-1.0, 4.0], [-3.0, 6.0]];
        let m = fit(x.view(), &[1, 1, -1, -1], &SvmConfig::default(), true).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"PDSV");
        assert_eq!(TrainedModel::from_bytes(&bytes).unwrap(), m);
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn scores_csv_round_trip() {
        let s = ScoreSet::from_scores(
            &[0.1, 1e-300, -2.5],
            &[f64::MIN_POSITIVE, 3.0],
            crate::manifest::PaiSpecies::PhotoPaper,
        );
        assert_eq!(ScoreSet::from_csv(&s.to_csv()).unwrap(), s);
    }
}
