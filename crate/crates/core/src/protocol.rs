//! Leave-one-out-PAI evaluation protocol.
//!
//! Every case trains on three attack species plus the training share of the
//! bona fide samples and is scored on the remaining species plus the held-out
//! bona fide samples. One [`BonafideSplit`] is shared by all cases and
//! backbones of an invocation so that comparisons use identical test sets.
//! Splitting is per sample; the manifest carries no subject information.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{BackboneId, EmbeddingError, EmbeddingMatrix};
use crate::manifest::{DatasetManifest, PaiSpecies, PresentationLabel, SampleRecord};
use crate::svm::{self, ScoreSet, SvmConfig, SvmError, TrainedModel};

pub const DEFAULT_BONAFIDE_RATIO: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("need at least 2 bona fide samples to split, found {0}")]
    TooFewBonaFide(usize),
    #[error("bona fide ratio must be in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("case {case}: empty {partition} partition ({detail})")]
    EmptyPartition {
        case: u8,
        partition: &'static str,
        detail: String,
    },
    #[error("case {case} on {backbone}: {source}")]
    Embedding {
        case: u8,
        backbone: BackboneId,
        #[source]
        source: EmbeddingError,
    },
    #[error("case {case} on {backbone}: {source}")]
    Svm {
        case: u8,
        backbone: BackboneId,
        #[source]
        source: SvmError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDefinition {
    pub case_id: u8,
    pub train_species: BTreeSet<PaiSpecies>,
    pub test_species: PaiSpecies,
}

impl CaseDefinition {
    /// The case holding out `test_species`.
    pub fn holding_out(case_id: u8, test_species: PaiSpecies) -> Self {
        CaseDefinition {
            case_id,
            train_species: PaiSpecies::ALL
                .into_iter()
                .filter(|&s| s != test_species)
                .collect(),
            test_species,
        }
    }
}

impl fmt::Display for CaseDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let train: Vec<&str> = self.train_species.iter().map(|s| s.as_str()).collect();
        write!(
            f,
            "Case-{}: train {{{}}}, test {}",
            self.case_id,
            train.join(", "),
            self.test_species
        )
    }
}

/// Case-1 ecoflex, Case-2 photo paper, Case-3 playdoh, Case-4 woodglue.
pub fn build_cases() -> Vec<CaseDefinition> {
    [
        PaiSpecies::Ecoflex,
        PaiSpecies::PhotoPaper,
        PaiSpecies::Playdoh,
        PaiSpecies::Woodglue,
    ]
    .into_iter()
    .zip(1u8..)
    .map(|(s, id)| CaseDefinition::holding_out(id, s))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonafideSplit {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub ratio: f64,
    pub seed: u64,
}

/// Seeded shuffle of the bona fide ids (manifest order), then a prefix split.
/// The training share is `floor(ratio·n)`, kept within `[1, n−1]` so both
/// sides are non-empty.
pub fn split_bonafide(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
) -> Result<BonafideSplit, ProtocolError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ProtocolError::InvalidRatio(ratio));
    }
    let mut ids: Vec<&str> = manifest
        .iter()
        .filter(|r| r.label.is_bona_fide())
        .map(|r| r.sample_id.as_str())
        .collect();
    let n = ids.len();
    if n < 2 {
        return Err(ProtocolError::TooFewBonaFide(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
    Ok(BonafideSplit {
        train_ids: ids[..n_train].iter().map(|s| s.to_string()).collect(),
        test_ids: ids[n_train..].iter().map(|s| s.to_string()).collect(),
        ratio,
        seed,
    })
}

/// Training and scoring membership of one case.
#[derive(Debug, Clone)]
pub struct CasePartition<'m> {
    pub train: Vec<&'m SampleRecord>,
    pub test: Vec<&'m SampleRecord>,
}

impl<'m> CasePartition<'m> {
    pub fn build(
        case: &CaseDefinition,
        manifest: &'m DatasetManifest,
        split: &BonafideSplit,
    ) -> Result<Self, ProtocolError> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for rec in manifest {
            match rec.label {
                PresentationLabel::BonaFide => {
                    if split.train_ids.contains(&rec.sample_id) {
                        train.push(rec);
                    } else if split.test_ids.contains(&rec.sample_id) {
                        test.push(rec);
                    }
                }
                PresentationLabel::Attack(s) if s == case.test_species => test.push(rec),
                PresentationLabel::Attack(s) if case.train_species.contains(&s) => train.push(rec),
                PresentationLabel::Attack(_) => {}
            }
        }
        let empty = |partition, detail: String| ProtocolError::EmptyPartition {
            case: case.case_id,
            partition,
            detail,
        };
        if !train.iter().any(|r| r.label.is_bona_fide()) {
            return Err(empty("train", "no bona fide samples".into()));
        }
        if !train.iter().any(|r| !r.label.is_bona_fide()) {
            return Err(empty("train", "no attacks of the training species".into()));
        }
        if !test.iter().any(|r| r.label.is_bona_fide()) {
            return Err(empty("test", "no bona fide samples".into()));
        }
        if !test.iter().any(|r| !r.label.is_bona_fide()) {
            return Err(empty(
                "test",
                format!("no {} samples", case.test_species),
            ));
        }
        Ok(CasePartition { train, test })
    }
}

/// Settings shared by every case run of an invocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub svm: SvmConfig,
    pub standardize: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            svm: SvmConfig::default(),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseRun {
    pub case: CaseDefinition,
    pub backbone: BackboneId,
    pub model: TrainedModel,
    pub scores: ScoreSet,
    pub train_size: usize,
    /// (bona fide, attacks) in the training set.
    pub train_balance: (usize, usize),
}

pub fn run_case(
    case: &CaseDefinition,
    manifest: &DatasetManifest,
    embeddings: &EmbeddingMatrix,
    split: &BonafideSplit,
    settings: &RunSettings,
) -> Result<CaseRun, ProtocolError> {
    let backbone = embeddings.backbone();
    let emb_err = |source| ProtocolError::Embedding {
        case: case.case_id,
        backbone,
        source,
    };
    let svm_err = |source| ProtocolError::Svm {
        case: case.case_id,
        backbone,
        source,
    };

    let part = CasePartition::build(case, manifest, split)?;

    let train_view = embeddings
        .select(part.train.iter().map(|r| r.sample_id.as_str()))
        .map_err(emb_err)?;
    let y: Vec<i8> = part
        .train
        .iter()
        .map(|r| if r.label.is_bona_fide() { 1 } else { -1 })
        .collect();
    let model = svm::fit(train_view.to_array().view(), &y, &settings.svm, settings.standardize)
        .map_err(svm_err)?;

    let test_view = embeddings
        .select(part.test.iter().map(|r| r.sample_id.as_str()))
        .map_err(emb_err)?;
    let ids: Vec<String> = part.test.iter().map(|r| r.sample_id.clone()).collect();
    let labels: Vec<PresentationLabel> = part.test.iter().map(|r| r.label).collect();
    let scores =
        svm::decision_scores(&model, test_view.to_array().view(), &ids, &labels).map_err(svm_err)?;

    let n_bf = y.iter().filter(|&&v| v == 1).count();
    Ok(CaseRun {
        case: case.clone(),
        backbone,
        model,
        scores,
        train_size: y.len(),
        train_balance: (n_bf, y.len() - n_bf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{CaptureDevice, SampleRecord};

    fn set(species: &[PaiSpecies]) -> BTreeSet<PaiSpecies> {
        species.iter().copied().collect()
    }

    #[test]
    fn four_cases_as_published() {
        use PaiSpecies::*;
        let cases = build_cases();
        assert_eq!(cases.len(), 4);
        let expected = [
            (1, [PhotoPaper, Playdoh, Woodglue], Ecoflex),
            (2, [Ecoflex, Playdoh, Woodglue], PhotoPaper),
            (3, [Ecoflex, PhotoPaper, Woodglue], Playdoh),
            (4, [Ecoflex, PhotoPaper, Playdoh], Woodglue),
        ];
        for (case, (id, train, test)) in cases.iter().zip(expected) {
            assert_eq!(case.case_id, id);
            assert_eq!(case.train_species, set(&train));
            assert_eq!(case.test_species, test);
        }
        let tested: BTreeSet<_> = cases.iter().map(|c| c.test_species).collect();
        assert_eq!(tested.len(), 4);
    }

    fn bona_fide_manifest(n: usize) -> DatasetManifest {
        DatasetManifest::from_records(
            (0..n)
                .map(|i| SampleRecord {
                    sample_id: format!("b{i}"),
                    image_path: String::new(),
                    label: PresentationLabel::BonaFide,
                    device: CaptureDevice::IPhoneX,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_ten_in_half() {
        let m = bona_fide_manifest(10);
        let s = split_bonafide(&m, 0.5, 7).unwrap();
        assert_eq!(s.train_ids.len(), 5);
        assert_eq!(s.test_ids.len(), 5);
        assert!(s.train_ids.is_disjoint(&s.test_ids));
        assert_eq!(s.train_ids.union(&s.test_ids).count(), 10);
        assert_eq!(split_bonafide(&m, 0.5, 7).unwrap(), s);
    }

    #[test]
    fn split_floor_rule() {
        let s = split_bonafide(&bona_fide_manifest(3), 0.5, 1).unwrap();
        assert_eq!((s.train_ids.len(), s.test_ids.len()), (1, 2));
        let s = split_bonafide(&bona_fide_manifest(2), 0.1, 1).unwrap();
        assert_eq!((s.train_ids.len(), s.test_ids.len()), (1, 1));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_bonafide(&bona_fide_manifest(1), 0.5, 1),
            Err(ProtocolError::TooFewBonaFide(1))
        ));
        for r in [0.0, 1.0, f64::NAN] {
            assert!(matches!(
                split_bonafide(&bona_fide_manifest(4), r, 1),
                Err(ProtocolError::InvalidRatio(_))
            ));
        }
    }
}
