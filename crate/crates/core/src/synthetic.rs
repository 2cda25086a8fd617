//! Seeded Gaussian datasets.
//!
//! Attacks are drawn from N(0, I); bona fide samples from N(shift·e₀, I),
//! i.e. the classes differ by `shift` standard deviations along the first
//! axis only. All four species share the attack distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{BackboneId, EmbeddingError, EmbeddingMatrix};
use crate::manifest::{CaptureDevice, DatasetManifest, PaiSpecies, PresentationLabel, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub bona_fide: usize,
    pub per_species: [usize; 4],
    /// Class-mean offset along axis 0, in units of the per-axis std.
    pub shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn balanced(bona_fide: usize, per_species: usize, shift: f64, seed: u64) -> Self {
        SyntheticSpec {
            bona_fide,
            per_species: [per_species; 4],
            shift,
            seed,
        }
    }
}

/// Manifest with ids `bf00000…` then `<species>00000…`, species in
/// [`PaiSpecies::ALL`] order, devices alternating.
pub fn manifest(spec: &SyntheticSpec) -> DatasetManifest {
    let device = |i: usize| {
        if i.is_multiple_of(2) {
            CaptureDevice::IPhoneX
        } else {
            CaptureDevice::GalaxyS20
        }
    };
    let mut records = Vec::new();
    for i in 0..spec.bona_fide {
        records.push(SampleRecord {
            sample_id: format!("bf{i:05}"),
            image_path: format!("bona_fide/{i:05}.png"),
            label: PresentationLabel::BonaFide,
            device: device(i),
        });
    }
    for (species, &count) in PaiSpecies::ALL.iter().zip(&spec.per_species) {
        for i in 0..count {
            records.push(SampleRecord {
                sample_id: format!("{}{i:05}", species.as_str()),
                image_path: format!("{}/{i:05}.png", species.as_str()),
                label: PresentationLabel::Attack(*species),
                device: device(i),
            });
        }
    }
    DatasetManifest::from_records(records).expect("generated ids are unique")
}

/// Embeddings for every sample of `manifest`. The stream depends on
/// `spec.seed` and the backbone code, so backbones get independent draws.
pub fn embeddings(
    manifest: &DatasetManifest,
    backbone: BackboneId,
    dim: usize,
    spec: &SyntheticSpec,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((backbone.code() as u64 + 1) << 56));
    let mut values = Vec::with_capacity(manifest.len() * dim);
    for rec in manifest {
        let offset = if rec.label.is_bona_fide() { spec.shift } else { 0.0 };
        for j in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            values.push((if j == 0 { z + offset } else { z }) as f32);
        }
    }
    EmbeddingMatrix::new(
        backbone,
        dim,
        manifest.ids().map(str::to_string).collect(),
        values,
    )
}

/// Dimension used for a backbone in synthetic data: the catalogue value,
/// or `fallback` for file-declared backbones.
pub fn dim_for(backbone: BackboneId, fallback: usize) -> usize {
    backbone.expected_dim().unwrap_or(fallback)
}
