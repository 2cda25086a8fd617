//! Backbone catalogue and the `PDBE` embedding file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PDBE" | version u16 = 1 | backbone_id u8 | dim u32 | row_count u64
//! | row_count × (u16 id length, UTF-8 id bytes)
//! | row_count × dim × f32, row-major
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::manifest::DatasetManifest;

pub const MAGIC: [u8; 4] = *b"PDBE";
pub const FORMAT_VERSION: u16 = 1;
pub const FILE_EXTENSION: &str = "pdbe";

const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("bad magic {found:?}, expected \"PDBE\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown backbone code {0}")]
    UnknownBackbone(u8),
    #[error("{backbone} expects dim {expected}, file declares {found}")]
    DimMismatch {
        backbone: BackboneId,
        expected: usize,
        found: usize,
    },
    #[error("zero embedding dimension")]
    ZeroDim,
    #[error("truncated {section}: need {needed} bytes, {available} available")]
    Truncated {
        section: &'static str,
        needed: u64,
        available: u64,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("sample id at row {row} is not valid UTF-8")]
    InvalidId { row: u64 },
    #[error("sample id at row {row} exceeds {max} bytes", max = u16::MAX)]
    IdTooLong { row: usize },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{values} values do not fill {rows} rows of dim {dim}")]
    ShapeMismatch {
        rows: usize,
        dim: usize,
        values: usize,
    },
    #[error("{} manifest sample(s) missing from embeddings: {}", .0.len(), .0.join(", "))]
    MissingIds(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EmbeddingError {
    /// Everything except I/O is a property of the file contents.
    pub fn is_format_error(&self) -> bool {
        match self {
            EmbeddingError::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackboneId {
    AlexNet,
    GoogLeNet,
    ResNet50,
    DenseNet201,
    MobileNetV2,
    EfficientNetB0,
    NASNet,
    ViT,
}

impl BackboneId {
    /// Declaration order doubles as the `backbone_id` byte.
    pub const ALL: [BackboneId; 8] = [
        BackboneId::AlexNet,
        BackboneId::GoogLeNet,
        BackboneId::ResNet50,
        BackboneId::DenseNet201,
        BackboneId::MobileNetV2,
        BackboneId::EfficientNetB0,
        BackboneId::NASNet,
        BackboneId::ViT,
    ];

    /// Row order used by rendered tables.
    pub const TABLE_ORDER: [BackboneId; 8] = [
        BackboneId::AlexNet,
        BackboneId::GoogLeNet,
        BackboneId::DenseNet201,
        BackboneId::ResNet50,
        BackboneId::EfficientNetB0,
        BackboneId::NASNet,
        BackboneId::MobileNetV2,
        BackboneId::ViT,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Feature dimension at the tap point. `None` for NASNet, whose
    /// variant (mobile 1056, large 4032) is declared by the file.
    pub fn expected_dim(self) -> Option<usize> {
        match self {
            BackboneId::AlexNet => Some(4096),
            BackboneId::GoogLeNet => Some(1024),
            BackboneId::ResNet50 => Some(2048),
            BackboneId::DenseNet201 => Some(1920),
            BackboneId::MobileNetV2 => Some(1280),
            BackboneId::EfficientNetB0 => Some(1280),
            BackboneId::NASNet => None,
            BackboneId::ViT => Some(768),
        }
    }

    pub fn tap_point(self) -> &'static str {
        match self {
            BackboneId::AlexNet => "fc6 output",
            BackboneId::ViT => "class token, ViT-B/32",
            BackboneId::NASNet => "global average pool (variant declared by file)",
            _ => "global average pool",
        }
    }

    /// File-name stem and CLI token.
    pub fn slug(self) -> &'static str {
        match self {
            BackboneId::AlexNet => "alexnet",
            BackboneId::GoogLeNet => "googlenet",
            BackboneId::ResNet50 => "resnet50",
            BackboneId::DenseNet201 => "densenet201",
            BackboneId::MobileNetV2 => "mobilenet_v2",
            BackboneId::EfficientNetB0 => "efficientnet_b0",
            BackboneId::NASNet => "nasnet",
            BackboneId::ViT => "vit",
        }
    }

    /// Name as printed in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            BackboneId::AlexNet => "AlexNet",
            BackboneId::GoogLeNet => "GoogleNet",
            BackboneId::ResNet50 => "ResNet50",
            BackboneId::DenseNet201 => "DenseNet201",
            BackboneId::MobileNetV2 => "MobileNet-V2",
            BackboneId::EfficientNetB0 => "EfficientNet-B0",
            BackboneId::NASNet => "NasNet",
            BackboneId::ViT => "ViT",
        }
    }

    pub fn spec(self) -> BackboneSpec {
        BackboneSpec {
            backbone_id: self,
            tap_point: self.tap_point(),
            expected_dim: self.expected_dim(),
        }
    }

    /// `<embeddings-dir>/<slug>.pdbe`
    pub fn file_in(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.{FILE_EXTENSION}", self.slug()))
    }
}

impl fmt::Display for BackboneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown backbone `{0}`")]
pub struct UnknownBackbone(pub String);

impl FromStr for BackboneId {
    type Err = UnknownBackbone;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        BackboneId::ALL
            .into_iter()
            .find(|b| {
                let slug: String = b.slug().chars().filter(|c| *c != '_').collect();
                slug == folded
            })
            .ok_or_else(|| UnknownBackbone(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub backbone_id: BackboneId,
    pub tap_point: &'static str,
    pub expected_dim: Option<usize>,
}

/// Per-sample embeddings for one backbone over one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    backbone: BackboneId,
    dim: usize,
    sample_ids: Vec<String>,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Validates shape, dim, finiteness and id uniqueness.
    pub fn new(
        backbone: BackboneId,
        dim: usize,
        sample_ids: Vec<String>,
        values: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        check_dim(backbone, dim)?;
        if values.len() != sample_ids.len() * dim {
            return Err(EmbeddingError::ShapeMismatch {
                rows: sample_ids.len(),
                dim,
                values: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        for (row, id) in sample_ids.iter().enumerate() {
            if id.len() > u16::MAX as usize {
                return Err(EmbeddingError::IdTooLong { row });
            }
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingMatrix {
            backbone,
            dim,
            sample_ids,
            values,
        })
    }

    pub fn backbone(&self) -> BackboneId {
        self.backbone
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.sample_ids.iter().map(|s| 2 + s.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + id_bytes + self.values.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.backbone.code());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        for id in &self.sample_ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take("header", 4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(EmbeddingError::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes(cur.take("header", 2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(EmbeddingError::UnsupportedVersion(version));
        }
        let code = cur.take("header", 1)?[0];
        let backbone = BackboneId::from_code(code).ok_or(EmbeddingError::UnknownBackbone(code))?;
        let dim = u32::from_le_bytes(cur.take("header", 4)?.try_into().unwrap()) as usize;
        check_dim(backbone, dim)?;
        let rows = u64::from_le_bytes(cur.take("header", 8)?.try_into().unwrap());

        // Each id needs at least its 2-byte length prefix.
        let min_ids = rows.saturating_mul(2);
        if min_ids > cur.remaining() {
            return Err(EmbeddingError::Truncated {
                section: "id table",
                needed: min_ids,
                available: cur.remaining(),
            });
        }
        let mut sample_ids = Vec::with_capacity(rows as usize);
        for row in 0..rows {
            let len = u16::from_le_bytes(cur.take("id table", 2)?.try_into().unwrap());
            let raw = cur.take("id table", len as usize)?;
            let id = std::str::from_utf8(raw).map_err(|_| EmbeddingError::InvalidId { row })?;
            sample_ids.push(id.to_string());
        }

        let payload_len = rows
            .checked_mul(dim as u64)
            .and_then(|n| n.checked_mul(4))
            .unwrap_or(u64::MAX);
        if payload_len > cur.remaining() {
            return Err(EmbeddingError::Truncated {
                section: "payload",
                needed: payload_len,
                available: cur.remaining(),
            });
        }
        let payload = cur.take("payload", payload_len as usize)?;
        if cur.remaining() > 0 {
            return Err(EmbeddingError::TrailingBytes(cur.remaining()));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingMatrix::new(backbone, dim, sample_ids, values)
    }

    /// Rows reordered to manifest order. Every manifest id must be present;
    /// the error lists all that are not.
    pub fn align(&self, manifest: &DatasetManifest) -> Result<AlignedView<'_>, EmbeddingError> {
        self.select(manifest.ids())
    }

    /// Rows for `ids`, in the order given.
    pub fn select<'a, I>(&self, ids: I) -> Result<AlignedView<'_>, EmbeddingError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut rows = Vec::new();
        let mut missing = Vec::new();
        for id in ids {
            match index.get(id) {
                Some(&r) => rows.push(r),
                None => missing.push(id.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(EmbeddingError::MissingIds(missing));
        }
        Ok(AlignedView { matrix: self, rows })
    }
}

fn check_dim(backbone: BackboneId, dim: usize) -> Result<(), EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    match backbone.expected_dim() {
        Some(expected) if expected != dim => Err(EmbeddingError::DimMismatch {
            backbone,
            expected,
            found: dim,
        }),
        _ => Ok(()),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> u64 {
        (self.bytes.len() - self.pos) as u64
    }

    fn take(&mut self, section: &'static str, n: usize) -> Result<&'a [u8], EmbeddingError> {
        if (n as u64) > self.remaining() {
            return Err(EmbeddingError::Truncated {
                section,
                needed: n as u64,
                available: self.remaining(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

/// Ordered selection of rows from an [`EmbeddingMatrix`].
#[derive(Debug, Clone)]
pub struct AlignedView<'a> {
    matrix: &'a EmbeddingMatrix,
    rows: Vec<usize>,
}

impl<'a> AlignedView<'a> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        self.matrix.row(self.rows[i])
    }

    pub fn sample_id(&self, i: usize) -> &'a str {
        &self.matrix.sample_ids[self.rows[i]]
    }

    /// Underlying row indices into the matrix.
    pub fn row_indices(&self) -> &[usize] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [f32]> + '_ {
        self.rows.iter().map(move |&r| self.matrix.row(r))
    }

    /// Dense f64 copy, one row per selected sample.
    pub fn to_array(&self) -> ndarray::Array2<f64> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(self.len() * dim);
        for row in self.iter() {
            data.extend(row.iter().map(|&v| v as f64));
        }
        ndarray::Array2::from_shape_vec((self.len(), dim), data).expect("shape by construction")
    }
}

/// Write `m` to `path` atomically.
pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<(), EmbeddingError> {
    crate::fsutil::write_atomic(path, |w| w.write_all(&m.to_bytes())).map_err(|source| {
        EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    let bytes = std::fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingMatrix::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{CaptureDevice, PresentationLabel, SampleRecord};

    fn matrix(backbone: BackboneId, dim: usize, ids: &[&str]) -> EmbeddingMatrix {
        let values = (0..ids.len() * dim).map(|i| i as f32 * 0.5 - 3.0).collect();
        EmbeddingMatrix::new(
            backbone,
            dim,
            ids.iter().map(|s| s.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    fn manifest(ids: &[&str]) -> DatasetManifest {
        DatasetManifest::from_records(
            ids.iter()
                .map(|id| SampleRecord {
                    sample_id: id.to_string(),
                    image_path: String::new(),
                    label: PresentationLabel::BonaFide,
                    device: CaptureDevice::IPhoneX,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn header_only_file() {
        let m = EmbeddingMatrix::new(BackboneId::AlexNet, 4096, vec![], vec![]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], b"PDBE");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 0);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 4096);
        assert_eq!(u64::from_le_bytes(bytes[11..19].try_into().unwrap()), 0);
        assert_eq!(EmbeddingMatrix::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn nan_rejected() {
        let err = EmbeddingMatrix::new(
            BackboneId::ViT,
            768,
            vec!["a".into()],
            (0..768).map(|i| if i == 5 { f32::NAN } else { 0.0 }).collect(),
        )
        .unwrap_err();
        assert!(matches!(err, EmbeddingError::NonFinite { row: 0, col: 5 }));
    }

    #[test]
    fn resnet_dim_accepted_alexnet_1000_rejected() {
        let m = matrix(BackboneId::ResNet50, 2048, &["a"]);
        assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap().dim(), 2048);

        let mut bytes = matrix(BackboneId::AlexNet, 4096, &[]).to_bytes();
        bytes[7..11].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::DimMismatch {
                expected: 4096,
                found: 1000,
                ..
            })
        ));
    }

    #[test]
    fn nasnet_dim_is_file_declared() {
        for dim in [1056, 4032, 7] {
            let m = matrix(BackboneId::NASNet, dim, &["x", "y"]);
            assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        }
    }

    #[test]
    fn truncated_payload() {
        let bytes = matrix(BackboneId::ViT, 768, &["a", "b"]).to_bytes();
        let short = &bytes[..bytes.len() - 4];
        assert!(matches!(
            EmbeddingMatrix::from_bytes(short),
            Err(EmbeddingError::Truncated {
                section: "payload",
                ..
            })
        ));
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes[..10]),
            Err(EmbeddingError::Truncated {
                section: "header",
                ..
            })
        ));
    }

    #[test]
    fn bad_magic_version_and_duplicates() {
        let mut bytes = matrix(BackboneId::ViT, 768, &["a"]).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::BadMagic { .. })
        ));

        let mut bytes = matrix(BackboneId::ViT, 768, &["a"]).to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::UnsupportedVersion(2))
        ));

        // rename "b" to "a" in-place in the id table
        let mut bytes = matrix(BackboneId::ViT, 768, &["a", "b"]).to_bytes();
        bytes[HEADER_LEN + 5] = b'a';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn align_follows_manifest_order() {
        let m = matrix(BackboneId::NASNet, 3, &["a", "b", "c", "d"]);
        let view = m.align(&manifest(&["c", "a", "d"])).unwrap();
        assert_eq!(view.len(), 3);
        assert_eq!(view.row(0), m.row(2));
        assert_eq!(view.row(1), m.row(0));
        assert_eq!(view.row(2), m.row(3));
        assert_eq!(view.sample_id(0), "c");
    }

    #[test]
    fn align_reports_every_missing_id() {
        let m = matrix(BackboneId::NASNet, 3, &["a", "b"]);
        match m.align(&manifest(&["a", "zz", "b", "yy"])) {
            Err(EmbeddingError::MissingIds(ids)) => assert_eq!(ids, vec!["zz", "yy"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backbone_tokens() {
        for b in BackboneId::ALL {
            assert_eq!(b.slug().parse::<BackboneId>().unwrap(), b);
            assert_eq!(b.display_name().parse::<BackboneId>().unwrap(), b);
            assert_eq!(BackboneId::from_code(b.code()), Some(b));
        }
        assert_eq!(BackboneId::from_code(8), None);
    }
}
