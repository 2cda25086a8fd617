//! Dataset data model and the manifest CSV.
//!
//! A manifest is a headered CSV, `sample_id,image_path,label,species,device`,
//! one row per fingerphoto. `label` is `bona_fide` or `attack`; `species` is
//! empty for bona fide rows and required for attacks.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const MANIFEST_HEADER: [&str; 5] = ["sample_id", "image_path", "label", "species", "device"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: header must be exactly `{}`, found `{found}`", MANIFEST_HEADER.join(","))]
    BadHeader { line: u64, found: String },
    #[error("line {line}: missing required column `{column}`")]
    MissingColumn { line: u64, column: &'static str },
    #[error("line {line}: duplicate sample_id `{id}` (first seen on line {first_line})")]
    DuplicateId {
        line: u64,
        id: String,
        first_line: u64,
    },
    #[error("line {line}: unknown PAI species `{token}`")]
    UnknownSpecies { line: u64, token: String },
    #[error("line {line}: unknown label `{token}` (expected bona_fide or attack)")]
    UnknownLabel { line: u64, token: String },
    #[error("line {line}: bona fide sample carries species `{token}`")]
    UnexpectedSpecies { line: u64, token: String },
    #[error("line {line}: malformed CSV: {message}")]
    Csv { line: u64, message: String },
    #[error("manifest is empty of a header row")]
    Empty,
}

/// The four presentation attack instrument species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaiSpecies {
    Ecoflex,
    Playdoh,
    PhotoPaper,
    Woodglue,
}

impl PaiSpecies {
    pub const ALL: [PaiSpecies; 4] = [
        PaiSpecies::Ecoflex,
        PaiSpecies::Playdoh,
        PaiSpecies::PhotoPaper,
        PaiSpecies::Woodglue,
    ];

    /// Canonical snake_case token.
    pub fn as_str(self) -> &'static str {
        match self {
            PaiSpecies::Ecoflex => "ecoflex",
            PaiSpecies::Playdoh => "playdoh",
            PaiSpecies::PhotoPaper => "photo_paper",
            PaiSpecies::Woodglue => "woodglue",
        }
    }
}

impl fmt::Display for PaiSpecies {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown PAI species `{0}`")]
pub struct UnknownSpecies(pub String);

impl FromStr for PaiSpecies {
    type Err = UnknownSpecies;

    /// Case-insensitive; separators (`_`, `-`, space) are ignored, so
    /// `PhotoPaper`, `photo paper` and `photo_paper` all parse.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match folded.as_str() {
            "ecoflex" => Ok(PaiSpecies::Ecoflex),
            "playdoh" => Ok(PaiSpecies::Playdoh),
            "photopaper" => Ok(PaiSpecies::PhotoPaper),
            "woodglue" => Ok(PaiSpecies::Woodglue),
            _ => Err(UnknownSpecies(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationLabel {
    BonaFide,
    Attack(PaiSpecies),
}

impl PresentationLabel {
    pub fn is_bona_fide(self) -> bool {
        matches!(self, PresentationLabel::BonaFide)
    }

    pub fn species(self) -> Option<PaiSpecies> {
        match self {
            PresentationLabel::BonaFide => None,
            PresentationLabel::Attack(s) => Some(s),
        }
    }

    /// `label` column token.
    pub fn label_token(self) -> &'static str {
        match self {
            PresentationLabel::BonaFide => "bona_fide",
            PresentationLabel::Attack(_) => "attack",
        }
    }

    /// `species` column token, empty for bona fide.
    pub fn species_token(self) -> &'static str {
        self.species().map(PaiSpecies::as_str).unwrap_or("")
    }
}

/// Parse the `label` and `species` column pair.
pub fn parse_label(label: &str, species: &str) -> Result<PresentationLabel, LabelError> {
    match label.trim().to_ascii_lowercase().as_str() {
        "bona_fide" | "bonafide" | "bona fide" => {
            if species.trim().is_empty() {
                Ok(PresentationLabel::BonaFide)
            } else {
                Err(LabelError::UnexpectedSpecies(species.to_string()))
            }
        }
        "attack" => {
            if species.trim().is_empty() {
                return Err(LabelError::MissingSpecies);
            }
            species
                .trim()
                .parse()
                .map(PresentationLabel::Attack)
                .map_err(|UnknownSpecies(t)| LabelError::UnknownSpecies(t))
        }
        _ => Err(LabelError::UnknownLabel(label.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelError {
    UnknownLabel(String),
    UnknownSpecies(String),
    UnexpectedSpecies(String),
    MissingSpecies,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaptureDevice {
    IPhoneX,
    GalaxyS20,
    Other(String),
}

impl CaptureDevice {
    /// Never fails: unrecognised names become [`CaptureDevice::Other`].
    pub fn parse(s: &str) -> Self {
        let folded: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match folded.as_str() {
            "iphonex" | "appleiphonex" => CaptureDevice::IPhoneX,
            "galaxys20" | "samsunggalaxys20" => CaptureDevice::GalaxyS20,
            _ => CaptureDevice::Other(s.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            CaptureDevice::IPhoneX => "iphone_x",
            CaptureDevice::GalaxyS20 => "galaxy_s20",
            CaptureDevice::Other(name) => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_path: String,
    pub label: PresentationLabel,
    pub device: CaptureDevice,
}

/// Per-label sample counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub bona_fide: usize,
    pub ecoflex: usize,
    pub playdoh: usize,
    pub photo_paper: usize,
    pub woodglue: usize,
}

impl LabelCounts {
    pub fn species(&self, species: PaiSpecies) -> usize {
        match species {
            PaiSpecies::Ecoflex => self.ecoflex,
            PaiSpecies::Playdoh => self.playdoh,
            PaiSpecies::PhotoPaper => self.photo_paper,
            PaiSpecies::Woodglue => self.woodglue,
        }
    }

    fn species_mut(&mut self, species: PaiSpecies) -> &mut usize {
        match species {
            PaiSpecies::Ecoflex => &mut self.ecoflex,
            PaiSpecies::Playdoh => &mut self.playdoh,
            PaiSpecies::PhotoPaper => &mut self.photo_paper,
            PaiSpecies::Woodglue => &mut self.woodglue,
        }
    }

    pub fn attacks(&self) -> usize {
        self.ecoflex + self.playdoh + self.photo_paper + self.woodglue
    }

    pub fn total(&self) -> usize {
        self.bona_fide + self.attacks()
    }

    /// True when every component is ≤ the matching component of `other`.
    pub fn le_componentwise(&self, other: &LabelCounts) -> bool {
        self.bona_fide <= other.bona_fide
            && PaiSpecies::ALL
                .iter()
                .all(|&s| self.species(s) <= other.species(s))
    }
}

/// Ordered, validated collection of samples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Build from records, rejecting empty or duplicate ids.
    pub fn from_records(samples: Vec<SampleRecord>) -> Result<Self, ManifestError> {
        let mut seen = std::collections::HashMap::new();
        for (idx, rec) in samples.iter().enumerate() {
            // header occupies line 1
            let line = idx as u64 + 2;
            if rec.sample_id.is_empty() {
                return Err(ManifestError::MissingColumn {
                    line,
                    column: "sample_id",
                });
            }
            if let Some(first) = seen.insert(rec.sample_id.as_str(), line) {
                return Err(ManifestError::DuplicateId {
                    line,
                    id: rec.sample_id.clone(),
                    first_line: first,
                });
            }
        }
        Ok(DatasetManifest { samples })
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SampleRecord> {
        self.samples.iter()
    }

    pub fn summarize(&self) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for rec in &self.samples {
            match rec.label {
                PresentationLabel::BonaFide => counts.bona_fide += 1,
                PresentationLabel::Attack(s) => *counts.species_mut(s) += 1,
            }
        }
        counts
    }

    /// Order-preserving subset.
    pub fn filter(&self, keep: impl Fn(&SampleRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            samples: self.samples.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|r| r.sample_id.as_str())
    }

    pub fn id_set(&self) -> HashSet<&str> {
        self.ids().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).expect("in-memory write");
        for r in &self.samples {
            w.write_record([
                r.sample_id.as_str(),
                r.image_path.as_str(),
                r.label.label_token(),
                r.label.species_token(),
                r.device.as_str(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

impl<'a> IntoIterator for &'a DatasetManifest {
    type Item = &'a SampleRecord;
    type IntoIter = std::slice::Iter<'a, SampleRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Label/species predicate usable with [`DatasetManifest::filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    BonaFide,
    AnyAttack,
    Attack(PaiSpecies),
}

impl Selector {
    pub fn matches(self, rec: &SampleRecord) -> bool {
        match (self, rec.label) {
            (Selector::BonaFide, PresentationLabel::BonaFide) => true,
            (Selector::AnyAttack, PresentationLabel::Attack(_)) => true,
            (Selector::Attack(want), PresentationLabel::Attack(got)) => want == got,
            _ => false,
        }
    }
}

/// Parse and validate a manifest document.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(ManifestError::Empty),
        Some(r) => r.map_err(|e| csv_error(&e))?,
    };
    let header_fields: Vec<&str> = header.iter().map(str::trim).collect();
    if header_fields != MANIFEST_HEADER {
        return Err(ManifestError::BadHeader {
            line: 1,
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut samples = Vec::new();
    let mut seen = std::collections::HashMap::<String, u64>::new();
    for row in records {
        let row = row.map_err(|e| csv_error(&e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        if row.len() < MANIFEST_HEADER.len() {
            return Err(ManifestError::MissingColumn {
                line,
                column: MANIFEST_HEADER[row.len()],
            });
        }
        let field = |i: usize| row.get(i).unwrap_or("").trim();

        let sample_id = field(0);
        if sample_id.is_empty() {
            return Err(ManifestError::MissingColumn {
                line,
                column: "sample_id",
            });
        }
        if let Some(&first_line) = seen.get(sample_id) {
            return Err(ManifestError::DuplicateId {
                line,
                id: sample_id.to_string(),
                first_line,
            });
        }
        let label = parse_label(field(2), field(3)).map_err(|e| match e {
            LabelError::UnknownLabel(token) => ManifestError::UnknownLabel { line, token },
            LabelError::UnknownSpecies(token) => ManifestError::UnknownSpecies { line, token },
            LabelError::UnexpectedSpecies(token) => ManifestError::UnexpectedSpecies { line, token },
            LabelError::MissingSpecies => ManifestError::MissingColumn {
                line,
                column: "species",
            },
        })?;
        seen.insert(sample_id.to_string(), line);
        samples.push(SampleRecord {
            sample_id: sample_id.to_string(),
            image_path: field(1).to_string(),
            label,
            device: CaptureDevice::parse(field(4)),
        });
    }
    Ok(DatasetManifest { samples })
}

fn csv_error(e: &csv::Error) -> ManifestError {
    ManifestError::Csv {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "sample_id,image_path,label,species,device\n";

    fn doc(rows: &str) -> String {
        format!("{HEADER}{rows}")
    }

    #[test]
    fn three_row_manifest() {
        let m = parse_manifest(&doc(
            "b1,img/b1.png,bona_fide,,iPhone X\n\
             a1,img/a1.png,attack,ecoflex,Galaxy S20\n\
             a2,img/a2.png,attack,PlayDoh,pixel 7\n",
        ))
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.samples()[0].label, PresentationLabel::BonaFide);
        assert_eq!(m.samples()[0].device, CaptureDevice::IPhoneX);
        assert_eq!(
            m.samples()[1].label,
            PresentationLabel::Attack(PaiSpecies::Ecoflex)
        );
        assert_eq!(m.samples()[1].device, CaptureDevice::GalaxyS20);
        assert_eq!(
            m.samples()[2].label,
            PresentationLabel::Attack(PaiSpecies::Playdoh)
        );
        assert_eq!(m.samples()[2].device, CaptureDevice::Other("pixel 7".into()));
    }

    #[test]
    fn duplicate_id_reported_at_second_occurrence() {
        let err = parse_manifest(&doc(
            "s1,a.png,bona_fide,,x\ns2,b.png,bona_fide,,x\ns1,c.png,attack,woodglue,x\n",
        ))
        .unwrap_err();
        assert_eq!(
            err,
            ManifestError::DuplicateId {
                line: 4,
                id: "s1".into(),
                first_line: 2
            }
        );
    }

    #[test]
    fn unknown_species_is_an_error() {
        let err = parse_manifest(&doc("s1,a.png,attack,gelatin,x\n")).unwrap_err();
        assert_eq!(
            err,
            ManifestError::UnknownSpecies {
                line: 2,
                token: "gelatin".into()
            }
        );
    }

    #[test]
    fn missing_column_reports_line() {
        let err = parse_manifest(&doc("s1,a.png,bona_fide,,x\ns2,b.png\n")).unwrap_err();
        assert_eq!(
            err,
            ManifestError::MissingColumn {
                line: 3,
                column: "label"
            }
        );
        let err = parse_manifest(&doc("s1,a.png,attack,,x\n")).unwrap_err();
        assert_eq!(
            err,
            ManifestError::MissingColumn {
                line: 2,
                column: "species"
            }
        );
    }

    #[test]
    fn header_must_match() {
        let err = parse_manifest("id,path,label,species,device\n").unwrap_err();
        assert!(matches!(err, ManifestError::BadHeader { line: 1, .. }));
        assert_eq!(parse_manifest("").unwrap_err(), ManifestError::Empty);
    }

    #[test]
    fn species_tokens_are_case_insensitive() {
        for token in ["photo_paper", "PhotoPaper", "Photo Paper", "PHOTO-PAPER"] {
            assert_eq!(token.parse::<PaiSpecies>().unwrap(), PaiSpecies::PhotoPaper);
        }
        assert!("gelatin".parse::<PaiSpecies>().is_err());
    }

    #[test]
    fn bona_fide_with_species_rejected() {
        let err = parse_manifest(&doc("s1,a.png,bona_fide,ecoflex,x\n")).unwrap_err();
        assert!(matches!(err, ManifestError::UnexpectedSpecies { line: 2, .. }));
    }

    #[test]
    fn summarize_counts() {
        assert_eq!(DatasetManifest::default().summarize(), LabelCounts::default());
        let m = parse_manifest(&doc(
            "b1,,bona_fide,,\nb2,,bona_fide,,\nw1,,attack,woodglue,\n",
        ))
        .unwrap();
        let c = m.summarize();
        assert_eq!(
            c,
            LabelCounts {
                bona_fide: 2,
                ecoflex: 0,
                playdoh: 0,
                photo_paper: 0,
                woodglue: 1
            }
        );
        assert_eq!(c.total(), 3);
    }

    #[test]
    fn filter_by_selector() {
        let m = parse_manifest(&doc(
            "b1,,bona_fide,,\np1,,attack,playdoh,\nw1,,attack,woodglue,\n",
        ))
        .unwrap();
        assert_eq!(m.filter(|r| Selector::BonaFide.matches(r)).len(), 1);
        assert!(m
            .filter(|r| Selector::Attack(PaiSpecies::Ecoflex).matches(r))
            .is_empty());
        assert_eq!(m.filter(|r| Selector::AnyAttack.matches(r)).len(), 2);
    }

    #[test]
    fn csv_round_trip_quotes_commas() {
        let m = DatasetManifest::from_records(vec![SampleRecord {
            sample_id: "a,b".into(),
            image_path: "dir/\"x\".png".into(),
            label: PresentationLabel::Attack(PaiSpecies::PhotoPaper),
            device: CaptureDevice::Other("lab rig, v2".into()),
        }])
        .unwrap();
        assert_eq!(parse_manifest(&m.to_csv()).unwrap(), m);
    }
}
