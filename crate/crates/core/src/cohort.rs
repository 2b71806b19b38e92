//! Cohort ingestion: clinical tables, per-sample embedding files, survival
//! outcomes and one-hot encodings of the tabular attributes.
//!
//! Patients are always held in lexicographic `patient_id` order, and every
//! modality matrix in a [`CohortDataset`] has its rows in that same order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the built-in demographic one-hot modality.
pub const DEMOGRAPHIC: &str = "demographic";
/// Name of the built-in cancer-type one-hot modality.
pub const CANCER_TYPE: &str = "cancer_type";

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub duration_days: u32,
    /// `true` when death was observed, `false` when right-censored.
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(duration_days: u32, event: bool) -> Self {
        Self {
            duration_days,
            event,
        }
    }

    pub fn time(&self) -> f64 {
        f64::from(self.duration_days)
    }
}

/// Why a clinical row did not make it into the cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    NoEndpoint,
    NonpositiveDuration,
    /// Death age recorded while vital status says alive.
    InconsistentVitalStatus,
    MissingDiagnosisAge,
    NegativeAge,
    MissingSex,
    UnknownCategory {
        field: &'static str,
        value: String,
    },
    MissingModality(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::NoEndpoint => f.write_str("no endpoint"),
            RejectReason::NonpositiveDuration => f.write_str("nonpositive duration"),
            RejectReason::InconsistentVitalStatus => f.write_str("inconsistent vital status"),
            RejectReason::MissingDiagnosisAge => f.write_str("missing diagnosis age"),
            RejectReason::NegativeAge => f.write_str("negative age"),
            RejectReason::MissingSex => f.write_str("missing sex"),
            RejectReason::UnknownCategory { field, value } => {
                write!(f, "unknown category {value:?} for {field}")
            }
            RejectReason::MissingModality(name) => write!(f, "missing modality {name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub patient_id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VitalStatus {
    Alive,
    Dead,
}

impl VitalStatus {
    pub fn parse(raw: &str) -> std::result::Result<Self, RejectReason> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "alive" => Ok(VitalStatus::Alive),
            "dead" | "deceased" => Ok(VitalStatus::Dead),
            _ => Err(RejectReason::UnknownCategory {
                field: "vital_status",
                value: raw.to_string(),
            }),
        }
    }
}

/// Derives the survival outcome from ages (in days) at diagnosis, last
/// follow-up and death.
pub fn compute_survival_outcome(
    age_at_diagnosis_days: i64,
    age_at_followup_days: Option<i64>,
    age_at_death_days: Option<i64>,
    vital_status: VitalStatus,
) -> std::result::Result<SurvivalOutcome, RejectReason> {
    let (end, event) = match (age_at_death_days, age_at_followup_days) {
        (Some(death), _) => match vital_status {
            VitalStatus::Dead => (death, true),
            VitalStatus::Alive => return Err(RejectReason::InconsistentVitalStatus),
        },
        (None, Some(followup)) => (followup, false),
        (None, None) => return Err(RejectReason::NoEndpoint),
    };
    let duration = end - age_at_diagnosis_days;
    if duration <= 0 {
        return Err(RejectReason::NonpositiveDuration);
    }
    let duration = u32::try_from(duration).map_err(|_| RejectReason::NonpositiveDuration)?;
    Ok(SurvivalOutcome::new(duration, event))
}

macro_rules! categorical {
    (
        $(#[$meta:meta])*
        $name:ident, $field:literal {
            $($variant:ident => $label:literal [$($alias:literal),*]),+ $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            /// Case-insensitive parse of the canonical label or a known alias.
            pub fn parse(raw: &str) -> std::result::Result<Self, RejectReason> {
                let key = raw.trim().to_ascii_lowercase();
                $(
                    if key == $label.to_ascii_lowercase() $(|| key == $alias)* {
                        return Ok($name::$variant);
                    }
                )+
                Err(RejectReason::UnknownCategory { field: $field, value: raw.to_string() })
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }
    };
}

categorical! {
    /// 20-year age bins at diagnosis.
    AgeBin, "age_bin" {
        Under20 => "[0-20)" [],
        From20To40 => "[20-40)" [],
        From40To60 => "[40-60)" [],
        From60To80 => "[60-80)" [],
        Over80 => "80+" [],
    }
}

impl AgeBin {
    pub fn from_days(age_days: i64) -> Self {
        let years = age_days as f64 / DAYS_PER_YEAR;
        Self::from_years(years)
    }

    pub fn from_years(years: f64) -> Self {
        match (years / 20.0).floor() as i64 {
            i64::MIN..=0 => AgeBin::Under20,
            1 => AgeBin::From20To40,
            2 => AgeBin::From40To60,
            3 => AgeBin::From60To80,
            _ => AgeBin::Over80,
        }
    }
}

categorical! {
    Sex, "sex" {
        Female => "Female" ["f"],
        Male => "Male" ["m"],
    }
}

categorical! {
    Race, "race" {
        White => "White" [],
        BlackOrAfricanAmerican => "Black or African American" ["black", "black or aa"],
        Asian => "Asian" [],
        AmericanIndianOrAlaskaNative => "American Indian or Alaska Native" ["aian"],
        NativeHawaiianOrOtherPacificIslander => "Native Hawaiian or Other Pacific Islander" ["nhpi"],
        Unknown => "Unknown" [],
        NotReported => "Not Reported" ["", "not_reported"],
    }
}

categorical! {
    Ethnicity, "ethnicity" {
        NotHispanicOrLatino => "Not Hispanic or Latino" ["not hispanic/latino"],
        HispanicOrLatino => "Hispanic or Latino" ["hispanic/latino"],
        Unknown => "Unknown" [],
        NotReported => "Not Reported" ["", "not_reported"],
    }
}

/// TCGA project codes in the fixed one-hot column order.
pub const PROJECTS: [&str; 32] = [
    "ACC", "BLCA", "BRCA", "CESC", "CHOL", "COAD", "DLBC", "ESCA", "GBM", "HNSC", "KICH", "KIRC",
    "KIRP", "LGG", "LIHC", "LUAD", "LUSC", "MESO", "OV", "PAAD", "PCPG", "PRAD", "READ", "SARC",
    "SKCM", "STAD", "TGCT", "THCA", "THYM", "UCEC", "UCS", "UVM",
];

/// Cancer type, as an index into [`PROJECTS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Project(u8);

impl Project {
    pub fn parse(raw: &str) -> std::result::Result<Self, RejectReason> {
        let upper = raw.trim().to_ascii_uppercase();
        let code = upper.strip_prefix("TCGA-").unwrap_or(&upper);
        PROJECTS
            .iter()
            .position(|p| *p == code)
            .map(|i| Project(i as u8))
            .ok_or_else(|| RejectReason::UnknownCategory {
                field: "project",
                value: raw.to_string(),
            })
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < PROJECTS.len()).then_some(Project(index as u8))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn code(self) -> &'static str {
        PROJECTS[self.index()]
    }
}

impl fmt::Display for Project {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub project: Project,
    pub sex: Sex,
    pub race: Race,
    pub ethnicity: Ethnicity,
    pub age_at_diagnosis_days: i64,
    pub outcome: SurvivalOutcome,
}

impl PatientRecord {
    pub fn age_bin(&self) -> AgeBin {
        AgeBin::from_days(self.age_at_diagnosis_days)
    }
}

/// Width of the demographic one-hot block: age bins, sex, race, ethnicity.
pub const DEMOGRAPHIC_DIM: usize = 5 + 2 + 7 + 4;
pub const CANCER_TYPE_DIM: usize = PROJECTS.len();

#[derive(Debug, Clone, PartialEq)]
pub struct TabularEncoding {
    pub demographic: Vec<f64>,
    pub cancer_type: Vec<f64>,
}

/// One-hot encodes binned age, sex, race and ethnicity, and separately the
/// cancer type.
pub fn encode_tabular(record: &PatientRecord) -> TabularEncoding {
    let mut demographic = vec![0.0; DEMOGRAPHIC_DIM];
    let mut offset = 0;
    let mut set = |index: usize, width: usize| {
        demographic[offset + index] = 1.0;
        offset += width;
    };
    set(record.age_bin().index(), AgeBin::ALL.len());
    set(record.sex.index(), Sex::ALL.len());
    set(record.race.index(), Race::ALL.len());
    set(record.ethnicity.index(), Ethnicity::ALL.len());

    let mut cancer_type = vec![0.0; CANCER_TYPE_DIM];
    cancer_type[record.project.index()] = 1.0;
    TabularEncoding {
        demographic,
        cancer_type,
    }
}

/// Column labels matching [`encode_tabular`]'s demographic layout.
pub fn demographic_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(DEMOGRAPHIC_DIM);
    names.extend(AgeBin::ALL.iter().map(|c| format!("age_{}", c.label())));
    names.extend(Sex::ALL.iter().map(|c| format!("sex_{}", c.label())));
    names.extend(Race::ALL.iter().map(|c| format!("race_{}", c.label())));
    names.extend(
        Ethnicity::ALL
            .iter()
            .map(|c| format!("ethnicity_{}", c.label())),
    );
    names
}

/// Elementwise mean of equal-length sample vectors.
pub fn aggregate_samples(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or(Error::NoSamples)?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for sample in samples {
        if sample.len() != dim {
            return Err(Error::RaggedSamples {
                expected: dim,
                found: sample.len(),
            });
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample vector".into()));
        }
        for (acc, v) in sum.iter_mut().zip(sample) {
            *acc += v;
        }
    }
    if samples.len() == 1 {
        return Ok(first.clone());
    }
    let n = samples.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    Embedding,
    #[serde(rename = "tabular_onehot")]
    TabularOneHot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMatrix {
    pub name: String,
    pub kind: ModalityKind,
    pub patient_ids: Vec<String>,
    /// One row per patient, aligned with `patient_ids`.
    pub values: DMatrix<f64>,
}

impl ModalityMatrix {
    pub fn new(
        name: impl Into<String>,
        kind: ModalityKind,
        patient_ids: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if values.nrows() != patient_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: patient_ids.len(),
                found: values.nrows(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("modality {name}")));
        }
        if kind == ModalityKind::TabularOneHot && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tabular modality {name} has values outside {{0, 1}}"
            )));
        }
        Ok(Self {
            name,
            kind,
            patient_ids,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Copies the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.values.select_rows(rows.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    pub patients: Vec<PatientRecord>,
    pub modalities: BTreeMap<String, ModalityMatrix>,
}

impl CohortDataset {
    /// Checks that patients are unique and sorted by id and that every
    /// modality covers exactly those patients in that order.
    pub fn new(
        patients: Vec<PatientRecord>,
        modalities: BTreeMap<String, ModalityMatrix>,
    ) -> Result<Self> {
        if patients.is_empty() {
            return Err(Error::EmptyCohort);
        }
        for pair in patients.windows(2) {
            if pair[0].patient_id >= pair[1].patient_id {
                return Err(Error::InvalidArgument(format!(
                    "patients must be sorted and unique by id ({:?} before {:?})",
                    pair[0].patient_id, pair[1].patient_id
                )));
            }
        }
        for (name, matrix) in &modalities {
            if name != &matrix.name {
                return Err(Error::InvalidArgument(format!(
                    "modality key {name:?} does not match matrix name {:?}",
                    matrix.name
                )));
            }
            let aligned = matrix.patient_ids.len() == patients.len()
                && matrix
                    .patient_ids
                    .iter()
                    .zip(&patients)
                    .all(|(id, p)| *id == p.patient_id);
            if !aligned {
                return Err(Error::InvalidArgument(format!(
                    "modality {name} is not aligned with the cohort"
                )));
            }
        }
        Ok(Self {
            patients,
            modalities,
        })
    }

    /// Builds a dataset from embedding matrices and adds the demographic and
    /// cancer-type one-hot modalities derived from the patient records.
    /// Patients are sorted by id; embedding rows must follow the input order
    /// of `patients`.
    pub fn with_tabular(
        mut patients: Vec<PatientRecord>,
        embeddings: Vec<(String, DMatrix<f64>)>,
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..patients.len()).collect();
        order.sort_by(|&a, &b| patients[a].patient_id.cmp(&patients[b].patient_id));
        patients = order.iter().map(|&i| patients[i].clone()).collect();
        let ids: Vec<String> = patients.iter().map(|p| p.patient_id.clone()).collect();

        let mut modalities = BTreeMap::new();
        for (name, values) in embeddings {
            if values.nrows() != order.len() {
                return Err(Error::DimensionMismatch {
                    expected: order.len(),
                    found: values.nrows(),
                });
            }
            let values = values.select_rows(order.iter());
            let matrix =
                ModalityMatrix::new(name.clone(), ModalityKind::Embedding, ids.clone(), values)?;
            modalities.insert(name, matrix);
        }
        let (demo, cancer) = tabular_matrices(&patients);
        modalities.insert(
            DEMOGRAPHIC.to_string(),
            ModalityMatrix::new(DEMOGRAPHIC, ModalityKind::TabularOneHot, ids.clone(), demo)?,
        );
        modalities.insert(
            CANCER_TYPE.to_string(),
            ModalityMatrix::new(CANCER_TYPE, ModalityKind::TabularOneHot, ids, cancer)?,
        );
        Self::new(patients, modalities)
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn outcomes(&self) -> Vec<SurvivalOutcome> {
        self.patients.iter().map(|p| p.outcome).collect()
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        self.patients
            .iter()
            .map(|p| p.patient_id.as_str())
            .collect()
    }

    pub fn index_of(&self, patient_id: &str) -> Option<usize> {
        self.patients
            .binary_search_by(|p| p.patient_id.as_str().cmp(patient_id))
            .ok()
    }

    pub fn modality(&self, name: &str) -> Result<&ModalityMatrix> {
        self.modalities
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown modality {name:?}")))
    }
}

fn tabular_matrices(patients: &[PatientRecord]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut demo = DMatrix::zeros(patients.len(), DEMOGRAPHIC_DIM);
    let mut cancer = DMatrix::zeros(patients.len(), CANCER_TYPE_DIM);
    for (row, patient) in patients.iter().enumerate() {
        let enc = encode_tabular(patient);
        for (col, v) in enc.demographic.iter().enumerate() {
            demo[(row, col)] = *v;
        }
        for (col, v) in enc.cancer_type.iter().enumerate() {
            cancer[(row, col)] = *v;
        }
    }
    (demo, cancer)
}

/// Cohort manifest: the clinical table plus one embedding file per modality.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub clinical: PathBuf,
    pub modalities: BTreeMap<String, PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_reader(file)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        manifest.clinical = base.join(&manifest.clinical);
        for p in manifest.modalities.values_mut() {
            *p = base.join(&*p);
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone)]
pub struct CohortLoad {
    pub dataset: CohortDataset,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Deserialize)]
struct ClinicalRow {
    patient_id: String,
    project: String,
    sex: String,
    race: String,
    ethnicity: String,
    age_at_diagnosis_days: String,
    age_at_last_followup_days: String,
    age_at_death_days: String,
    vital_status: String,
}

fn parse_days(file: &Path, line: usize, column: &str, raw: &str) -> Result<Option<i64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(Some(v));
    }
    // Some exports write whole days as "123.0".
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Ok(Some(v as i64)),
        _ => Err(Error::Parse {
            file: file.to_path_buf(),
            message: format!("line {line}: {column} is not an integer: {raw:?}"),
        }),
    }
}

fn record_from_row(
    file: &Path,
    line: usize,
    row: &ClinicalRow,
) -> Result<std::result::Result<PatientRecord, RejectReason>> {
    let dx = parse_days(
        file,
        line,
        "age_at_diagnosis_days",
        &row.age_at_diagnosis_days,
    )?;
    let followup = parse_days(
        file,
        line,
        "age_at_last_followup_days",
        &row.age_at_last_followup_days,
    )?;
    let death = parse_days(file, line, "age_at_death_days", &row.age_at_death_days)?;
    Ok((|| {
        let project = Project::parse(&row.project)?;
        if row.sex.trim().is_empty() {
            return Err(RejectReason::MissingSex);
        }
        let sex = Sex::parse(&row.sex)?;
        let race = Race::parse(&row.race)?;
        let ethnicity = Ethnicity::parse(&row.ethnicity)?;
        let dx = dx.ok_or(RejectReason::MissingDiagnosisAge)?;
        if dx < 0 {
            return Err(RejectReason::NegativeAge);
        }
        let vital = VitalStatus::parse(&row.vital_status)?;
        let outcome = compute_survival_outcome(dx, followup, death, vital)?;
        Ok(PatientRecord {
            patient_id: row.patient_id.trim().to_string(),
            project,
            sex,
            race,
            ethnicity,
            age_at_diagnosis_days: dx,
            outcome,
        })
    })())
}

/// Reads the clinical table. Returns valid records sorted by id, plus the
/// rows rejected for invalid survival or demographic data.
pub fn read_clinical(path: &Path) -> Result<(Vec<PatientRecord>, Vec<Rejection>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for (i, row) in reader.deserialize::<ClinicalRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let id = row.patient_id.trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                message: format!("line {line}: empty patient_id"),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicatePatient(id));
        }
        match record_from_row(path, line, &row)? {
            Ok(record) => records.push(record),
            Err(reason) => rejections.push(Rejection {
                patient_id: id,
                reason,
            }),
        }
    }
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok((records, rejections))
}

/// Reads an embedding CSV (`patient_id, sample_id, e0 .. e{d-1}`) and
/// averages each patient's samples.
pub fn read_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let width = reader.headers()?.len();
    if width < 3 {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            message: "expected patient_id, sample_id and at least one feature column".into(),
        });
    }
    let dim = width - 2;
    let mut samples: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != width {
            return Err(Error::InconsistentDim {
                file: path.to_path_buf(),
                line,
                expected: dim,
                found: record.len().saturating_sub(2),
            });
        }
        let mut values = Vec::with_capacity(dim);
        for field in record.iter().skip(2) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                message: format!("line {line}: not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{} line {line}", path.display())));
            }
            values.push(v);
        }
        samples
            .entry(record[0].trim().to_string())
            .or_default()
            .push(values);
    }
    samples
        .into_iter()
        .map(|(id, rows)| Ok((id, aggregate_samples(&rows)?)))
        .collect()
}

/// Loads the cohort described by a manifest. Patients must have valid
/// clinical data and appear in every embedding file; everyone else is
/// reported in [`CohortLoad::rejections`].
pub fn load_cohort(manifest_path: &Path) -> Result<CohortLoad> {
    let manifest = Manifest::read(manifest_path)?;
    if manifest.modalities.is_empty() {
        return Err(Error::InvalidConfig(
            "manifest lists no embedding modalities".into(),
        ));
    }
    for reserved in [DEMOGRAPHIC, CANCER_TYPE] {
        if manifest.modalities.contains_key(reserved) {
            return Err(Error::InvalidConfig(format!(
                "modality name {reserved:?} is reserved for the built-in tabular encoding"
            )));
        }
    }
    let (records, mut rejections) = read_clinical(&manifest.clinical)?;

    let embeddings: Vec<(String, BTreeMap<String, Vec<f64>>)> = manifest
        .modalities
        .par_iter()
        .map(|(name, path)| Ok((name.clone(), read_embeddings(path)?)))
        .collect::<Result<_>>()?;

    let mut retained = Vec::new();
    for record in records {
        let missing = embeddings
            .iter()
            .find(|(_, rows)| !rows.contains_key(&record.patient_id));
        match missing {
            Some((name, _)) => rejections.push(Rejection {
                patient_id: record.patient_id.clone(),
                reason: RejectReason::MissingModality(name.clone()),
            }),
            None => retained.push(record),
        }
    }
    rejections.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    for r in &rejections {
        log::warn!("rejected patient {}: {}", r.patient_id, r.reason);
    }
    if retained.is_empty() {
        return Err(Error::EmptyCohort);
    }

    let mut matrices = Vec::with_capacity(embeddings.len());
    for (name, rows) in &embeddings {
        let dim = rows.values().next().map_or(0, Vec::len);
        let mut values = DMatrix::zeros(retained.len(), dim);
        for (r, patient) in retained.iter().enumerate() {
            for (c, v) in rows[&patient.patient_id].iter().enumerate() {
                values[(r, c)] = *v;
            }
        }
        matrices.push((name.clone(), values));
    }
    let dataset = CohortDataset::with_tabular(retained, matrices)?;
    Ok(CohortLoad {
        dataset,
        rejections,
    })
}
