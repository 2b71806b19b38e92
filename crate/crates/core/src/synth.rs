//! Seeded synthetic cohorts with a known proportional-hazards structure.
//!
//! Each embedding modality carries one latent standard-normal signal `z_m`.
//! The true log-hazard is `sum_m strength_m * z_m`. Column 0 of modality `m`
//! is exactly `strength_m * z_m`; roughly half of the remaining columns are
//! noisy copies of `z_m`, the rest pure noise. Event times are exponential
//! with rate `base_rate * exp(log_hazard)`; censoring is uniform.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{
    CohortDataset, Ethnicity, Manifest, ModalityKind, PatientRecord, Project, Race, Sex,
    SurvivalOutcome, PROJECTS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModality {
    pub name: String,
    pub dim: usize,
    /// Coefficient of this modality's latent signal in the true log-hazard.
    pub strength: f64,
}

impl SyntheticModality {
    pub fn new(name: impl Into<String>, dim: usize, strength: f64) -> Self {
        Self {
            name: name.into(),
            dim,
            strength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub seed: u64,
    pub modalities: Vec<SyntheticModality>,
    /// Number of cancer types drawn from (the first `projects` codes).
    pub projects: usize,
    /// Baseline hazard per day.
    pub base_rate: f64,
    /// Censoring times are uniform on `[1, censor_max_days]`.
    pub censor_max_days: f64,
}

impl SyntheticConfig {
    pub fn new(n: usize, seed: u64, modalities: Vec<SyntheticModality>) -> Self {
        Self {
            n,
            seed,
            modalities,
            projects: 6,
            base_rate: 1.0 / 1500.0,
            censor_max_days: 5000.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub dataset: CohortDataset,
    /// True log-hazard per patient, in dataset order.
    pub log_hazard: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCohort> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let m = config.modalities.len();
    let projects = config.projects.clamp(1, PROJECTS.len());

    let latent: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| normal(&mut rng)).collect())
        .collect();
    let log_hazard: Vec<f64> = (0..n)
        .map(|i| {
            config
                .modalities
                .iter()
                .zip(&latent)
                .map(|(spec, z)| spec.strength * z[i])
                .sum()
        })
        .collect();

    let mut embeddings = Vec::with_capacity(m);
    for (spec, z) in config.modalities.iter().zip(&latent) {
        let informative = spec.dim.div_ceil(2);
        let mut values = DMatrix::zeros(n, spec.dim);
        for i in 0..n {
            values[(i, 0)] = spec.strength * z[i];
            for j in 1..spec.dim {
                let noise = normal(&mut rng);
                values[(i, j)] = if j < informative {
                    z[i] + 0.5 * noise
                } else {
                    noise
                };
            }
        }
        embeddings.push((spec.name.clone(), values));
    }

    let width = (n.max(1) as f64).log10().floor() as usize + 1;
    let patients = (0..n)
        .map(|i| {
            let t_event =
                -(1.0 - rng.random::<f64>()).ln() / (config.base_rate * log_hazard[i].exp());
            let t_censor = rng.random_range(1.0..config.censor_max_days);
            let event = t_event <= t_censor;
            let duration = t_event
                .min(t_censor)
                .round()
                .clamp(1.0, f64::from(u32::MAX));
            let age_years = rng.random_range(18.0..90.0);
            PatientRecord {
                patient_id: format!("SYN-{i:0width$}"),
                project: Project::from_index(rng.random_range(0..projects)).expect("in range"),
                sex: Sex::ALL[rng.random_range(0..Sex::ALL.len())],
                race: Race::ALL[rng.random_range(0..Race::ALL.len())],
                ethnicity: Ethnicity::ALL[rng.random_range(0..Ethnicity::ALL.len())],
                age_at_diagnosis_days: (age_years * 365.25) as i64,
                outcome: SurvivalOutcome::new(duration as u32, event),
            }
        })
        .collect();

    // Ids are zero-padded, so generation order is already sorted order.
    let dataset = CohortDataset::with_tabular(patients, embeddings)?;
    Ok(SyntheticCohort {
        dataset,
        log_hazard,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Writes `dataset` as a loadable cohort: `clinical.csv`, one
/// `<modality>.csv` per embedding modality and `manifest.json`. Returns the
/// manifest path.
pub fn write_files(dataset: &CohortDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let clinical = dir.join("clinical.csv");
    let mut w = csv_writer(&clinical)?;
    w.write_record([
        "patient_id",
        "project",
        "sex",
        "race",
        "ethnicity",
        "age_at_diagnosis_days",
        "age_at_last_followup_days",
        "age_at_death_days",
        "vital_status",
    ])?;
    for p in &dataset.patients {
        let end = (p.age_at_diagnosis_days + i64::from(p.outcome.duration_days)).to_string();
        let (followup, death, vital) = if p.outcome.event {
            (String::new(), end, "Dead")
        } else {
            (end, String::new(), "Alive")
        };
        w.write_record([
            p.patient_id.as_str(),
            &format!("TCGA-{}", p.project.code()),
            p.sex.label(),
            p.race.label(),
            p.ethnicity.label(),
            &p.age_at_diagnosis_days.to_string(),
            &followup,
            &death,
            vital,
        ])?;
    }
    w.flush().map_err(|e| Error::io(&clinical, e))?;

    let mut modalities = BTreeMap::new();
    for (name, matrix) in &dataset.modalities {
        if matrix.kind != ModalityKind::Embedding {
            continue;
        }
        let file = format!("{name}.csv");
        let path = dir.join(&file);
        let mut w = csv_writer(&path)?;
        let mut header = vec!["patient_id".to_string(), "sample_id".to_string()];
        header.extend((0..matrix.dim()).map(|j| format!("e{j}")));
        w.write_record(&header)?;
        for (i, id) in matrix.patient_ids.iter().enumerate() {
            let mut row = vec![id.clone(), format!("{id}-S1")];
            row.extend(matrix.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        modalities.insert(name.clone(), PathBuf::from(file));
    }

    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest {
        clinical: PathBuf::from("clinical.csv"),
        modalities,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
