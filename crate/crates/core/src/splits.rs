//! Stratified k-fold assignment over the joint strata of age bin, sex, race,
//! ethnicity, mortality and cancer type.
//!
//! The joint strata are sparse, so the assignment is a greedy iterative
//! scheme: strata are visited from smallest to largest (ties by key), each
//! stratum's members are shuffled with a ChaCha8 generator seeded through
//! `rand`'s `seed_from_u64`, and members are dealt in rounds of `k`. Within a
//! round every member goes to a distinct fold, chosen as the least-filled
//! fold overall (ties to the lowest index). This keeps every stratum within
//! one member across folds and the global fold sizes within one of each
//! other.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{AgeBin, CohortDataset, Ethnicity, PatientRecord, Project, Race, Sex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey {
    pub age_bin: AgeBin,
    pub sex: Sex,
    pub race: Race,
    pub ethnicity: Ethnicity,
    pub event: bool,
    pub project: Project,
}

pub fn build_stratum_key(record: &PatientRecord) -> StratumKey {
    StratumKey {
        age_bin: record.age_bin(),
        sex: record.sex,
        race: record.race,
        ethnicity: record.ethnicity,
        event: record.outcome.event,
        project: record.project,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub k: usize,
    /// `None` when the plan was read back from a file.
    pub seed: Option<u64>,
    pub assignment: BTreeMap<String, usize>,
}

pub fn stratified_kfold(dataset: &CohortDataset, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyCohort);
    }
    if k > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds cohort size {}",
            dataset.len()
        )));
    }

    let mut strata: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, patient) in dataset.patients.iter().enumerate() {
        strata
            .entry(build_stratum_key(patient))
            .or_default()
            .push(i);
    }
    let mut strata: Vec<(StratumKey, Vec<usize>)> = strata.into_iter().collect();
    // Stable sort keeps key order among equal sizes.
    strata.sort_by_key(|(_, members)| members.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = vec![0usize; k];
    let mut fold_of = vec![usize::MAX; dataset.len()];
    let mut used = vec![false; k];
    for (_, mut members) in strata {
        members.shuffle(&mut rng);
        for round in members.chunks(k) {
            used.iter_mut().for_each(|u| *u = false);
            for &member in round {
                let fold = (0..k)
                    .filter(|&f| !used[f])
                    .min_by_key(|&f| (fill[f], f))
                    .expect("round never exceeds k");
                used[fold] = true;
                fill[fold] += 1;
                fold_of[member] = fold;
            }
        }
    }

    let assignment = dataset
        .patients
        .iter()
        .zip(fold_of)
        .map(|(p, f)| (p.patient_id.clone(), f))
        .collect();
    Ok(SplitPlan {
        k,
        seed: Some(seed),
        assignment,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    patient_id: String,
    fold: usize,
}

impl SplitPlan {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignment.get(patient_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Ensures the plan covers exactly the dataset's patients.
    pub fn check(&self, dataset: &CohortDataset) -> Result<()> {
        if self.assignment.len() != dataset.len() {
            return Err(Error::InvalidArgument(format!(
                "split plan covers {} patients, cohort has {}",
                self.assignment.len(),
                dataset.len()
            )));
        }
        for p in &dataset.patients {
            match self.fold_of(&p.patient_id) {
                Some(f) if f < self.k => {}
                Some(f) => {
                    return Err(Error::InvalidArgument(format!(
                        "fold {f} out of range for k = {}",
                        self.k
                    )))
                }
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "patient {} has no fold",
                        p.patient_id
                    )))
                }
            }
        }
        Ok(())
    }

    /// Row indices (into the dataset) of the train and test partitions for
    /// `fold`, both in cohort order.
    pub fn partition(&self, dataset: &CohortDataset, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, p) in dataset.patients.iter().enumerate() {
            if self.fold_of(&p.patient_id) == Some(fold) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        for (patient_id, &fold) in &self.assignment {
            writer.serialize(SplitRow {
                patient_id: patient_id.clone(),
                fold,
            })?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads `patient_id, fold` rows; `k` is one more than the largest fold.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let mut assignment = BTreeMap::new();
        for row in reader.deserialize::<SplitRow>() {
            let row = row?;
            if assignment
                .insert(row.patient_id.clone(), row.fold)
                .is_some()
            {
                return Err(Error::DuplicatePatient(row.patient_id));
            }
        }
        let k = assignment.values().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                message: "split file needs at least two folds".into(),
            });
        }
        Ok(Self {
            k,
            seed: None,
            assignment,
        })
    }
}
