use std::fs;

use mmsurv::cohort::{load_cohort, RejectReason};
use mmsurv::splits::{stratified_kfold, SplitPlan};
use mmsurv::synth::{generate, write_files, SyntheticConfig, SyntheticModality};
use mmsurv::Error;

#[test]
fn synthetic_files_load_back_identically() {
    let cohort = generate(&SyntheticConfig::new(
        40,
        9,
        vec![
            SyntheticModality::new("histology", 5, 1.0),
            SyntheticModality::new("report", 3, 0.5),
        ],
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_files(&cohort.dataset, dir.path()).unwrap();
    let loaded = load_cohort(&manifest).unwrap();
    assert!(loaded.rejections.is_empty());
    assert_eq!(loaded.dataset, cohort.dataset);
}

const HEADER: &str = "patient_id,project,sex,race,ethnicity,age_at_diagnosis_days,age_at_last_followup_days,age_at_death_days,vital_status\n";

fn write_cohort(dir: &std::path::Path, clinical_rows: &str, embedding: &str) -> std::path::PathBuf {
    fs::write(dir.join("clinical.csv"), format!("{HEADER}{clinical_rows}")).unwrap();
    fs::write(dir.join("histology.csv"), embedding).unwrap();
    let manifest = dir.join("manifest.json");
    fs::write(
        &manifest,
        r#"{"clinical": "clinical.csv", "modalities": {"histology": "histology.csv"}}"#,
    )
    .unwrap();
    manifest
}

#[test]
fn rejections_and_sample_averaging() {
    let dir = tempfile::tempdir().unwrap();
    let clinical = "\
P3,TCGA-LUAD,female,White,Not Hispanic or Latino,20000,20500,,Alive
P1,BRCA,Female,Asian,not reported,15000,,15400,Dead
P2,TCGA-KIRC,Male,White,Unknown,18000,,,Alive
P4,TCGA-GBM,Male,,,16000,,17000,Alive
P5,TCGA-GBM,Male,White,Unknown,16000,16000,,Alive
P6,TCGA-OV,Female,White,Unknown,21000,21400,,Alive
";
    let embedding = "\
patient_id,sample_id,e0,e1
P1,s1,1.0,2.0
P1,s2,3.0,4.0
P3,s1,0.5,0.5
P2,s1,9,9
";
    let manifest = write_cohort(dir.path(), clinical, embedding);
    let loaded = load_cohort(&manifest).unwrap();
    let ids: Vec<&str> = loaded.dataset.patient_ids();
    assert_eq!(ids, ["P1", "P3"]);
    let reasons: Vec<(String, RejectReason)> = loaded
        .rejections
        .iter()
        .map(|r| (r.patient_id.clone(), r.reason.clone()))
        .collect();
    assert_eq!(
        reasons,
        [
            ("P2".to_string(), RejectReason::NoEndpoint),
            ("P4".to_string(), RejectReason::InconsistentVitalStatus),
            ("P5".to_string(), RejectReason::NonpositiveDuration),
            (
                "P6".to_string(),
                RejectReason::MissingModality("histology".into())
            ),
        ]
    );
    let histology = loaded.dataset.modality("histology").unwrap();
    assert_eq!(
        histology.values.row(0).iter().copied().collect::<Vec<_>>(),
        [2.0, 3.0]
    );
    let p1 = &loaded.dataset.patients[0];
    assert_eq!((p1.outcome.duration_days, p1.outcome.event), (400, true));
    assert_eq!(
        loaded
            .dataset
            .modality("cancer_type")
            .unwrap()
            .values
            .row(0)
            .sum(),
        1.0
    );
}

#[test]
fn ragged_embedding_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_cohort(
        dir.path(),
        "P1,BRCA,Female,Asian,,15000,,15400,Dead\n",
        "patient_id,sample_id,e0,e1\nP1,s1,1.0\n",
    );
    let err = load_cohort(&manifest).unwrap_err();
    assert!(
        matches!(err.root(), Error::InconsistentDim { line: 2, .. }),
        "{err}"
    );
}

#[test]
fn duplicate_patient_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_cohort(
        dir.path(),
        "P1,BRCA,Female,Asian,,15000,,15400,Dead\nP1,BRCA,Female,Asian,,15000,,15400,Dead\n",
        "patient_id,sample_id,e0\nP1,s1,1.0\n",
    );
    assert!(matches!(
        load_cohort(&manifest),
        Err(Error::DuplicatePatient(_))
    ));
}

#[test]
fn split_file_round_trip_on_loaded_cohort() {
    let cohort = generate(&SyntheticConfig::new(
        60,
        4,
        vec![SyntheticModality::new("a", 4, 1.0)],
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_files(&cohort.dataset, dir.path()).unwrap();
    let ds = load_cohort(&manifest).unwrap().dataset;
    let plan = stratified_kfold(&ds, 5, 11).unwrap();
    let path = dir.path().join("splits.csv");
    plan.write_csv(&path).unwrap();
    let back = SplitPlan::read_csv(&path).unwrap();
    back.check(&ds).unwrap();
    assert_eq!(back.assignment, plan.assignment);
    for f in 0..5 {
        assert_eq!(back.partition(&ds, f), plan.partition(&ds, f));
    }
}
