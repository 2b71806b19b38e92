//! Experiment orchestration: per-fold unimodal Cox models, late fusion over
//! modality combinations, the PCA sweep and all result tables.

mod config;
mod output;

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ComboSelection, ExperimentConfig, ModalitySpec, PcaDim, DEFAULT_PCA_DIMS};
pub use output::{
    format_float, read_metrics_csv, summarize_per_cancer, write_outputs, write_summary,
    AggregateRow, PerCancerSummary,
};

use crate::cohort::{CohortDataset, ModalityKind, ModalityMatrix, Project, SurvivalOutcome};
use crate::coxph::{cox_fit, cox_risk, survival_matrix, CoxModel, FitConfig};
use crate::error::{Error, Result, ResultExt};
use crate::splits::SplitPlan;
use crate::survmetrics::{
    average_curves, brier_curve, concordance_index, cumulative_dynamic_auc_with, evaluation_grid,
    risk_stratify, StepFunction,
};
use crate::xform::{
    pca_apply, pca_fit, standardize_apply, standardize_fit, PcaModel, StandardizerParams,
};

/// Points on the `[0, end]` grid used for averaged KM curves.
pub const KM_GRID_POINTS: usize = 101;

/// Fitted transform chain and Cox model for one modality on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalModel {
    pub modality: String,
    pub kind: ModalityKind,
    /// Dimension actually used; always `None` for tabular modalities.
    pub pca_dim: PcaDim,
    /// A PCA dimension was requested for a tabular modality and ignored.
    pub pca_skipped: bool,
    pub standardizer: Option<StandardizerParams>,
    pub pca: Option<PcaModel>,
    pub cox: CoxModel,
}

impl UnimodalModel {
    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        transform(self.standardizer.as_ref(), self.pca.as_ref(), x)
    }

    pub fn risk(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        cox_risk(&self.cox, &self.features(x)?)
    }
}

fn transform(
    standardizer: Option<&StandardizerParams>,
    pca: Option<&PcaModel>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut z = match standardizer {
        Some(p) => standardize_apply(p, x)?,
        None => x.clone(),
    };
    if let Some(pca) = pca {
        z = pca_apply(pca, &z)?;
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalFit {
    pub model: UnimodalModel,
    pub train_risks: Vec<f64>,
    pub test_risks: Vec<f64>,
}

/// Fits one modality on `train` rows and scores both partitions.
///
/// Embeddings are standardized and then projected to `pca_dim` components;
/// tabular one-hot blocks enter the Cox model raw. `outcomes` is aligned with
/// the modality's rows.
pub fn train_unimodal(
    modality: &ModalityMatrix,
    outcomes: &[SurvivalOutcome],
    train: &[usize],
    test: &[usize],
    pca_dim: PcaDim,
    alpha: f64,
    fit: &FitConfig,
) -> Result<UnimodalFit> {
    let name = modality.name.clone();
    let inner = || -> Result<UnimodalFit> {
        if outcomes.len() != modality.values.nrows() {
            return Err(Error::DimensionMismatch {
                expected: modality.values.nrows(),
                found: outcomes.len(),
            });
        }
        let x_train = modality.select_rows(train);
        let x_test = modality.select_rows(test);
        let train_outcomes: Vec<SurvivalOutcome> = train.iter().map(|&i| outcomes[i]).collect();

        let (standardizer, pca, used_dim, pca_skipped) = match modality.kind {
            ModalityKind::TabularOneHot => {
                let skipped = pca_dim != PcaDim::None;
                if skipped {
                    warn!("modality {name}: tabular features are not reduced, ignoring pca dim {pca_dim}");
                }
                (None, None, PcaDim::None, skipped)
            }
            ModalityKind::Embedding => {
                let std = standardize_fit(&x_train)?;
                let pca = match pca_dim {
                    PcaDim::Dim(q) => Some(pca_fit(&standardize_apply(&std, &x_train)?, q)?),
                    PcaDim::None => None,
                };
                (Some(std), pca, pca_dim, false)
            }
        };
        let z_train = transform(standardizer.as_ref(), pca.as_ref(), &x_train)?;
        let cox = cox_fit(&z_train, &train_outcomes, alpha, fit)?;
        let model = UnimodalModel {
            modality: name.clone(),
            kind: modality.kind,
            pca_dim: used_dim,
            pca_skipped,
            standardizer,
            pca,
            cox,
        };
        Ok(UnimodalFit {
            train_risks: cox_risk(&model.cox, &z_train)?,
            test_risks: model.risk(&x_test)?,
            model,
        })
    };
    inner().context_with(|| format!("modality {name}"))
}

/// Cox model over z-scored unimodal risk scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub modality_names: Vec<String>,
    pub risk_standardizers: StandardizerParams,
    pub cox: CoxModel,
}

impl FusionModel {
    /// `risks` has one row per subject and one column per fused modality.
    pub fn features(&self, risks: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        standardize_apply(&self.risk_standardizers, risks)
    }

    pub fn risk(&self, risks: &DMatrix<f64>) -> Result<Vec<f64>> {
        cox_risk(&self.cox, &self.features(risks)?)
    }

    pub fn survival(&self, risks: &DMatrix<f64>, times: &[f64]) -> Result<DMatrix<f64>> {
        survival_matrix(&self.cox, &self.features(risks)?, times)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionFit {
    pub model: FusionModel,
    pub train_risks: Vec<f64>,
    pub test_risks: Vec<f64>,
}

/// Late fusion. Risk matrices hold one row per subject and one column per
/// modality, in `modality_names` order.
pub fn train_fusion(
    modality_names: Vec<String>,
    train_risks: &DMatrix<f64>,
    test_risks: &DMatrix<f64>,
    train_outcomes: &[SurvivalOutcome],
    alpha: f64,
    fit: &FitConfig,
) -> Result<FusionFit> {
    let m = modality_names.len();
    if m == 0 {
        return Err(Error::InvalidArgument(
            "fusion needs at least one modality".into(),
        ));
    }
    for found in [train_risks.ncols(), test_risks.ncols()] {
        if found != m {
            return Err(Error::DimensionMismatch { expected: m, found });
        }
    }
    let risk_standardizers = standardize_fit(train_risks)?;
    let z_train = standardize_apply(&risk_standardizers, train_risks)?;
    let cox = cox_fit(&z_train, train_outcomes, alpha, fit)?;
    let model = FusionModel {
        modality_names,
        risk_standardizers,
        cox,
    };
    Ok(FusionFit {
        train_risks: cox_risk(&model.cox, &z_train)?,
        test_risks: model.risk(test_risks)?,
        model,
    })
}

/// Hazard ratio per standard deviation of each fused risk score.
pub fn extract_hazard_ratios(fusion: &FusionModel) -> Vec<(String, f64)> {
    fusion
        .modality_names
        .iter()
        .zip(&fusion.cox.beta)
        .map(|(name, b)| (name.clone(), b.exp()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancerEval {
    /// `None` when the subset has no comparable pair.
    pub c_index: Option<f64>,
    pub n: usize,
    pub n_events: usize,
}

pub fn evaluate_per_cancer(
    test_outcomes: &[SurvivalOutcome],
    test_risks: &[f64],
    projects: &[Project],
) -> Result<BTreeMap<Project, CancerEval>> {
    if test_outcomes.len() != test_risks.len() || projects.len() != test_risks.len() {
        return Err(Error::DimensionMismatch {
            expected: test_outcomes.len(),
            found: test_risks.len().min(projects.len()),
        });
    }
    let mut groups: BTreeMap<Project, Vec<usize>> = BTreeMap::new();
    for (i, p) in projects.iter().enumerate() {
        groups.entry(*p).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(project, idx)| {
            let outcomes: Vec<SurvivalOutcome> = idx.iter().map(|&i| test_outcomes[i]).collect();
            let risks: Vec<f64> = idx.iter().map(|&i| test_risks[i]).collect();
            let c_index = match concordance_index(&outcomes, &risks) {
                Ok(c) => Some(c.c_index),
                Err(Error::NotComputable(_)) => None,
                Err(e) => return Err(e),
            };
            let n_events = outcomes.iter().filter(|o| o.event).count();
            Ok((
                project,
                CancerEval {
                    c_index,
                    n: outcomes.len(),
                    n_events,
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub fold: usize,
    pub modality_combo: String,
    pub pca_dim: PcaDim,
    /// `NaN` when not computable on the split.
    pub c_index: f64,
    pub mean_auc: f64,
    pub ibs: f64,
    pub n_comparable: u64,
}

/// Per-fold metrics, ordered by pca dim, combo, then fold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerCancerRow {
    pub fold: usize,
    pub modality_combo: String,
    pub pca_dim: PcaDim,
    pub project: Project,
    pub eval: CancerEval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardRatioRow {
    pub pca_dim: PcaDim,
    pub modality_combo: String,
    pub modality: String,
    /// One entry per fold.
    pub per_fold: Vec<f64>,
}

impl HazardRatioRow {
    pub fn mean(&self) -> f64 {
        self.per_fold.iter().sum::<f64>() / self.per_fold.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmCurveRow {
    pub modality_combo: String,
    pub pca_dim: PcaDim,
    /// `low` or `high`.
    pub group: &'static str,
    pub time: f64,
    pub mean_survival: f64,
    pub std_survival: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitRow {
    pub fold: usize,
    pub model: String,
    pub pca_dim: PcaDim,
    pub train_c_index: f64,
    pub test_c_index: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub metrics: ResultTable,
    pub per_cancer: Vec<PerCancerRow>,
    pub hazard_ratios: Vec<HazardRatioRow>,
    pub km_curves: Vec<KmCurveRow>,
    /// Empty unless train-split evaluation was requested.
    pub overfitting: Vec<OverfitRow>,
}

struct ComboOutcome {
    metrics: MetricRow,
    per_cancer: Vec<(Project, CancerEval)>,
    hazard_ratios: Vec<f64>,
    groups: Option<(StepFunction, StepFunction)>,
    train_c_index: f64,
}

fn c_index_or_nan(outcomes: &[SurvivalOutcome], risks: &[f64]) -> Result<(f64, u64)> {
    match concordance_index(outcomes, risks) {
        Ok(c) => Ok((c.c_index, c.n_comparable)),
        Err(Error::NotComputable(_)) => Ok((f64::NAN, 0)),
        Err(e) => Err(e),
    }
}

fn nan_if_not_computable(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(Error::NotComputable(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

struct FoldContext<'a> {
    config: &'a ExperimentConfig,
    train_outcomes: Vec<SurvivalOutcome>,
    test_outcomes: Vec<SurvivalOutcome>,
    test_projects: Vec<Project>,
    /// Evaluation times strictly inside the test follow-up range.
    grid: Vec<f64>,
}

impl FoldContext<'_> {
    fn evaluate_combo(
        &self,
        fold: usize,
        pca_dim: PcaDim,
        combo: &[usize],
        unimodal: &[UnimodalFit],
    ) -> Result<ComboOutcome> {
        let config = self.config;
        let name = config.combo_name(combo);
        let gather = |pick: fn(&UnimodalFit) -> &Vec<f64>, n: usize| {
            DMatrix::from_fn(n, combo.len(), |i, j| pick(&unimodal[combo[j]])[i])
        };
        let train_risks = gather(|u| &u.train_risks, self.train_outcomes.len());
        let test_risks = gather(|u| &u.test_risks, self.test_outcomes.len());
        let names = combo
            .iter()
            .map(|&i| config.modalities[i].name.clone())
            .collect();
        let fusion = train_fusion(
            names,
            &train_risks,
            &test_risks,
            &self.train_outcomes,
            config.alpha,
            &config.fit,
        )?;

        let (c_index, n_comparable) = c_index_or_nan(&self.test_outcomes, &fusion.test_risks)?;
        let (mean_auc, ibs) = if self.grid.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let auc = nan_if_not_computable(
                cumulative_dynamic_auc_with(
                    &self.train_outcomes,
                    &self.test_outcomes,
                    &fusion.test_risks,
                    &self.grid,
                    config.auc_mean,
                )
                .map(|c| c.mean_auc),
            )?;
            let surv = fusion.model.survival(&test_risks, &self.grid)?;
            let ibs = nan_if_not_computable(
                brier_curve(&self.train_outcomes, &self.test_outcomes, &surv, &self.grid)
                    .map(|b| b.ibs),
            )?;
            (auc, ibs)
        };
        let per_cancer =
            evaluate_per_cancer(&self.test_outcomes, &fusion.test_risks, &self.test_projects)?
                .into_iter()
                .collect();
        let groups = match risk_stratify(&fusion.test_risks, &self.test_outcomes) {
            Ok(g) => Some((g.low_curve, g.high_curve)),
            Err(Error::DegenerateStratification) | Err(Error::InvalidArgument(_)) => {
                warn!("fold {fold}, {name}, pca {pca_dim}: risk groups not separable");
                None
            }
            Err(e) => return Err(e),
        };
        let train_c_index = if config.evaluate_on_train {
            c_index_or_nan(&self.train_outcomes, &fusion.train_risks)?.0
        } else {
            f64::NAN
        };
        Ok(ComboOutcome {
            metrics: MetricRow {
                fold,
                modality_combo: name,
                pca_dim,
                c_index,
                mean_auc,
                ibs,
                n_comparable,
            },
            per_cancer,
            hazard_ratios: extract_hazard_ratios(&fusion.model)
                .into_iter()
                .map(|(_, hr)| hr)
                .collect(),
            groups,
            train_c_index,
        })
    }
}

fn run_fold(
    config: &ExperimentConfig,
    dataset: &CohortDataset,
    plan: &SplitPlan,
    combos: &[Vec<usize>],
    pca_dim: PcaDim,
    fold: usize,
) -> Result<Vec<ComboOutcome>> {
    let (train, test) = plan.partition(dataset, fold);
    let outcomes = dataset.outcomes();
    let test_outcomes: Vec<SurvivalOutcome> = test.iter().map(|&i| outcomes[i]).collect();
    let min = test_outcomes
        .iter()
        .map(|o| o.time())
        .fold(f64::INFINITY, f64::min);
    let max = test_outcomes
        .iter()
        .map(|o| o.time())
        .fold(f64::NEG_INFINITY, f64::max);
    let (start, end) = config.eval_interval_days;
    let grid = evaluation_grid(start, end, config.eval_points)
        .into_iter()
        .filter(|&t| t > min && t < max)
        .collect();

    let unimodal: Vec<UnimodalFit> = config
        .modalities
        .par_iter()
        .map(|spec| {
            let matrix = dataset.modality(&spec.name)?;
            train_unimodal(
                matrix,
                &outcomes,
                &train,
                &test,
                config.effective_pca_dim(spec, pca_dim),
                config.alpha,
                &config.fit,
            )
        })
        .collect::<Result<_>>()?;

    let ctx = FoldContext {
        config,
        train_outcomes: train.iter().map(|&i| outcomes[i]).collect(),
        test_projects: test.iter().map(|&i| dataset.patients[i].project).collect(),
        test_outcomes,
        grid,
    };
    combos
        .par_iter()
        .map(|combo| {
            ctx.evaluate_combo(fold, pca_dim, combo, &unimodal)
                .context_with(|| format!("combo {}", config.combo_name(combo)))
        })
        .collect()
}

fn check_inputs(
    config: &ExperimentConfig,
    dataset: &CohortDataset,
    plan: &SplitPlan,
) -> Result<()> {
    config.validate()?;
    plan.check(dataset)?;
    if plan.k != config.k {
        return Err(Error::InvalidConfig(format!(
            "split plan has {} folds, config asks for {}",
            plan.k, config.k
        )));
    }
    for spec in &config.modalities {
        let matrix = dataset.modality(&spec.name)?;
        if matrix.kind != spec.kind {
            return Err(Error::InvalidConfig(format!(
                "modality {} is configured as {:?} but loaded as {:?}",
                spec.name, spec.kind, matrix.kind
            )));
        }
    }
    Ok(())
}

/// Runs every fold at every swept PCA dimension and assembles the tables.
/// Folds and dimensions run in parallel; results are merged in a fixed
/// order so the output does not depend on scheduling.
pub fn run_experiment(
    config: &ExperimentConfig,
    dataset: &CohortDataset,
    plan: &SplitPlan,
) -> Result<ExperimentOutput> {
    check_inputs(config, dataset, plan)?;
    let combos = config.resolve_combos();
    let k = plan.k;
    let jobs: Vec<(PcaDim, usize)> = config
        .pca_dims
        .iter()
        .flat_map(|&d| (0..k).map(move |f| (d, f)))
        .collect();
    let results: Vec<Vec<ComboOutcome>> = jobs
        .par_iter()
        .map(|&(dim, fold)| {
            run_fold(config, dataset, plan, &combos, dim, fold)
                .context_with(|| format!("fold {fold}, pca dim {dim}"))
        })
        .collect::<Result<_>>()?;

    let mut out = ExperimentOutput::default();
    let km_grid = evaluation_grid(0.0, config.eval_interval_days.1, KM_GRID_POINTS);
    for (d, &dim) in config.pca_dims.iter().enumerate() {
        let fold_results = &results[d * k..(d + 1) * k];
        for (c, combo) in combos.iter().enumerate() {
            let name = config.combo_name(combo);
            let mut low = Vec::new();
            let mut high = Vec::new();
            for (fold, per_combo) in fold_results.iter().enumerate() {
                let r = &per_combo[c];
                out.metrics.rows.push(r.metrics.clone());
                out.per_cancer
                    .extend(r.per_cancer.iter().map(|(project, eval)| PerCancerRow {
                        fold,
                        modality_combo: name.clone(),
                        pca_dim: dim,
                        project: *project,
                        eval: *eval,
                    }));
                if config.evaluate_on_train {
                    out.overfitting.push(OverfitRow {
                        fold,
                        model: name.clone(),
                        pca_dim: dim,
                        train_c_index: r.train_c_index,
                        test_c_index: r.metrics.c_index,
                    });
                }
                if let Some((l, h)) = &r.groups {
                    low.push(l.clone());
                    high.push(h.clone());
                }
            }
            for (j, &m) in combo.iter().enumerate() {
                out.hazard_ratios.push(HazardRatioRow {
                    pca_dim: dim,
                    modality_combo: name.clone(),
                    modality: config.modalities[m].name.clone(),
                    per_fold: fold_results.iter().map(|r| r[c].hazard_ratios[j]).collect(),
                });
            }
            for (group, curves) in [("low", &low), ("high", &high)] {
                if curves.is_empty() {
                    continue;
                }
                let (mean, std) = average_curves(curves, &km_grid)?;
                for ((&time, mean_survival), std_survival) in km_grid.iter().zip(mean).zip(std) {
                    out.km_curves.push(KmCurveRow {
                        modality_combo: name.clone(),
                        pca_dim: dim,
                        group,
                        time,
                        mean_survival,
                        std_survival,
                    });
                }
            }
        }
    }
    Ok(out)
}

impl ResultTable {
    /// Confirms every `(combo, pca_dim)` pair has exactly one row per fold.
    pub fn check_complete(&self, k: usize) -> Result<()> {
        let mut seen: BTreeMap<(String, PcaDim), Vec<usize>> = BTreeMap::new();
        for row in &self.rows {
            seen.entry((row.modality_combo.clone(), row.pca_dim))
                .or_default()
                .push(row.fold);
        }
        for ((combo, dim), mut folds) in seen {
            folds.sort_unstable();
            if folds != (0..k).collect::<Vec<_>>() {
                return Err(Error::InvalidArgument(format!(
                    "{combo} at pca dim {dim} has folds {folds:?}, expected 0..{k}"
                )));
            }
        }
        Ok(())
    }

    /// Cross-fold means per `(combo, pca_dim)`, in first-appearance order.
    /// Folds where a metric is not computable are left out of its mean.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut order: Vec<(String, PcaDim)> = Vec::new();
        let mut groups: BTreeMap<(String, PcaDim), Vec<&MetricRow>> = BTreeMap::new();
        for row in &self.rows {
            let key = (row.modality_combo.clone(), row.pca_dim);
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(row);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let stat = |f: fn(&MetricRow) -> f64| {
                    let vals: Vec<f64> = rows
                        .iter()
                        .map(|r| f(r))
                        .filter(|v| v.is_finite())
                        .collect();
                    if vals.is_empty() {
                        return (f64::NAN, f64::NAN);
                    }
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                };
                let (c_index, c_index_std) = stat(|r| r.c_index);
                AggregateRow {
                    modality_combo: key.0,
                    pca_dim: key.1,
                    n_folds: rows.len(),
                    c_index,
                    c_index_std,
                    mean_auc: stat(|r| r.mean_auc).0,
                    ibs: stat(|r| r.ibs).0,
                }
            })
            .collect()
    }
}
