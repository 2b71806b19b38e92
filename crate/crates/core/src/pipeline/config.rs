use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cohort::ModalityKind;
use crate::coxph::{FitConfig, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::survmetrics::AucMean;

/// Target PCA dimension, or no reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PcaDim {
    Dim(usize),
    None,
}

/// PCA dimensions swept by default: doubling from 4 to 256.
pub const DEFAULT_PCA_DIMS: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];

impl fmt::Display for PcaDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PcaDim::Dim(q) => write!(f, "{q}"),
            PcaDim::None => f.write_str("none"),
        }
    }
}

impl std::str::FromStr for PcaDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(PcaDim::None);
        }
        match s.parse::<usize>() {
            Ok(q) if q > 0 => Ok(PcaDim::Dim(q)),
            _ => Err(Error::InvalidConfig(format!("invalid pca dim {s:?}"))),
        }
    }
}

impl Serialize for PcaDim {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PcaDim::Dim(q) => serializer.serialize_u64(*q as u64),
            PcaDim::None => serializer.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for PcaDim {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(usize),
            Token(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Number(0) => Err(serde::de::Error::custom("pca dim must be positive")),
            Repr::Number(q) => Ok(PcaDim::Dim(q)),
            Repr::Token(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub kind: ModalityKind,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, kind: ModalityKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Which modality combinations get a fusion model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ComboSelection {
    /// Every nonempty subset of the configured modalities.
    #[default]
    All,
    Explicit(Vec<Vec<String>>),
}

impl Serialize for ComboSelection {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ComboSelection::All => serializer.serialize_str("all"),
            ComboSelection::Explicit(list) => list.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for ComboSelection {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Token(String),
            List(Vec<Vec<String>>),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Token(t) if t == "all" => Ok(ComboSelection::All),
            Repr::Token(t) => Err(serde::de::Error::custom(format!(
                "combos must be \"all\" or a list of modality lists, got {t:?}"
            ))),
            Repr::List(list) => Ok(ComboSelection::Explicit(list)),
        }
    }
}

fn default_pca_dims() -> Vec<PcaDim> {
    DEFAULT_PCA_DIMS.iter().map(|&q| PcaDim::Dim(q)).collect()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_k() -> usize {
    5
}

fn default_interval() -> (f64, f64) {
    (365.0, 1825.0)
}

fn default_eval_points() -> usize {
    100
}

/// Experiment description, read from `exp.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Cohort manifest; relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Precomputed `splits.csv`; folds are generated from `k` and `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub modalities: Vec<ModalitySpec>,
    #[serde(default = "default_pca_dims")]
    pub pca_dims: Vec<PcaDim>,
    /// Per-modality dimension that replaces the swept one.
    #[serde(default)]
    pub pca_dim_overrides: BTreeMap<String, PcaDim>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub eval_interval_days: (f64, f64),
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    #[serde(default)]
    pub combos: ComboSelection,
    #[serde(default)]
    pub evaluate_on_train: bool,
    #[serde(default)]
    pub auc_mean: AucMean,
    #[serde(default)]
    pub fit: FitConfig,
}

impl ExperimentConfig {
    pub fn new(modalities: Vec<ModalitySpec>) -> Self {
        Self {
            manifest: None,
            splits: None,
            out_dir: None,
            modalities,
            pca_dims: default_pca_dims(),
            pca_dim_overrides: BTreeMap::new(),
            alpha: DEFAULT_ALPHA,
            k: default_k(),
            seed: 0,
            eval_interval_days: default_interval(),
            eval_points: default_eval_points(),
            combos: ComboSelection::All,
            evaluate_on_train: false,
            auc_mean: AucMean::default(),
            fit: FitConfig::default(),
        }
    }

    /// Reads a config; relative paths inside resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_reader(file)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for p in [
            &mut config.manifest,
            &mut config.splits,
            &mut config.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.modalities.is_empty() {
            return bad("no modalities configured".into());
        }
        if self.modalities.len() > 16 {
            return bad("at most 16 modalities are supported".into());
        }
        let names: BTreeSet<&str> = self.modalities.iter().map(|m| m.name.as_str()).collect();
        if names.len() != self.modalities.len() {
            return bad("duplicate modality names".into());
        }
        if self.pca_dims.is_empty() {
            return bad("pca_dims is empty".into());
        }
        let unique: BTreeSet<_> = self.pca_dims.iter().collect();
        if unique.len() != self.pca_dims.len() {
            return bad("duplicate pca_dims".into());
        }
        for name in self.pca_dim_overrides.keys() {
            match self.modalities.iter().find(|m| &m.name == name) {
                None => return bad(format!("pca_dim_overrides names unknown modality {name:?}")),
                Some(m) if m.kind == ModalityKind::TabularOneHot => {
                    return bad(format!("tabular modality {name:?} cannot take a pca dim"))
                }
                Some(_) => {}
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        let (start, end) = self.eval_interval_days;
        if !(start.is_finite() && end.is_finite() && start > 0.0 && start < end) {
            return bad(format!("invalid eval interval ({start}, {end})"));
        }
        if self.eval_points == 0 {
            return bad("eval_points must be positive".into());
        }
        if let ComboSelection::Explicit(list) = &self.combos {
            if list.is_empty() {
                return bad("combos list is empty".into());
            }
            for combo in list {
                let members: BTreeSet<&str> = combo.iter().map(String::as_str).collect();
                if combo.is_empty() || members.len() != combo.len() {
                    return bad(format!("invalid combo {combo:?}"));
                }
                if let Some(unknown) = members.iter().find(|m| !names.contains(*m)) {
                    return bad(format!("combo names unknown modality {unknown:?}"));
                }
            }
        }
        Ok(())
    }

    /// The PCA dimension a modality uses when the sweep is at `sweep`.
    pub fn effective_pca_dim(&self, modality: &ModalitySpec, sweep: PcaDim) -> PcaDim {
        match modality.kind {
            ModalityKind::TabularOneHot => PcaDim::None,
            ModalityKind::Embedding => {
                *self.pca_dim_overrides.get(&modality.name).unwrap_or(&sweep)
            }
        }
    }

    /// Combos as sorted index lists into `modalities`, ordered by size then
    /// lexicographically.
    pub fn resolve_combos(&self) -> Vec<Vec<usize>> {
        let mut combos: Vec<Vec<usize>> = match &self.combos {
            ComboSelection::All => {
                let m = self.modalities.len();
                (1u32..(1 << m))
                    .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
                    .collect()
            }
            ComboSelection::Explicit(list) => list
                .iter()
                .map(|combo| {
                    let mut idx: Vec<usize> = combo
                        .iter()
                        .map(|name| {
                            self.modalities
                                .iter()
                                .position(|m| &m.name == name)
                                .expect("validated")
                        })
                        .collect();
                    idx.sort_unstable();
                    idx
                })
                .collect(),
        };
        combos.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        combos.dedup();
        combos
    }

    pub fn combo_name(&self, combo: &[usize]) -> String {
        combo
            .iter()
            .map(|&i| self.modalities[i].name.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five() -> ExperimentConfig {
        ExperimentConfig::new(vec![
            ModalitySpec::new("demographic", ModalityKind::TabularOneHot),
            ModalitySpec::new("cancer_type", ModalityKind::TabularOneHot),
            ModalitySpec::new("histology", ModalityKind::Embedding),
            ModalitySpec::new("expression", ModalityKind::Embedding),
            ModalitySpec::new("report", ModalityKind::Embedding),
        ])
    }

    #[test]
    fn power_set_of_five_is_31() {
        let combos = five().resolve_combos();
        assert_eq!(combos.len(), 31);
        assert_eq!(combos[0], vec![0]);
        assert_eq!(combos[30], vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn default_sweep() {
        let cfg = five();
        let dims: Vec<String> = cfg.pca_dims.iter().map(|d| d.to_string()).collect();
        assert_eq!(dims, ["4", "8", "16", "32", "64", "128", "256"]);
    }

    #[test]
    fn json_round_trip_with_none_token() {
        let json = r#"{
            "modalities": [{"name": "histology", "kind": "embedding"},
                           {"name": "demographic", "kind": "tabular_onehot"}],
            "pca_dims": [4, "none"],
            "combos": [["histology", "demographic"]],
            "seed": 7
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.pca_dims, vec![PcaDim::Dim(4), PcaDim::None]);
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.resolve_combos(), vec![vec![0, 1]]);
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn tabular_never_reduced() {
        let mut cfg = five();
        assert_eq!(
            cfg.effective_pca_dim(&cfg.modalities[0].clone(), PcaDim::Dim(8)),
            PcaDim::None
        );
        assert_eq!(
            cfg.effective_pca_dim(&cfg.modalities[2].clone(), PcaDim::Dim(8)),
            PcaDim::Dim(8)
        );
        cfg.pca_dim_overrides
            .insert("demographic".into(), PcaDim::Dim(4));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = five();
        cfg.combos = ComboSelection::Explicit(vec![vec!["nope".into()]]);
        assert!(cfg.validate().is_err());
        let mut cfg = five();
        cfg.k = 1;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<PcaDim>("0").is_err());
        assert!(serde_json::from_str::<PcaDim>("\"bogus\"").is_err());
    }
}
