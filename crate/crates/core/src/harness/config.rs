use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Architecture;
use crate::baselines::BaselineVariant;
use crate::error::{Error, Result};
use crate::hierarchy::{GammaBounds, HierarchyConfig, RouteOn, Variant};
use crate::metalearn::MetaConfig;
use crate::tasks::{Nonlinearity, RegimeSpec, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BaselineA,
    BaselineB,
    BaselineC,
    OriginMaml,
    TransferMaml,
    ConditionMaml,
    AdaptiveMamlA,
    AdaptiveMamlB,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::BaselineA,
        Method::BaselineB,
        Method::BaselineC,
        Method::OriginMaml,
        Method::TransferMaml,
        Method::ConditionMaml,
        Method::AdaptiveMamlA,
        Method::AdaptiveMamlB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BaselineA => "baseline-a",
            Method::BaselineB => "baseline-b",
            Method::BaselineC => "baseline-c",
            Method::OriginMaml => "origin-maml",
            Method::TransferMaml => "transfer-maml",
            Method::ConditionMaml => "condition-maml",
            Method::AdaptiveMamlA => "adaptive-maml-a",
            Method::AdaptiveMamlB => "adaptive-maml-b",
        }
    }

    pub fn baseline(self) -> Option<BaselineVariant> {
        match self {
            Method::BaselineA => Some(BaselineVariant::A),
            Method::BaselineB => Some(BaselineVariant::B),
            Method::BaselineC => Some(BaselineVariant::C),
            _ => None,
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::AdaptiveMamlA => Some(Variant::A),
            Method::AdaptiveMamlB => Some(Variant::B),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::config("method", format!("unknown method `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

/// Inputs for `source = "csv"`. Relative paths resolve against the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub pretrain: Option<PathBuf>,
    pub descriptor: Option<PathBuf>,
    /// Descriptor of the pretraining CSV when its k and l differ.
    pub pretrain_descriptor: Option<PathBuf>,
    /// Optional `task_id,regime` sidecar.
    pub regimes: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticConfig,
    pub csv: CsvPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// LSTM hidden size H.
    pub hidden: usize,
    /// Tanh head widths before the scalar output; `[H]` when absent.
    pub head: Option<Vec<usize>>,
    /// Pretrained model file; `<out>/pretrained.bin` when absent.
    pub pretrained: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            head: None,
            pretrained: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of pretraining tasks held out for the reported R².
    pub holdout_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            lr: 0.005,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySection {
    pub max_splits: usize,
    pub a: f64,
    pub b: f64,
    pub route_on: RouteOn,
    /// Overrides the variant's inner-epoch count (A: 3, B: 1).
    pub inner_epochs: Option<usize>,
}

impl Default for HierarchySection {
    fn default() -> Self {
        let bounds = GammaBounds::default();
        Self {
            max_splits: 3,
            a: bounds.a,
            b: bounds.b,
            route_on: RouteOn::Query,
            inner_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionConfig {
    pub clusters: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self { clusters: 4 }
    }
}

/// One experiment. `seed` drives every random stream: it replaces
/// `data.synthetic.seed` and `meta.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub meta: MetaConfig,
    pub hierarchy: HierarchySection,
    pub condition: ConditionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::AdaptiveMamlB,
            seed: 0,
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            meta: MetaConfig::default(),
            hierarchy: HierarchySection::default(),
            condition: ConditionConfig::default(),
        }
    }
}

fn two_regime_synthetic() -> SyntheticConfig {
    SyntheticConfig {
        rows: 10,
        cols: 8,
        test_fraction: 0.25,
        seq_len: 8,
        n_features: 6,
        regimes: vec![
            RegimeSpec::new(0.75, Nonlinearity::Linear),
            RegimeSpec {
                offset: -1.0,
                feature_shift: 1.0,
                ..RegimeSpec::new(0.25, Nonlinearity::Sin { freq: 2.0, phase: 0.5 })
            },
        ],
        pretrain_weight_gap: 0.4,
        ..SyntheticConfig::default()
    }
}

impl ExperimentConfig {
    /// 10×8 grid, a linear majority regime and a shifted sinusoidal minority
    /// block; 60 train and 20 test tasks.
    pub fn two_regime_benchmark() -> Self {
        let mut cfg = Self::default();
        cfg.data.synthetic = two_regime_synthetic();
        cfg.model.hidden = 8;
        cfg.meta.task_batch_size = 4;
        cfg
    }

    /// The two-regime benchmark with the minority regime removed.
    pub fn single_regime_benchmark() -> Self {
        let mut cfg = Self::two_regime_benchmark();
        cfg.data.synthetic.regimes = vec![RegimeSpec::new(1.0, Nonlinearity::Linear)];
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start].lines().last().unwrap_or("").trim().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "config".to_string());
            Error::config(field, e.message().to_string())
        })
    }

    /// Parses a config file and resolves CSV paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let csv = &mut cfg.data.csv;
        for p in [
            &mut csv.train,
            &mut csv.test,
            &mut csv.pretrain,
            &mut csv.descriptor,
            &mut csv.pretrain_descriptor,
            &mut csv.regimes,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut cfg.model.pretrained {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy with the top-level seed pushed into every nested seed field.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        cfg.data.synthetic.seed = cfg.seed;
        cfg.meta.seed = cfg.seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.hidden == 0 {
            return Err(Error::config("model.hidden", "must be positive"));
        }
        if let Some(head) = &self.model.head {
            if head.contains(&0) {
                return Err(Error::config("model.head", "widths must be positive"));
            }
        }
        let p = &self.pretrain;
        if p.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be positive"));
        }
        if !(p.lr >= 0.0 && p.lr.is_finite()) {
            return Err(Error::config("pretrain.lr", "must be a finite value ≥ 0"));
        }
        if !(p.holdout_fraction > 0.0 && p.holdout_fraction < 1.0) {
            return Err(Error::config("pretrain.holdout_fraction", "must lie in (0, 1)"));
        }
        if self.condition.clusters == 0 {
            return Err(Error::config("condition.clusters", "must be positive"));
        }
        if self.hierarchy.inner_epochs == Some(0) {
            return Err(Error::config("hierarchy.inner_epochs", "must be positive"));
        }
        self.meta.validate()?;
        self.hierarchy_config(Variant::B).validate()?;
        match self.data.source {
            DataSource::Synthetic => self.data.synthetic.validate()?,
            DataSource::Csv => {
                let csv = &self.data.csv;
                let required = [("data.csv.train", &csv.train), ("data.csv.test", &csv.test), ("data.csv.descriptor", &csv.descriptor)];
                for (field, path) in required {
                    match path {
                        None => return Err(Error::config(field, "required when data.source = \"csv\"")),
                        Some(p) if !p.exists() => {
                            return Err(Error::config(field, format!("{} does not exist", p.display())))
                        }
                        _ => {}
                    }
                }
                let optional = [
                    ("data.csv.pretrain", &csv.pretrain),
                    ("data.csv.pretrain_descriptor", &csv.pretrain_descriptor),
                    ("data.csv.regimes", &csv.regimes),
                ];
                for (field, path) in optional {
                    if let Some(p) = path {
                        if !p.exists() {
                            return Err(Error::config(field, format!("{} does not exist", p.display())));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Meta-learning settings with the run seed applied.
    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            seed: self.seed,
            ..self.meta.clone()
        }
    }

    pub fn hierarchy_config(&self, variant: Variant) -> HierarchyConfig {
        let mut h = HierarchyConfig::new(variant, self.meta_config());
        h.max_splits = self.hierarchy.max_splits;
        h.bounds = GammaBounds {
            a: self.hierarchy.a,
            b: self.hierarchy.b,
        };
        h.route_on = self.hierarchy.route_on;
        if let Some(n) = self.hierarchy.inner_epochs {
            h.meta.inner_epochs = n;
        }
        h
    }

    pub fn architecture(&self, n_features: usize, seq_len: usize) -> Result<Architecture> {
        let hidden = self.model.hidden;
        let head = self.model.head.clone().unwrap_or_else(|| vec![hidden]);
        Architecture::new(n_features, seq_len, hidden, &head)
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.model
            .pretrained
            .clone()
            .unwrap_or_else(|| self.out.join("pretrained.bin"))
    }

    /// Hex SHA-256 of the resolved config, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut cfg = self.resolved();
        cfg.out = PathBuf::new();
        let bytes = serde_json::to_vec(&cfg).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_paper_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.meta.task_batch_size, 32);
        assert_eq!(cfg.meta.outer_lr, 0.001);
        assert_eq!(cfg.meta.outer_epochs, 30);
        assert_eq!((cfg.hierarchy.a, cfg.hierarchy.b, cfg.hierarchy.max_splits), (0.35, 0.65, 3));
        assert_eq!(cfg.condition.clusters, 4);
        assert_eq!(cfg.hierarchy_config(Variant::A).meta.inner_epochs, 3);
        assert_eq!(cfg.hierarchy_config(Variant::B).meta.inner_epochs, 1);
    }

    #[test]
    fn dotted_keys_override_fields() {
        let cfg = ExperimentConfig::from_toml(
            "method = \"origin-maml\"\nmeta.adaptation_steps = 2\nhierarchy.route_on = \"support-holdout\"\ndata.synthetic.rows = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::OriginMaml);
        assert_eq!(cfg.meta.adaptation_steps, 2);
        assert_eq!(cfg.hierarchy.route_on, RouteOn::SupportHoldout);
        assert_eq!(cfg.data.synthetic.rows, 4);
    }

    #[test]
    fn unknown_keys_and_methods_are_config_errors() {
        for text in ["meta.bogus = 1", "method = \"maml++\""] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config { .. })), "{text}");
        }
        assert!("adaptive-maml-c".parse::<Method>().is_err());
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn invalid_fraction_names_the_field() {
        let cfg = ExperimentConfig::from_toml("data.synthetic.test_fraction = 1.5").unwrap();
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "test_fraction"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = ExperimentConfig::two_regime_benchmark();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let mut moved = cfg.clone();
        moved.out = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), cfg.hash());
        let mut reseeded = cfg.clone();
        reseeded.seed = 1;
        assert_ne!(reseeded.hash(), cfg.hash());
    }

    #[test]
    fn benchmark_presets_match_shipped_files() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let two = ExperimentConfig::load(&dir.join("two_regime.toml")).unwrap();
        assert_eq!(two, ExperimentConfig::two_regime_benchmark());
        let one = ExperimentConfig::load(&dir.join("single_regime.toml")).unwrap();
        assert_eq!(one, ExperimentConfig::single_regime_benchmark());
    }
}
