//! Layered run configuration: defaults, then configuration files, then
//! `--set key=value` pairs, then the output-root environment variable, then
//! command-line flags.

use std::path::Path;

use lungxai::datapipe::{PreprocessConfig, SmoteConfig, SplitSpec, SyntheticSpec};
use lungxai::dense::{DenseBackbone, DenseBranchConfig, FocalLossConfig, TrainConfig};
use lungxai::svm::{ExtractorConfig, ExtractorKind, GridCell, KernelSpec};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const OUT_ENV: &str = "LUNGXAI_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Dense,
    Svm,
    Both,
}

impl Branch {
    pub fn expand(self) -> Vec<Branch> {
        match self {
            Branch::Both => vec![Branch::Dense, Branch::Svm],
            b => vec![b],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Dense => "dense",
            Branch::Svm => "svm",
            Branch::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gradcam,
    Shap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub branch: Branch,
    /// Parent directory of run directories.
    pub out_dir: String,
    pub data: DataSection,
    pub preprocess: PreprocessSection,
    pub split: SplitSection,
    pub smote: SmoteSection,
    pub dense: DenseSection,
    pub svm: SvmSection,
    pub explain: ExplainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            branch: Branch::Both,
            out_dir: "runs".into(),
            data: DataSection::default(),
            preprocess: PreprocessSection::default(),
            split: SplitSection::default(),
            smote: SmoteSection::default(),
            dense: DenseSection::default(),
            svm: SvmSection::default(),
            explain: ExplainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `<root>/<class>/*.png`; unused when `synthetic` is set.
    pub root: String,
    pub synthetic: bool,
    pub generator: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: String::new(),
            synthetic: false,
            generator: SyntheticSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub separability: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            classes: s.classes,
            per_class: s.per_class,
            size: s.size,
            separability: s.separability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    /// Square side every image is resized to.
    pub size: usize,
    pub replicate_channels: bool,
    pub grayscale_weights: [f64; 3],
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let p = PreprocessConfig::default();
        Self {
            size: p.target_size.0,
            replicate_channels: p.replicate_channels,
            grayscale_weights: p.grayscale_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    /// Share of the training portion held out for validation; 0 disables.
    pub val_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteSection {
    pub k_neighbors: usize,
}

impl Default for SmoteSection {
    fn default() -> Self {
        Self { k_neighbors: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseSection {
    pub backbone: DenseBackbone,
    pub input_size: usize,
    pub freeze_backbone: bool,
    pub se_ratio: usize,
    pub pyramid_channels: usize,
    pub fpn_levels: usize,
    /// Pretrained backbone weights (safetensors); empty keeps random init.
    pub weights: String,
    pub smote: bool,
    pub gamma: f64,
    /// Per-class focal weights; empty means inverse class frequency.
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DenseSection {
    fn default() -> Self {
        let m = DenseBranchConfig::default();
        let t = TrainConfig::default();
        Self {
            backbone: m.backbone,
            input_size: m.input_size,
            freeze_backbone: m.freeze_backbone,
            se_ratio: m.se_ratio,
            pyramid_channels: m.pyramid_channels,
            fpn_levels: m.fpn_levels,
            weights: String::new(),
            smote: true,
            gamma: 2.0,
            alpha: Vec::new(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub extractor: ExtractorKind,
    pub input_size: usize,
    /// Pretrained extractor weights (safetensors); empty keeps random init.
    pub weights: String,
    pub smote: bool,
    pub kernels: Vec<String>,
    pub c_grid: Vec<f64>,
    /// RBF width; omitted means `1 / (D var(X))`.
    pub gamma: Option<f64>,
    pub folds: usize,
}

impl Default for SvmSection {
    fn default() -> Self {
        let e = ExtractorConfig::default();
        Self {
            extractor: e.kind,
            input_size: e.input_size,
            weights: String::new(),
            smote: true,
            kernels: vec!["linear".into(), "rbf".into()],
            c_grid: lungxai::svm::DEFAULT_C_GRID.to_vec(),
            gamma: None,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub method: Method,
    pub split: String,
    pub count: usize,
    /// Dense-branch Grad-CAM layer: backbone, se or fpn.
    pub layer: String,
    pub opacity: f64,
    /// Kernel SHAP coalition budget; omitted means `2 D + 2048`.
    pub shap_samples: Option<usize>,
    /// Number of k-means centroids summarising the training features.
    pub background_k: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            method: Method::Gradcam,
            split: "test".into(),
            count: 3,
            layer: "fpn".into(),
            opacity: 0.4,
            shap_samples: None,
            background_k: 50,
        }
    }
}

/// Values given as dedicated command-line flags.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub branch: Option<Branch>,
    pub synthetic: bool,
    pub out: Option<String>,
    pub method: Option<Method>,
    pub count: Option<usize>,
    pub split: Option<String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| usage(format!("config {} is not valid TOML: {e}", path.display())))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("bad key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(usage(format!("{key}: {p} is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn apply_set(table: &mut Table, pair: &str) -> CliResult<()> {
    let (k, v) = pair
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects key=value, got {pair:?}")))?;
    set_path(table, k.trim(), parse_value(v.trim()))
}

/// Resolves the effective configuration. `files` are merged in order, so
/// later files win.
pub fn resolve(files: &[&Path], sets: &[String], env_out: Option<String>, flags: &FlagOverrides) -> CliResult<RunConfig> {
    let mut table = Table::try_from(RunConfig::default()).expect("defaults serialize");
    for f in files {
        merge(&mut table, read_table(f)?);
    }
    for s in sets {
        apply_set(&mut table, s)?;
    }
    if let Some(out) = env_out.filter(|s| !s.is_empty()) {
        table.insert("out_dir".into(), Value::String(out));
    }
    if let Some(seed) = flags.seed {
        let seed = i64::try_from(seed).map_err(|_| usage("seed must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    if let Some(b) = flags.branch {
        table.insert("branch".into(), Value::String(b.name().into()));
    }
    if flags.synthetic {
        set_path(&mut table, "data.synthetic", Value::Boolean(true))?;
    }
    if let Some(out) = &flags.out {
        table.insert("out_dir".into(), Value::String(out.clone()));
    }
    if let Some(m) = flags.method {
        let name = match m {
            Method::Gradcam => "gradcam",
            Method::Shap => "shap",
        };
        set_path(&mut table, "explain.method", Value::String(name.into()))?;
    }
    if let Some(c) = flags.count {
        set_path(&mut table, "explain.count", Value::Integer(c as i64))?;
    }
    if let Some(s) = &flags.split {
        set_path(&mut table, "explain.split", Value::String(s.clone()))?;
    }
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.preprocess_config().validate()?;
        let s = &self.split;
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            return Err(usage(format!("split.train_fraction {} must lie in (0, 1)", s.train_fraction)));
        }
        if !(0.0..1.0).contains(&s.val_fraction) {
            return Err(usage(format!("split.val_fraction {} must lie in [0, 1)", s.val_fraction)));
        }
        if self.smote.k_neighbors == 0 {
            return Err(usage("smote.k_neighbors must be positive"));
        }
        let d = &self.dense;
        if d.batch_size == 0 || !(d.learning_rate > 0.0) || !(d.gamma >= 0.0) {
            return Err(usage("dense.batch_size, dense.learning_rate must be positive and dense.gamma non-negative"));
        }
        self.svm_grid()?;
        if self.svm.folds < 2 {
            return Err(usage(format!("svm.folds must be at least 2, got {}", self.svm.folds)));
        }
        split_name(&self.explain.split)?;
        if !(0.0..=1.0).contains(&self.explain.opacity) {
            return Err(usage(format!("explain.opacity {} must lie in [0, 1]", self.explain.opacity)));
        }
        if self.explain.count == 0 || self.explain.background_k == 0 {
            return Err(usage("explain.count and explain.background_k must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        let p = &self.preprocess;
        PreprocessConfig {
            target_size: (p.size, p.size),
            replicate_channels: p.replicate_channels,
            grayscale_weights: p.grayscale_weights,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let g = &self.data.generator;
        SyntheticSpec {
            classes: g.classes,
            per_class: g.per_class,
            size: g.size,
            separability: g.separability,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.train_fraction,
            seed: self.seed,
            stratified: self.split.stratified,
        }
    }

    pub fn smote_config(&self) -> SmoteConfig {
        SmoteConfig {
            k_neighbors: self.smote.k_neighbors,
            seed: self.seed,
        }
    }

    pub fn dense_model_config(&self, num_classes: usize) -> DenseBranchConfig {
        let d = &self.dense;
        DenseBranchConfig {
            input_size: d.input_size,
            backbone: d.backbone,
            freeze_backbone: d.freeze_backbone,
            num_classes,
            se_ratio: d.se_ratio,
            pyramid_channels: d.pyramid_channels,
            fpn_levels: d.fpn_levels,
            seed: self.seed,
        }
    }

    pub fn dense_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.dense.epochs,
            batch_size: self.dense.batch_size,
            learning_rate: self.dense.learning_rate,
            seed: self.seed,
        }
    }

    /// Focal loss with configured or inverse-frequency class weights.
    pub fn focal_config(&self, counts: &[usize]) -> FocalLossConfig {
        let alpha = if self.dense.alpha.is_empty() {
            lungxai::dense::inverse_frequency_alpha(counts)
        } else {
            self.dense.alpha.clone()
        };
        FocalLossConfig {
            alpha,
            gamma: self.dense.gamma,
        }
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        ExtractorConfig {
            kind: self.svm.extractor,
            input_size: self.svm.input_size,
            seed: self.seed,
        }
    }

    pub fn svm_grid(&self) -> CliResult<Vec<GridCell>> {
        let s = &self.svm;
        if s.c_grid.is_empty() || s.c_grid.iter().any(|c| !(*c > 0.0)) {
            return Err(usage("svm.c_grid must hold positive values"));
        }
        let mut cells = Vec::new();
        for k in &s.kernels {
            let kernel = match k.as_str() {
                "linear" => KernelSpec::Linear,
                "rbf" => KernelSpec::Rbf { gamma: s.gamma },
                other => return Err(usage(format!("unknown kernel {other:?} (linear, rbf)"))),
            };
            cells.extend(s.c_grid.iter().map(|&c| GridCell { kernel, c }));
        }
        if cells.is_empty() {
            return Err(usage("svm.kernels is empty"));
        }
        Ok(cells)
    }
}

/// Weights path, `None` when unset.
pub fn weights_path(s: &str) -> Option<&Path> {
    (!s.is_empty()).then(|| Path::new(s))
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn split_name(s: &str) -> CliResult<&str> {
    SPLITS
        .iter()
        .find(|n| **n == s)
        .copied()
        .ok_or_else(|| usage(format!("unknown split {s:?} (train, val, test)")))
}
