//! Pipeline configuration: one TOML file with sections per command.
//!
//! Every key has a default, so an empty file runs the whole synthetic
//! pipeline. Relative paths resolve against the config file's directory.
//! Randomness flows only from the top-level `seed`; the environment is never
//! consulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{Region, TunnelSpec};
use crate::error::{KrfError, Result};
use crate::forest::Hyperparams;
use crate::kriging::KrigingMode;
use crate::preprocess::BqClass;
use crate::variogram::{VariogramKind, ALL_KINDS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed recorded into every output artifact.
    pub seed: u64,
    pub paths: PathsConfig,
    pub simulate: SimulateConfig,
    pub preprocess: PreprocessConfig,
    pub variogram: VariogramConfig,
    pub train: TrainConfig,
    pub fusion: FusionSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            paths: PathsConfig::default(),
            simulate: SimulateConfig::default(),
            preprocess: PreprocessConfig::default(),
            variogram: VariogramConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub telemetry: String,
    pub strata: String,
    pub truth: String,
    pub borehole: String,
    pub dataset: String,
    pub variogram_model: String,
    pub forest: String,
    pub predictions: String,
    pub metrics: String,
    pub importance: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            telemetry: "telemetry.csv".into(),
            strata: "strata.csv".into(),
            truth: "truth.csv".into(),
            borehole: "borehole.csv".into(),
            dataset: "dataset.csv".into(),
            variogram_model: "variogram.toml".into(),
            forest: "forest.json".into(),
            predictions: "predictions.csv".into(),
            metrics: "metrics.txt".into(),
            importance: "importance.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub length_m: f64,
    pub ring_width_m: f64,
    pub face_diameter_m: f64,
    pub nugget: f64,
    pub partial_sill: f64,
    pub range_m: f64,
    pub palette: Vec<String>,
    pub smoothness: f64,
    pub sensor_noise: f64,
    pub operator_noise: f64,
    pub nonworking_fraction: f64,
    pub records_per_ring: usize,
    pub borehole_noise: f64,
    pub region: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let spec = TunnelSpec::default();
        SimulateConfig {
            length_m: spec.length_m,
            ring_width_m: spec.ring_width_m,
            face_diameter_m: spec.face_diameter_m,
            nugget: spec.nugget,
            partial_sill: spec.partial_sill,
            range_m: spec.range_m,
            palette: spec.palette.iter().map(|c| c.to_string()).collect(),
            smoothness: spec.smoothness,
            sensor_noise: spec.sensor_noise,
            operator_noise: spec.operator_noise,
            nonworking_fraction: spec.nonworking_fraction,
            records_per_ring: spec.records_per_ring,
            borehole_noise: spec.borehole_noise,
            region: "A".into(),
        }
    }
}

impl SimulateConfig {
    pub fn to_spec(&self, seed: u64) -> Result<TunnelSpec> {
        let palette: Vec<BqClass> = self
            .palette
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        let region: Region = self.region.parse()?;
        let spec = TunnelSpec {
            length_m: self.length_m,
            ring_width_m: self.ring_width_m,
            face_diameter_m: self.face_diameter_m,
            nugget: self.nugget,
            partial_sill: self.partial_sill,
            range_m: self.range_m,
            palette,
            smoothness: self.smoothness,
            sensor_noise: self.sensor_noise,
            operator_noise: self.operator_noise,
            nonworking_fraction: self.nonworking_fraction,
            records_per_ring: self.records_per_ring,
            borehole_noise: self.borehole_noise,
            region,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Box-plot whisker factor for outlier limits.
    pub tukey_k: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { tukey_k: 1.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariogramConfig {
    pub lag_width_m: f64,
    /// 0 means automatic: half the chainage extent of the samples.
    pub max_lag_m: f64,
    pub kinds: Vec<String>,
    /// Normality-test significance level used before the optional log
    /// transform.
    pub alpha: f64,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        VariogramConfig {
            lag_width_m: 1.5,
            max_lag_m: 0.0,
            kinds: ALL_KINDS.iter().map(|k| k.to_string()).collect(),
            alpha: 0.05,
        }
    }
}

impl VariogramConfig {
    pub fn parsed_kinds(&self) -> Result<Vec<VariogramKind>> {
        self.kinds.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub m_try: usize,
    /// When true, pick hyperparameters by k-fold grid search over the grid_*
    /// lists (empty lists fall back to the scalar value above).
    pub grid_search: bool,
    pub cv_folds: usize,
    pub grid_n_trees: Vec<usize>,
    pub grid_max_depth: Vec<usize>,
    pub grid_min_samples_split: Vec<usize>,
    pub grid_min_samples_leaf: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        TrainConfig {
            n_trees: hp.n_trees,
            max_depth: hp.max_depth,
            min_samples_split: hp.min_samples_split,
            min_samples_leaf: hp.min_samples_leaf,
            m_try: hp.m_try,
            grid_search: false,
            cv_folds: 10,
            grid_n_trees: Vec::new(),
            grid_max_depth: Vec::new(),
            grid_min_samples_split: Vec::new(),
            grid_min_samples_leaf: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
            m_try: self.m_try,
            seed,
        }
    }

    /// Cartesian product of the grid lists, in list order.
    pub fn grid(&self, seed: u64) -> Vec<Hyperparams> {
        let or_default = |list: &[usize], single: usize| -> Vec<usize> {
            if list.is_empty() {
                vec![single]
            } else {
                list.to_vec()
            }
        };
        let n_trees = or_default(&self.grid_n_trees, self.n_trees);
        let depths = or_default(&self.grid_max_depth, self.max_depth);
        let splits = or_default(&self.grid_min_samples_split, self.min_samples_split);
        let leaves = or_default(&self.grid_min_samples_leaf, self.min_samples_leaf);
        let mut grid = Vec::new();
        for &t in &n_trees {
            for &d in &depths {
                for &s in &splits {
                    for &l in &leaves {
                        grid.push(Hyperparams {
                            n_trees: t,
                            max_depth: d,
                            min_samples_split: s,
                            min_samples_leaf: l,
                            m_try: self.m_try,
                            seed,
                        });
                    }
                }
            }
        }
        grid
    }
}

/// How the fitted variogram sill is mapped onto the fraction scale before
/// fusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SillMode {
    /// Rescale to the training labels' mean component variance stored in the
    /// forest model.
    Auto,
    /// Rescale to a fixed sill.
    Fixed,
    /// Use the fitted sill unchanged.
    Off,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub window: usize,
    /// "ordinary" or "paper-literal".
    pub mode: String,
    /// "auto", "fixed" or "off".
    pub sill_mode: String,
    /// Target sill when `sill_mode = "fixed"`.
    pub sill_value: f64,
    /// Explicit variogram parameters; when `model_kind` is non-empty they
    /// replace the fitted model file.
    pub model_kind: String,
    pub nugget: f64,
    pub partial_sill: f64,
    pub range_m: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            window: 10,
            mode: "ordinary".into(),
            sill_mode: "auto".into(),
            sill_value: 0.05,
            model_kind: String::new(),
            nugget: 0.0,
            partial_sill: 1.0,
            range_m: 15.0,
        }
    }
}

impl FusionSection {
    pub fn kriging_mode(&self) -> Result<KrigingMode> {
        self.mode.parse()
    }

    pub fn parsed_sill_mode(&self) -> Result<SillMode> {
        match self.sill_mode.as_str() {
            "auto" => Ok(SillMode::Auto),
            "fixed" => Ok(SillMode::Fixed),
            "off" => Ok(SillMode::Off),
            other => Err(KrfError::Config(format!(
                "sill_mode must be auto, fixed or off, got '{other}'"
            ))),
        }
    }
}

impl PipelineConfig {
    /// Load a config file; relative paths in it resolve against its parent
    /// directory.
    pub fn load(path: &Path) -> Result<(PipelineConfig, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KrfError::io(path.display().to_string(), e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| KrfError::Config(format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((config, base))
    }

    pub fn resolve(&self, base: &Path, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}
