//! Inverse-uncertainty fusion of the kriging and forest channels, and the
//! rolling prediction loop over a chainage-ordered telemetry stream.
//!
//! Each fraction component is fused independently: the channel with the
//! smaller variance gets the larger weight, and the weights always sum to
//! one. The kriging channel extrapolates the *fused* output history — the
//! most recent predictions are what was "previously predicted".

use crate::error::{KrfError, Result};
use crate::forest::{Forest, N_COMPONENTS};
use crate::kriging::{extrapolate, KrigingMode};
use crate::preprocess::{BqClass, GroundVector, OperatingRecord};
use crate::variogram::VariogramModel;

/// Configuration of the rolling fusion loop.
///
/// The cold-start rule is fixed: while the prediction history is empty the
/// output is the forest prediction with full forest weight. The two variance
/// overrides pin a channel's variance to a constant; they exist for channel
/// isolation diagnostics and tests, not for production runs.
#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Number of most recent prior predictions used for extrapolation.
    pub window: usize,
    pub mode: KrigingMode,
    pub model: VariogramModel,
    pub var_rf_override: Option<f64>,
    pub var_kriging_override: Option<f64>,
}

impl FusionConfig {
    pub fn new(window: usize, mode: KrigingMode, model: VariogramModel) -> Result<FusionConfig> {
        if window < 1 {
            return Err(KrfError::InvalidInput("fusion window must be >= 1".into()));
        }
        Ok(FusionConfig {
            window,
            mode,
            model,
            var_rf_override: None,
            var_kriging_override: None,
        })
    }
}

/// One fused prediction with its channel diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct KrfPrediction {
    pub chainage: f64,
    pub fused: GroundVector,
    pub w_kriging: [f64; N_COMPONENTS],
    pub w_rf: [f64; N_COMPONENTS],
    /// Kriging variance per component (shared value; infinite on cold start).
    pub var_kriging: [f64; N_COMPONENTS],
    /// Forest ensemble variance per component.
    pub var_rf: [f64; N_COMPONENTS],
    pub main: BqClass,
    /// Raw forest channel (renormalized mean).
    pub forest: GroundVector,
    /// Raw kriging channel before clamping; absent on cold start.
    pub kriging: Option<[f64; N_COMPONENTS]>,
}

impl KrfPrediction {
    pub fn mean_w_kriging(&self) -> f64 {
        self.w_kriging.iter().sum::<f64>() / N_COMPONENTS as f64
    }

    pub fn mean_var_kriging(&self) -> f64 {
        self.var_kriging.iter().sum::<f64>() / N_COMPONENTS as f64
    }

    pub fn mean_var_rf(&self) -> f64 {
        self.var_rf.iter().sum::<f64>() / N_COMPONENTS as f64
    }
}

/// Channel weights from the channel variances. The pair sums to one exactly;
/// two zero variances split evenly.
pub fn fusion_weights(var_kriging: f64, var_rf: f64) -> (f64, f64) {
    debug_assert!(var_kriging >= 0.0 && var_rf >= 0.0);
    if var_kriging == 0.0 && var_rf == 0.0 {
        return (0.5, 0.5);
    }
    let w_kriging = var_rf / (var_kriging + var_rf);
    (w_kriging, 1.0 - w_kriging)
}

/// Combine one scalar component from both channels. The fused variance is
/// the inverse-variance combination and is reported for diagnostics only; it
/// never feeds later fusion steps.
pub fn fuse(z: f64, var_z: f64, f: f64, var_f: f64) -> (f64, f64) {
    let (w_kriging, w_rf) = fusion_weights(var_z, var_f);
    let fused = w_kriging * z + w_rf * f;
    let fused_var = if var_z == 0.0 || var_f == 0.0 {
        0.0
    } else {
        var_z * var_f / (var_z + var_f)
    };
    (fused, fused_var)
}

/// Run the rolling fusion over a strictly chainage-increasing stream.
///
/// Per record: predict with the forest, extrapolate the up-to-`window` most
/// recent fused outputs to the record's chainage, fuse per component, clamp
/// and renormalize, and append the result to the history. Replaying the same
/// stream reproduces the output exactly.
pub fn run_krf(
    stream: &[OperatingRecord],
    forest: &Forest,
    cfg: &FusionConfig,
) -> Result<Vec<KrfPrediction>> {
    if cfg.window < 1 {
        return Err(KrfError::InvalidInput("fusion window must be >= 1".into()));
    }
    let mut history: Vec<(f64, [f64; N_COMPONENTS])> = Vec::new();
    let mut out: Vec<KrfPrediction> = Vec::with_capacity(stream.len());
    let mut last_chainage = f64::NEG_INFINITY;
    for record in stream {
        record.validate()?;
        if record.chainage <= last_chainage {
            return Err(KrfError::StreamOutOfOrder(record.chainage));
        }
        last_chainage = record.chainage;

        let (forest_vec, mut var_rf) = forest.predict(&record.features())?;
        if let Some(v) = cfg.var_rf_override {
            var_rf = [v; N_COMPONENTS];
        }

        let prediction = if history.is_empty() {
            let main = forest_vec.main_class()?;
            KrfPrediction {
                chainage: record.chainage,
                fused: forest_vec,
                w_kriging: [0.0; N_COMPONENTS],
                w_rf: [1.0; N_COMPONENTS],
                var_kriging: [f64::INFINITY; N_COMPONENTS],
                var_rf,
                main,
                forest: forest_vec,
                kriging: None,
            }
        } else {
            let start = history.len().saturating_sub(cfg.window);
            let window: Vec<(f64, Vec<f64>)> = history[start..]
                .iter()
                .map(|(x, f)| (*x, f.to_vec()))
                .collect();
            let estimate = extrapolate(&window, record.chainage, &cfg.model, cfg.mode)?;
            let var_kriging_value = cfg
                .var_kriging_override
                .unwrap_or(estimate.variances[0]);

            let mut kriging_raw = [0.0; N_COMPONENTS];
            let mut fused_raw = [0.0; N_COMPONENTS];
            let mut w_kriging = [0.0; N_COMPONENTS];
            let mut w_rf = [0.0; N_COMPONENTS];
            for c in 0..N_COMPONENTS {
                kriging_raw[c] = estimate.values[c];
                let (wk, wr) = fusion_weights(var_kriging_value, var_rf[c]);
                w_kriging[c] = wk;
                w_rf[c] = wr;
                fused_raw[c] = wk * kriging_raw[c] + wr * forest_vec.fractions()[c];
            }
            let fused = GroundVector::clamp_renormalize(fused_raw);
            let main = fused.main_class()?;
            KrfPrediction {
                chainage: record.chainage,
                fused,
                w_kriging,
                w_rf,
                var_kriging: [var_kriging_value; N_COMPONENTS],
                var_rf,
                main,
                forest: forest_vec,
                kriging: Some(kriging_raw),
            }
        };
        history.push((record.chainage, *prediction.fused.fractions()));
        out.push(prediction);
    }
    Ok(out)
}
