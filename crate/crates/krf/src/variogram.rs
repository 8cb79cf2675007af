//! Empirical semivariogram estimation and parametric model fitting.

use serde::{Deserialize, Serialize};

use crate::error::{KrfError, Result};

/// One lag bin of the empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Lag distance (bin midpoint), meters.
    pub h: f64,
    /// Semivariance estimate.
    pub gamma_star: f64,
    /// Number of sample pairs in the bin.
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramKind {
    Spherical,
    Gaussian,
    Exponential,
}

/// Deterministic candidate order; ties in fit quality resolve to the earlier
/// kind.
pub const ALL_KINDS: [VariogramKind; 3] = [
    VariogramKind::Spherical,
    VariogramKind::Gaussian,
    VariogramKind::Exponential,
];

impl VariogramKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariogramKind::Spherical => "spherical",
            VariogramKind::Gaussian => "gaussian",
            VariogramKind::Exponential => "exponential",
        }
    }
}

impl std::fmt::Display for VariogramKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VariogramKind {
    type Err = KrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spherical" => Ok(VariogramKind::Spherical),
            "gaussian" => Ok(VariogramKind::Gaussian),
            "exponential" => Ok(VariogramKind::Exponential),
            other => Err(KrfError::InvalidInput(format!(
                "unknown variogram kind '{other}'"
            ))),
        }
    }
}

/// Parametric semivariogram model.
///
/// `evaluate(0)` returns the nugget for every kind; the Gaussian and
/// exponential forms use the practical-range convention so `range` means the
/// same thing across kinds (~95 % of the sill is reached at `h = range`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(kind: VariogramKind, nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0 && partial_sill >= 0.0 && nugget + partial_sill > 0.0) {
            return Err(KrfError::InvalidInput(format!(
                "variogram needs nugget, partial sill >= 0 with a positive sill, got C0={nugget}, C={partial_sill}"
            )));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(KrfError::InvalidInput(format!(
                "variogram range must be positive, got {range}"
            )));
        }
        Ok(VariogramModel {
            kind,
            nugget,
            partial_sill,
            range,
        })
    }

    /// Total sill `C0 + C`.
    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    /// Model semivariance at lag `h >= 0`.
    pub fn evaluate(&self, h: f64) -> f64 {
        debug_assert!(h >= 0.0);
        if h == 0.0 {
            return self.nugget;
        }
        self.nugget + self.partial_sill * self.unit_shape(h)
    }

    /// Structured part scaled to [0, 1].
    fn unit_shape(&self, h: f64) -> f64 {
        let r = h / self.range;
        match self.kind {
            VariogramKind::Spherical => {
                if r >= 1.0 {
                    1.0
                } else {
                    1.5 * r - 0.5 * r.powi(3)
                }
            }
            VariogramKind::Gaussian => 1.0 - (-3.0 * r * r).exp(),
            VariogramKind::Exponential => 1.0 - (-3.0 * r).exp(),
        }
    }

    /// Return the same shape rescaled so `C0 + C` equals `target_sill`,
    /// keeping the nugget-to-sill ratio and range.
    pub fn with_sill(&self, target_sill: f64) -> Result<VariogramModel> {
        if !(target_sill > 0.0 && target_sill.is_finite()) {
            return Err(KrfError::InvalidInput(format!(
                "target sill must be positive, got {target_sill}"
            )));
        }
        let scale = target_sill / self.sill();
        VariogramModel::new(
            self.kind,
            self.nugget * scale,
            self.partial_sill * scale,
            self.range,
        )
    }
}

/// Empirical semivariogram over contiguous bins of width `lag_width` starting
/// at 0, each labeled by its midpoint. Pairs farther apart than `max_lag` are
/// ignored and empty bins are omitted.
pub fn empirical_semivariogram(
    samples: &[(f64, f64)],
    lag_width: f64,
    max_lag: f64,
) -> Result<Vec<VariogramBin>> {
    if samples.len() < 2 {
        return Err(KrfError::InsufficientData(format!(
            "semivariogram needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(lag_width > 0.0 && lag_width.is_finite()) {
        return Err(KrfError::InvalidInput(format!(
            "lag width must be positive, got {lag_width}"
        )));
    }
    let n_bins = (max_lag / lag_width).ceil().max(0.0) as usize;
    let mut sums = vec![0.0_f64; n_bins + 1];
    let mut counts = vec![0_usize; n_bins + 1];
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let d = (samples[i].0 - samples[j].0).abs();
            if d > max_lag || d == 0.0 {
                continue;
            }
            let bin = (d / lag_width).floor() as usize;
            let diff = samples[i].1 - samples[j].1;
            sums[bin] += diff * diff;
            counts[bin] += 1;
        }
    }
    let bins: Vec<VariogramBin> = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .filter(|(_, (_, &c))| c > 0)
        .map(|(k, (&s, &c))| VariogramBin {
            h: (k as f64 + 0.5) * lag_width,
            gamma_star: s / (2.0 * c as f64),
            n_pairs: c,
        })
        .collect();
    if bins.is_empty() {
        return Err(KrfError::NoVariogramPairs);
    }
    Ok(bins)
}

/// A fitted model together with its pair-count-weighted squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramFit {
    pub model: VariogramModel,
    pub weighted_sse: f64,
}

/// Weighted SSE of a model against the bins.
pub fn weighted_sse(model: &VariogramModel, bins: &[VariogramBin]) -> f64 {
    bins.iter()
        .map(|b| {
            let r = model.evaluate(b.h) - b.gamma_star;
            b.n_pairs as f64 * r * r
        })
        .sum()
}

/// Closed-form weighted least squares for (nugget, partial sill) at a fixed
/// range, honoring the non-negativity constraints.
fn solve_linear_part(kind: VariogramKind, range: f64, bins: &[VariogramBin]) -> (f64, f64, f64) {
    let probe = VariogramModel {
        kind,
        nugget: 0.0,
        partial_sill: 1.0,
        range,
    };
    let mut sw = 0.0;
    let mut sg = 0.0;
    let mut sy = 0.0;
    let mut sgg = 0.0;
    let mut sgy = 0.0;
    for b in bins {
        let w = b.n_pairs as f64;
        let g = probe.unit_shape(b.h);
        sw += w;
        sg += w * g;
        sy += w * b.gamma_star;
        sgg += w * g * g;
        sgy += w * g * b.gamma_star;
    }
    let det = sw * sgg - sg * sg;
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(3);
    if det.abs() > 1e-14 * sw.max(sgg) {
        let c = (sw * sgy - sg * sy) / det;
        let c0 = (sy - c * sg) / sw;
        if c0 >= 0.0 && c >= 0.0 {
            candidates.push((c0, c));
        }
    }
    // boundary solutions; pure nugget first so exact ties degrade to it
    candidates.push(((sy / sw).max(0.0), 0.0));
    if sgg > 0.0 {
        candidates.push((0.0, (sgy / sgg).max(0.0)));
    }

    let sse_of = |c0: f64, c: f64| {
        bins.iter()
            .map(|b| {
                let r = c0 + c * probe.unit_shape(b.h) - b.gamma_star;
                b.n_pairs as f64 * r * r
            })
            .sum::<f64>()
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (c0, c) in candidates {
        let sse = sse_of(c0, c);
        if sse < best.0 {
            best = (sse, c0, c);
        }
    }
    (best.1, best.2, best.0)
}

/// Fit one model kind: profile the range over a log grid (the linear part is
/// solved exactly at each range) and refine the best bracket by golden
/// section. Deterministic.
pub fn fit_kind(kind: VariogramKind, bins: &[VariogramBin]) -> Result<VariogramFit> {
    if bins.len() < 4 {
        return Err(KrfError::InsufficientData(format!(
            "variogram fit needs at least 4 bins, got {}",
            bins.len()
        )));
    }
    let max_h = bins.iter().map(|b| b.h).fold(0.0_f64, f64::max);
    let min_h = bins.iter().map(|b| b.h).fold(f64::INFINITY, f64::min);
    let a_max = 2.0 * max_h;
    let a_min = (min_h * 0.25).max(a_max * 1e-4);

    let profile = |a: f64| solve_linear_part(kind, a, bins).2;

    const GRID: usize = 48;
    let log_min = a_min.ln();
    let log_max = a_max.ln();
    let mut best_idx = 0;
    let mut best_sse = f64::INFINITY;
    let grid: Vec<f64> = (0..GRID)
        .map(|i| (log_min + (log_max - log_min) * i as f64 / (GRID - 1) as f64).exp())
        .collect();
    for (i, &a) in grid.iter().enumerate() {
        let sse = profile(a);
        if sse < best_sse {
            best_sse = sse;
            best_idx = i;
        }
    }

    // golden-section refinement within the neighboring grid segment
    let mut lo = grid[best_idx.saturating_sub(1)];
    let mut hi = grid[(best_idx + 1).min(GRID - 1)];
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = profile(x1);
    let mut f2 = profile(x2);
    for _ in 0..70 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = profile(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = profile(x2);
        }
    }
    let mut a_best = 0.5 * (lo + hi);
    let mut sse_best = profile(a_best);
    if best_sse < sse_best {
        a_best = grid[best_idx];
        sse_best = best_sse;
    }

    let (c0, c, _) = solve_linear_part(kind, a_best, bins);
    if !(sse_best.is_finite() && c0 >= 0.0 && c >= 0.0 && c0 + c > 0.0) {
        return Err(KrfError::VariogramFitFailed(format!(
            "{kind}: degenerate parameters C0={c0}, C={c}"
        )));
    }
    Ok(VariogramFit {
        model: VariogramModel {
            kind,
            nugget: c0,
            partial_sill: c,
            range: a_best,
        },
        weighted_sse: sse_best,
    })
}

/// Fit every candidate kind and return the one with minimal weighted SSE.
/// Ties resolve in [`ALL_KINDS`] order.
pub fn fit_model(bins: &[VariogramBin], kinds: &[VariogramKind]) -> Result<VariogramFit> {
    if kinds.is_empty() {
        return Err(KrfError::InvalidInput("no variogram kinds requested".into()));
    }
    let mut best: Option<VariogramFit> = None;
    let mut last_err = None;
    for &kind in kinds {
        match fit_kind(kind, bins) {
            Ok(fit) => {
                if best.is_none_or(|b| fit.weighted_sse < b.weighted_sse) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| KrfError::VariogramFitFailed("no kind converged".into()))
    })
}
