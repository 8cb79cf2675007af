//! Spatial extrapolation from previously predicted locations, with the
//! extrapolation uncertainty.
//!
//! Two system conventions are supported. `PaperLiteral` solves the plain
//! `A·λ = b` system with the nugget on the diagonal and no constraint on the
//! weights. `Ordinary` augments the system with the unbiasedness row so the
//! weights sum to one, which is what the fusion pipeline uses by default
//! (it is what keeps kriged fraction vectors summing to one).

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{KrfError, Result};
use crate::linalg::{solve_with_regularization, SquareMatrix};
use crate::variogram::VariogramModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrigingMode {
    PaperLiteral,
    Ordinary,
}

impl std::fmt::Display for KrigingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KrigingMode::PaperLiteral => "paper-literal",
            KrigingMode::Ordinary => "ordinary",
        })
    }
}

impl std::str::FromStr for KrigingMode {
    type Err = KrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper-literal" | "paper_literal" => Ok(KrigingMode::PaperLiteral),
            "ordinary" => Ok(KrigingMode::Ordinary),
            other => Err(KrfError::InvalidInput(format!(
                "unknown kriging mode '{other}'"
            ))),
        }
    }
}

/// Solved extrapolation weights; `mu` is the Lagrange multiplier of the
/// unbiasedness constraint and is absent in paper-literal mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingWeights {
    pub lambda: Vec<f64>,
    pub mu: Option<f64>,
}

impl KrigingWeights {
    pub fn sum(&self) -> f64 {
        self.lambda.iter().sum()
    }
}

/// The assembled linear system: the `n × n` semivariance block between
/// previous locations and the right-hand side toward the query point.
#[derive(Debug, Clone)]
pub struct KrigingSystem {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    mode: KrigingMode,
}

static NEGATIVE_VARIANCE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// How many computed variances have been clamped up to zero so far in this
/// process.
pub fn negative_variance_clamp_count() -> u64 {
    NEGATIVE_VARIANCE_CLAMPS.load(Ordering::Relaxed)
}

fn clamp_variance(raw: f64) -> f64 {
    if raw < 0.0 {
        NEGATIVE_VARIANCE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        raw
    }
}

impl KrigingSystem {
    /// Build a system from an explicit semivariance block and right-hand
    /// side. The block must be symmetric with non-negative entries.
    #[allow(clippy::needless_range_loop)] // symmetry check cross-indexes (i,j)/(j,i)
    pub fn from_parts(a: Vec<Vec<f64>>, b: Vec<f64>, mode: KrigingMode) -> Result<KrigingSystem> {
        let n = a.len();
        if n == 0 || b.len() != n {
            return Err(KrfError::LengthMismatch(format!(
                "kriging block is {n}x{n} with rhs of length {}",
                b.len()
            )));
        }
        for i in 0..n {
            if a[i].len() != n {
                return Err(KrfError::LengthMismatch(format!(
                    "row {i} has length {}, expected {n}",
                    a[i].len()
                )));
            }
            for j in 0..n {
                if a[i][j] < 0.0 || !a[i][j].is_finite() {
                    return Err(KrfError::InvalidInput(format!(
                        "semivariance A[{i}][{j}] = {} invalid",
                        a[i][j]
                    )));
                }
                if (a[i][j] - a[j][i]).abs() > 1e-9 * a[i][j].abs().max(1.0) {
                    return Err(KrfError::InvalidInput(format!(
                        "semivariance block not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(KrigingSystem { a, b, mode })
    }

    /// Assemble the system for previous locations and a query chainage.
    ///
    /// In ordinary mode zero distances map to zero semivariance (the nugget
    /// is a limit from the right), which is what makes the predictor exact at
    /// sample locations. Paper-literal mode evaluates the model everywhere,
    /// putting the nugget on the diagonal.
    pub fn from_geometry(
        prev_locations: &[f64],
        x0: f64,
        model: &VariogramModel,
        mode: KrigingMode,
    ) -> Result<KrigingSystem> {
        let n = prev_locations.len();
        if n == 0 {
            return Err(KrfError::InsufficientData(
                "kriging needs at least one previous location".into(),
            ));
        }
        if !x0.is_finite() {
            return Err(KrfError::InvalidInput(format!("query chainage {x0} not finite")));
        }
        for (i, &xi) in prev_locations.iter().enumerate() {
            for &xj in &prev_locations[i + 1..] {
                if xi == xj {
                    return Err(KrfError::InvalidInput(format!(
                        "duplicate chainage {xi} among previous locations"
                    )));
                }
            }
        }
        let gamma = |h: f64| -> f64 {
            match mode {
                KrigingMode::PaperLiteral => model.evaluate(h),
                KrigingMode::Ordinary => {
                    if h == 0.0 {
                        0.0
                    } else {
                        model.evaluate(h)
                    }
                }
            }
        };
        let a: Vec<Vec<f64>> = prev_locations
            .iter()
            .map(|&xi| {
                prev_locations
                    .iter()
                    .map(|&xj| gamma((xi - xj).abs()))
                    .collect()
            })
            .collect();
        let b: Vec<f64> = prev_locations
            .iter()
            .map(|&xi| gamma((xi - x0).abs()))
            .collect();
        // symmetric by construction, no re-validation needed
        Ok(KrigingSystem { a, b, mode })
    }

    pub fn mode(&self) -> KrigingMode {
        self.mode
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    /// Solve for the extrapolation weights.
    pub fn solve(&self) -> Result<KrigingWeights> {
        let n = self.b.len();
        match self.mode {
            KrigingMode::PaperLiteral => {
                let mut m = SquareMatrix::zeros(n);
                for (i, row) in self.a.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        m.set(i, j, v);
                    }
                }
                let lambda = solve_with_regularization(&m, &self.b)
                    .map_err(|rcond| KrfError::DegenerateKrigingSystem { rcond })?;
                Ok(KrigingWeights { lambda, mu: None })
            }
            KrigingMode::Ordinary => {
                let mut m = SquareMatrix::zeros(n + 1);
                for (i, row) in self.a.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        m.set(i, j, v);
                    }
                    m.set(i, n, 1.0);
                    m.set(n, i, 1.0);
                }
                let mut rhs = self.b.clone();
                rhs.push(1.0);
                let mut lambda = solve_with_regularization(&m, &rhs)
                    .map_err(|rcond| KrfError::DegenerateKrigingSystem { rcond })?;
                let mu = lambda.pop().expect("augmented solution");
                Ok(KrigingWeights {
                    lambda,
                    mu: Some(mu),
                })
            }
        }
    }

    /// Weighted sum of sample values at the previous locations.
    pub fn estimate(&self, weights: &KrigingWeights, values: &[f64]) -> Result<f64> {
        if values.len() != weights.lambda.len() {
            return Err(KrfError::LengthMismatch(format!(
                "{} values for {} weights",
                values.len(),
                weights.lambda.len()
            )));
        }
        Ok(weights
            .lambda
            .iter()
            .zip(values)
            .map(|(l, z)| l * z)
            .sum())
    }

    /// [`Self::variance`] clamped at zero; each clamp bumps the process-wide
    /// counter behind [`negative_variance_clamp_count`].
    pub fn clamped_variance(&self, weights: &KrigingWeights) -> f64 {
        clamp_variance(self.variance(weights))
    }

    /// Extrapolation variance for the solved weights (raw, may be slightly
    /// negative from rounding; callers clamp).
    pub fn variance(&self, weights: &KrigingWeights) -> f64 {
        let lambda = &weights.lambda;
        let n = lambda.len();
        match self.mode {
            KrigingMode::PaperLiteral => {
                let first: f64 = lambda.iter().zip(&self.b).map(|(l, g)| l * g).sum();
                let mut second = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        second += lambda[i] * lambda[j] * self.a[i][j];
                    }
                }
                2.0 * first - second
            }
            KrigingMode::Ordinary => {
                let lb: f64 = lambda.iter().zip(&self.b).map(|(l, g)| l * g).sum();
                lb + weights.mu.unwrap_or(0.0)
            }
        }
    }
}

/// Extrapolation weights for a query chainage. Previous locations must be
/// distinct.
pub fn kriging_weights(
    prev_locations: &[f64],
    x0: f64,
    model: &VariogramModel,
    mode: KrigingMode,
) -> Result<KrigingWeights> {
    KrigingSystem::from_geometry(prev_locations, x0, model, mode)?.solve()
}

/// Kriged value per component plus the shared extrapolation variance.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingEstimate {
    pub values: Vec<f64>,
    /// One variance per component. The weights depend only on the geometry,
    /// so each component carries the same value.
    pub variances: Vec<f64>,
    pub weights: KrigingWeights,
}

/// Extrapolate component values observed at previous chainages to `x0`.
///
/// Duplicate chainages keep the most recent entry (the later one in the
/// slice) and drop older ones before solving.
pub fn extrapolate(
    prev: &[(f64, Vec<f64>)],
    x0: f64,
    model: &VariogramModel,
    mode: KrigingMode,
) -> Result<KrigingEstimate> {
    if prev.is_empty() {
        return Err(KrfError::InsufficientData(
            "kriging needs at least one previous sample".into(),
        ));
    }
    let n_components = prev[0].1.len();
    for (x, v) in prev {
        if v.len() != n_components {
            return Err(KrfError::LengthMismatch(format!(
                "sample at {x} has {} components, expected {n_components}",
                v.len()
            )));
        }
    }
    // most recent entry wins on duplicate chainage
    let mut kept: Vec<(f64, &[f64])> = Vec::with_capacity(prev.len());
    for (x, v) in prev {
        if let Some(slot) = kept.iter_mut().find(|(xk, _)| xk == x) {
            slot.1 = v;
        } else {
            kept.push((*x, v));
        }
    }
    let locations: Vec<f64> = kept.iter().map(|(x, _)| *x).collect();
    let system = KrigingSystem::from_geometry(&locations, x0, model, mode)?;
    let weights = system.solve()?;
    let variance = system.clamped_variance(&weights);
    let mut values = Vec::with_capacity(n_components);
    for c in 0..n_components {
        let column: Vec<f64> = kept.iter().map(|(_, v)| v[c]).collect();
        values.push(system.estimate(&weights, &column)?);
    }
    Ok(KrigingEstimate {
        values,
        variances: vec![variance; n_components],
        weights,
    })
}
