//! Telemetry cleaning, distribution checks and ground-truth encoding.
//!
//! Everything in here is a pure function over immutable inputs; the cleaning
//! pipeline for a telemetry stream is [`clean_records`].

use serde::{Deserialize, Serialize};

use crate::error::{KrfError, Result};

/// Rock-mass quality classes, ordered hardest (I) to softest (VI).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BqClass {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

pub const ALL_CLASSES: [BqClass; 6] = [
    BqClass::I,
    BqClass::II,
    BqClass::III,
    BqClass::IV,
    BqClass::V,
    BqClass::VI,
];

impl BqClass {
    /// Zero-based index, I = 0 … VI = 5.
    pub fn index(self) -> usize {
        match self {
            BqClass::I => 0,
            BqClass::II => 1,
            BqClass::III => 2,
            BqClass::IV => 3,
            BqClass::V => 4,
            BqClass::VI => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<BqClass> {
        ALL_CLASSES.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BqClass::I => "I",
            BqClass::II => "II",
            BqClass::III => "III",
            BqClass::IV => "IV",
            BqClass::V => "V",
            BqClass::VI => "VI",
        }
    }
}

impl std::fmt::Display for BqClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BqClass {
    type Err = KrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" => Ok(BqClass::I),
            "II" => Ok(BqClass::II),
            "III" => Ok(BqClass::III),
            "IV" => Ok(BqClass::IV),
            "V" => Ok(BqClass::V),
            "VI" => Ok(BqClass::VI),
            other => Err(KrfError::InvalidInput(format!("unknown BQ class '{other}'"))),
        }
    }
}

/// Per-class thickness fractions of the tunnel face.
///
/// Components are non-negative and sum to one; the all-zero vector is the
/// explicit "unknown" sentinel and never enters any model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundVector {
    fractions: [f64; 6],
}

pub const FRACTION_SUM_TOL: f64 = 1e-9;

impl GroundVector {
    /// Validate and wrap raw class fractions.
    pub fn new(fractions: [f64; 6]) -> Result<GroundVector> {
        if fractions.iter().all(|&f| f == 0.0) {
            return Ok(GroundVector { fractions });
        }
        for (i, &f) in fractions.iter().enumerate() {
            if !f.is_finite() || !(0.0..=1.0 + FRACTION_SUM_TOL).contains(&f) {
                return Err(KrfError::InvalidInput(format!(
                    "ground fraction {i} out of [0,1]: {f}"
                )));
            }
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > FRACTION_SUM_TOL {
            return Err(KrfError::InvalidInput(format!(
                "ground fractions sum to {sum}, expected 1"
            )));
        }
        Ok(GroundVector { fractions })
    }

    /// The all-zero "unknown" sentinel.
    pub fn unknown() -> GroundVector {
        GroundVector { fractions: [0.0; 6] }
    }

    pub fn is_unknown(&self) -> bool {
        self.fractions.iter().all(|&f| f == 0.0)
    }

    pub fn fractions(&self) -> &[f64; 6] {
        &self.fractions
    }

    pub fn fraction(&self, class: BqClass) -> f64 {
        self.fractions[class.index()]
    }

    /// Class with the largest thickness fraction; ties go to the lower index.
    pub fn main_class(&self) -> Result<BqClass> {
        if self.is_unknown() {
            return Err(KrfError::UnknownGround);
        }
        let mut best = 0;
        for i in 1..6 {
            if self.fractions[i] > self.fractions[best] {
                best = i;
            }
        }
        Ok(BqClass::from_index(best).expect("index in range"))
    }

    /// Clamp negatives to zero and rescale so the components sum to one.
    ///
    /// Used after any linear combination that may push a component slightly
    /// outside [0, 1]. A vector that already satisfies the invariants passes
    /// through bit-identical; everything-clamped inputs fall back to the
    /// uniform vector.
    pub fn clamp_renormalize(raw: [f64; 6]) -> GroundVector {
        let mut v = raw;
        let mut clamped = false;
        for f in v.iter_mut() {
            if !f.is_finite() || *f < 0.0 {
                *f = 0.0;
                clamped = true;
            }
        }
        let sum: f64 = v.iter().sum();
        if sum <= 0.0 {
            return GroundVector {
                fractions: [1.0 / 6.0; 6],
            };
        }
        if !clamped && (sum - 1.0).abs() <= FRACTION_SUM_TOL {
            return GroundVector { fractions: v };
        }
        for f in v.iter_mut() {
            *f /= sum;
        }
        GroundVector { fractions: v }
    }
}

/// One timestamped telemetry row: chainage plus the 8 operating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingRecord {
    /// Meters along the tunnel axis.
    pub chainage: f64,
    /// Seconds since epoch.
    pub timestamp: f64,
    /// Thrust, MN.
    pub thrust: f64,
    /// Advance rate, mm/min.
    pub advance_rate: f64,
    /// Torque, MN·m.
    pub torque: f64,
    /// Cutter rotation speed, rev/min.
    pub cutter_speed: f64,
    /// Penetration, mm/rev.
    pub penetration: f64,
    /// Chamber pressure, bar.
    pub chamber_pressure: f64,
    /// Foam volume, L.
    pub foam_volume: f64,
    /// Water volume, L.
    pub water_volume: f64,
}

/// Feature order used everywhere a record becomes a model input row.
pub const FEATURE_NAMES: [&str; 8] = [
    "Th_MN", "v_mm_min", "To_MNm", "RPM", "Pe_mm_r", "Cp_bar", "Vf_L", "Vw_L",
];

impl OperatingRecord {
    /// The 8 operating parameters in [`FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; 8] {
        [
            self.thrust,
            self.advance_rate,
            self.torque,
            self.cutter_speed,
            self.penetration,
            self.chamber_pressure,
            self.foam_volume,
            self.water_volume,
        ]
    }

    /// Parameters that gate the working/non-working decision.
    fn gate_values(&self) -> [f64; 5] {
        [
            self.thrust,
            self.torque,
            self.advance_rate,
            self.cutter_speed,
            self.penetration,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.chainage.is_finite() || self.chainage < 0.0 {
            return Err(KrfError::InvalidInput(format!(
                "chainage must be finite and non-negative, got {}",
                self.chainage
            )));
        }
        for (name, v) in FEATURE_NAMES.iter().zip(self.features()) {
            if !v.is_finite() {
                return Err(KrfError::InvalidInput(format!("{name} is not finite")));
            }
        }
        Ok(())
    }
}

/// Keep only records where thrust, torque, advance rate, cutter speed and
/// penetration are all strictly positive. Order is preserved; the result may
/// be empty.
pub fn filter_nonworking(records: &[OperatingRecord]) -> Vec<OperatingRecord> {
    records
        .iter()
        .filter(|r| r.gate_values().iter().all(|&v| v > 0.0))
        .copied()
        .collect()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Box-plot limits: `(Q1 − k·IQR, Q3 + k·IQR)` with quantiles by linear
/// interpolation between order statistics.
pub fn tukey_bounds(values: &[f64], k: f64) -> Result<(f64, f64)> {
    if values.len() < 4 {
        return Err(KrfError::InsufficientData(format!(
            "tukey bounds need at least 4 values, got {}",
            values.len()
        )));
    }
    if !(k >= 0.0 && k.is_finite()) {
        return Err(KrfError::InvalidInput(format!("tukey k must be >= 0, got {k}")));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - k * iqr, q3 + k * iqr))
}

/// Companion filter for [`tukey_bounds`]: keeps values inside the closed
/// interval.
pub fn tukey_filter(values: &[f64], k: f64) -> Result<Vec<f64>> {
    let (lo, hi) = tukey_bounds(values, k)?;
    Ok(values
        .iter()
        .copied()
        .filter(|&v| v >= lo && v <= hi)
        .collect())
}

/// Keep mask for a single three-sigma pass: true where
/// `|v − mean| ≤ 3·std` (population std). A zero-spread input keeps
/// everything.
pub fn three_sigma_mask(values: &[f64]) -> Result<Vec<bool>> {
    if values.len() < 2 {
        return Err(KrfError::InsufficientData(format!(
            "three-sigma filter needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![true; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean).abs() <= 3.0 * std).collect())
}

/// Single-pass removal of points more than three population standard
/// deviations from the mean. A zero-spread input is returned unchanged.
///
/// Re-application may remove further points; the cleaning pipeline applies it
/// exactly once.
pub fn three_sigma_filter(values: &[f64]) -> Result<Vec<f64>> {
    let mask = three_sigma_mask(values)?;
    Ok(values
        .iter()
        .zip(mask)
        .filter(|(_, keep)| *keep)
        .map(|(&v, _)| v)
        .collect())
}

/// Standard normal CDF.
fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance of the sample from a normal with the sample's
/// own mean and (population) standard deviation, compared against the
/// asymptotic critical value `c(alpha)/sqrt(n)`.
///
/// `c(0.05)` evaluates to 1.358. A zero-spread sample is reported as normal
/// with statistic 0.
pub fn ks_normality(values: &[f64], alpha: f64) -> Result<(f64, bool)> {
    if values.len() < 20 {
        return Err(KrfError::SampleTooSmallForKs);
    }
    if !(alpha > 0.0 && alpha <= 0.2) {
        return Err(KrfError::InvalidInput(format!(
            "KS alpha must lie in (0, 0.2], got {alpha}"
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok((0.0, true));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal_cdf((x - mean) / std);
        let d_plus = (i + 1) as f64 / n - f;
        let d_minus = f - i as f64 / n;
        d = d.max(d_plus).max(d_minus);
    }
    let critical = (-0.5 * (alpha / 2.0).ln()).sqrt() / n.sqrt();
    Ok((d, d < critical))
}

/// How a value series was transformed before variogram analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// `v ↦ ln(v + shift)`.
    Log { shift: f64 },
}

impl Transform {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log { shift } => (v + shift).ln(),
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log { shift } => v.exp() - shift,
        }
    }
}

/// Leave a normal-looking sample alone, otherwise log-transform it (with a
/// shift that keeps arguments positive) and record the transform so
/// extrapolated values can be mapped back.
///
/// Samples too small for the KS test are passed through unchanged.
pub fn normalize_for_kriging(values: &[f64], alpha: f64) -> Result<(Vec<f64>, Transform)> {
    if values.len() >= 20 {
        let (_, is_normal) = ks_normality(values, alpha)?;
        if is_normal {
            return Ok((values.to_vec(), Transform::Identity));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = (1e-6 - min).max(0.0);
        let transform = Transform::Log { shift };
        return Ok((values.iter().map(|&v| transform.apply(v)).collect(), transform));
    }
    Ok((values.to_vec(), Transform::Identity))
}

/// Quantitative inputs to the rock-mass quality index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BqInput {
    /// Saturated uniaxial compressive strength, MPa.
    pub rc: f64,
    /// Rock integrity coefficient, dimensionless.
    pub kv: f64,
}

impl BqInput {
    pub fn new(rc: f64, kv: f64) -> Result<BqInput> {
        if !(rc.is_finite() && rc > 0.0) || !(kv.is_finite() && kv > 0.0 && kv <= 1.0) {
            return Err(KrfError::BqInputOutOfRange(format!("Rc={rc}, Kv={kv}")));
        }
        Ok(BqInput { rc, kv })
    }
}

/// Rock-mass quality score and class.
///
/// Both substitution caps are checked against the original inputs and applied
/// independently before `BQ = 100 + 3·Rc + 250·Kv` is evaluated. Class VI has
/// no quantitative row and is never emitted here.
pub fn bq_classify(input: BqInput) -> Result<(f64, BqClass)> {
    BqInput::new(input.rc, input.kv)?;
    let rc_cap = 90.0 * input.kv + 30.0;
    let kv_cap = 0.04 * input.rc + 0.4;
    let rc = if input.rc > rc_cap { rc_cap } else { input.rc };
    let kv = if input.kv > kv_cap { kv_cap } else { input.kv };
    let bq = 100.0 + 3.0 * rc + 250.0 * kv;
    let class = if bq > 550.0 {
        BqClass::I
    } else if bq > 450.0 {
        BqClass::II
    } else if bq > 350.0 {
        BqClass::III
    } else if bq > 250.0 {
        BqClass::IV
    } else {
        BqClass::V
    };
    Ok((bq, class))
}

/// Turn a horizontally layered face description into class thickness
/// fractions. Strata must tile the face diameter within 1e-6 m.
pub fn encode_ground(strata: &[(BqClass, f64)], face_diameter: f64) -> Result<GroundVector> {
    if !(face_diameter.is_finite() && face_diameter > 0.0) {
        return Err(KrfError::InvalidInput(format!(
            "face diameter must be positive, got {face_diameter}"
        )));
    }
    let mut total = 0.0;
    for &(_, thickness) in strata {
        if !(thickness.is_finite() && thickness >= 0.0) {
            return Err(KrfError::InvalidInput(format!(
                "stratum thickness must be non-negative, got {thickness}"
            )));
        }
        total += thickness;
    }
    if (total - face_diameter).abs() > 1e-6 {
        return Err(KrfError::StrataMismatch(format!(
            "strata sum {total} m vs face diameter {face_diameter} m"
        )));
    }
    let mut fractions = [0.0; 6];
    for &(class, thickness) in strata {
        fractions[class.index()] += thickness / total;
    }
    GroundVector::new(fractions)
}

/// Summary of what the record-level cleaning removed.
#[derive(Debug, Clone)]
pub struct CleanReport {
    pub kept: Vec<OperatingRecord>,
    pub dropped_nonworking: usize,
    pub dropped_outliers: usize,
    /// Tukey bounds per gate parameter: thrust, torque, advance rate, cutter
    /// speed, penetration.
    pub gate_bounds: [(f64, f64); 5],
}

/// Record-level cleaning: drop non-working rows, then drop rows where any
/// gate parameter falls outside its box-plot limits (limits computed on the
/// working rows).
pub fn clean_records(records: &[OperatingRecord], tukey_k: f64) -> Result<CleanReport> {
    for r in records {
        r.validate()?;
    }
    let working = filter_nonworking(records);
    let dropped_nonworking = records.len() - working.len();
    if working.len() < 4 {
        return Err(KrfError::InsufficientData(format!(
            "only {} working records, need at least 4 for outlier limits",
            working.len()
        )));
    }
    let mut gate_bounds = [(0.0, 0.0); 5];
    for (i, bounds) in gate_bounds.iter_mut().enumerate() {
        let column: Vec<f64> = working.iter().map(|r| r.gate_values()[i]).collect();
        *bounds = tukey_bounds(&column, tukey_k)?;
    }
    let kept: Vec<OperatingRecord> = working
        .iter()
        .filter(|r| {
            r.gate_values()
                .iter()
                .zip(gate_bounds.iter())
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
        })
        .copied()
        .collect();
    let dropped_outliers = working.len() - kept.len();
    Ok(CleanReport {
        kept,
        dropped_nonworking,
        dropped_outliers,
        gate_bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(chainage: f64) -> OperatingRecord {
        OperatingRecord {
            chainage,
            timestamp: chainage * 60.0,
            thrust: 10.0,
            advance_rate: 20.0,
            torque: 2.0,
            cutter_speed: 1.5,
            penetration: 12.0,
            chamber_pressure: 1.2,
            foam_volume: 0.5,
            water_volume: 15.0,
        }
    }

    #[test]
    fn nonworking_filter_gates_on_the_five_drive_parameters() {
        let mut zero_torque = record(0.0);
        zero_torque.torque = 0.0;
        let all_positive = record(1.0);
        let mut zero_thrust_and_foam = record(2.0);
        zero_thrust_and_foam.thrust = 0.0;
        zero_thrust_and_foam.foam_volume = 0.0;
        let mut zero_foam_only = record(3.0);
        zero_foam_only.foam_volume = 0.0;

        let kept = filter_nonworking(&[zero_torque, all_positive, zero_thrust_and_foam, zero_foam_only]);
        let chainages: Vec<f64> = kept.iter().map(|r| r.chainage).collect();
        assert_eq!(chainages, vec![1.0, 3.0]);
    }

    #[test]
    fn nonworking_filter_is_idempotent() {
        let mut records = vec![record(0.0), record(1.0), record(2.0)];
        records[1].advance_rate = 0.0;
        let once = filter_nonworking(&records);
        let twice = filter_nonworking(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn tukey_bounds_match_hand_computation() {
        let values: Vec<f64> = (1..=9).map(f64::from).chain([100.0]).collect();
        let (lo, hi) = tukey_bounds(&values, 1.5).unwrap();
        assert!((lo - (-3.5)).abs() < 1e-12, "lower {lo}");
        assert!((hi - 14.5).abs() < 1e-12, "upper {hi}");
        let kept = tukey_filter(&values, 1.5).unwrap();
        assert!(!kept.contains(&100.0));
        assert_eq!(kept.len(), 9);
    }

    #[test]
    fn tukey_bounds_collapse_for_constant_data() {
        let values = [7.0; 8];
        let (lo, hi) = tukey_bounds(&values, 1.5).unwrap();
        assert_eq!((lo, hi), (7.0, 7.0));
        assert_eq!(tukey_filter(&values, 1.5).unwrap().len(), 8);
    }

    #[test]
    fn tukey_k_zero_gives_the_quartiles() {
        let values: Vec<f64> = (1..=9).map(f64::from).chain([100.0]).collect();
        let (lo, hi) = tukey_bounds(&values, 0.0).unwrap();
        assert!((lo - 3.25).abs() < 1e-12);
        assert!((hi - 7.75).abs() < 1e-12);
    }

    #[test]
    fn tukey_rejects_short_input() {
        assert!(matches!(
            tukey_bounds(&[1.0, 2.0, 3.0], 1.5),
            Err(KrfError::InsufficientData(_))
        ));
    }

    #[test]
    fn three_sigma_removes_a_gross_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut values: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        values.push(50.0);

        // independent check that 50 really is beyond three sigma here
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((50.0 - mean).abs() > 3.0 * std);

        let kept = three_sigma_filter(&values).unwrap();
        assert_eq!(kept.len(), 100);
        assert!(!kept.contains(&50.0));
    }

    #[test]
    fn three_sigma_keeps_constant_and_tight_data() {
        assert_eq!(three_sigma_filter(&[4.0; 10]).unwrap(), vec![4.0; 10]);
        let tight = [1.0, 1.1, 0.9, 1.05, 0.95];
        assert_eq!(three_sigma_filter(&tight).unwrap(), tight.to_vec());
    }

    #[test]
    fn three_sigma_output_is_a_subsequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..200)
            .map(|_| rng.gen_range(-1.0_f64..1.0).powi(3) * 10.0)
            .collect();
        let kept = three_sigma_filter(&values).unwrap();
        let mut cursor = values.iter();
        for k in &kept {
            assert!(cursor.any(|v| v == k), "kept value {k} not in order");
        }
    }

    fn normal_draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        // Box-Muller
        (0..n)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn ks_accepts_normal_samples_on_most_seeds() {
        let mut passes = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = normal_draws(&mut rng, 500);
            let (_, is_normal) = ks_normality(&values, 0.05).unwrap();
            passes += is_normal as usize;
        }
        assert!(passes >= 18, "only {passes}/20 normal samples accepted");
    }

    #[test]
    fn ks_rejects_lognormal_and_accepts_it_after_log() {
        let mut rejects = 0;
        let mut log_passes = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let values: Vec<f64> = normal_draws(&mut rng, 500).iter().map(|z| z.exp()).collect();
            let (_, is_normal) = ks_normality(&values, 0.05).unwrap();
            rejects += (!is_normal) as usize;
            let logged: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            let (_, log_normal) = ks_normality(&logged, 0.05).unwrap();
            log_passes += log_normal as usize;
        }
        assert!(rejects >= 18, "only {rejects}/20 skewed samples rejected");
        assert!(log_passes >= 18, "only {log_passes}/20 logged samples accepted");
    }

    #[test]
    fn ks_needs_twenty_values() {
        assert!(matches!(
            ks_normality(&[0.0; 19], 0.05),
            Err(KrfError::SampleTooSmallForKs)
        ));
    }

    #[test]
    fn normalize_keeps_normal_data_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values = normal_draws(&mut rng, 500);
        let (out, transform) = normalize_for_kriging(&values, 0.05).unwrap();
        assert_eq!(transform, Transform::Identity);
        assert_eq!(out, values);
    }

    #[test]
    fn normalize_logs_skewed_positive_data_without_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let values: Vec<f64> = normal_draws(&mut rng, 500).iter().map(|z| (z + 4.0).exp()).collect();
        let (out, transform) = normalize_for_kriging(&values, 0.05).unwrap();
        assert_eq!(transform, Transform::Log { shift: 0.0 });
        for (v, t) in values.iter().zip(&out) {
            let back = transform.invert(*t);
            assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn normalize_shifts_when_zero_is_present() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut values: Vec<f64> = normal_draws(&mut rng, 499).iter().map(|z| z.exp()).collect();
        values.push(0.0);
        let (_, transform) = normalize_for_kriging(&values, 0.05).unwrap();
        assert_eq!(transform, Transform::Log { shift: 1e-6 });
    }

    #[test]
    fn bq_classify_matches_the_worked_cases() {
        let (bq, class) = bq_classify(BqInput { rc: 10.0, kv: 0.5 }).unwrap();
        assert!((bq - 255.0).abs() < 1e-12);
        assert_eq!(class, BqClass::IV);

        let (bq, class) = bq_classify(BqInput { rc: 100.0, kv: 0.5 }).unwrap();
        assert!((bq - 450.0).abs() < 1e-12, "Rc cap should bind: {bq}");
        assert_eq!(class, BqClass::III);

        let (bq, class) = bq_classify(BqInput { rc: 60.0, kv: 0.9 }).unwrap();
        assert!((bq - 505.0).abs() < 1e-12);
        assert_eq!(class, BqClass::II);
    }

    #[test]
    fn bq_classify_matches_an_independent_oracle_on_random_inputs() {
        // re-implementation kept deliberately separate from the production path
        fn oracle(rc: f64, kv: f64) -> (f64, BqClass) {
            let mut rc_used = rc;
            let mut kv_used = kv;
            if rc > 90.0 * kv + 30.0 {
                rc_used = 90.0 * kv + 30.0;
            }
            if kv > 0.04 * rc + 0.4 {
                kv_used = 0.04 * rc + 0.4;
            }
            let bq = 100.0 + 3.0 * rc_used + 250.0 * kv_used;
            let class = match bq {
                b if b > 550.0 => BqClass::I,
                b if b > 450.0 => BqClass::II,
                b if b > 350.0 => BqClass::III,
                b if b > 250.0 => BqClass::IV,
                _ => BqClass::V,
            };
            (bq, class)
        }

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut rc_caps = 0;
        let mut kv_caps = 0;
        for _ in 0..1000 {
            let rc = rng.gen_range(0.01..150.0);
            let kv = rng.gen_range(0.01..1.0);
            rc_caps += (rc > 90.0 * kv + 30.0) as usize;
            kv_caps += (kv > 0.04 * rc + 0.4) as usize;
            let (bq, class) = bq_classify(BqInput { rc, kv }).unwrap();
            let (bq_expected, class_expected) = oracle(rc, kv);
            assert!((bq - bq_expected).abs() < 1e-12);
            assert_eq!(class, class_expected);
        }
        assert!(rc_caps > 0, "fixture never exercised the Rc cap");
        assert!(kv_caps > 0, "fixture never exercised the Kv cap");
    }

    #[test]
    fn bq_classify_rejects_bad_input() {
        assert!(bq_classify(BqInput { rc: -1.0, kv: 0.5 }).is_err());
        assert!(bq_classify(BqInput { rc: 10.0, kv: 0.0 }).is_err());
        assert!(bq_classify(BqInput { rc: 10.0, kv: 1.5 }).is_err());
    }

    #[test]
    fn encode_ground_matches_hand_fractions() {
        let g = encode_ground(&[(BqClass::V, 2.0), (BqClass::III, 4.28)], 6.28).unwrap();
        assert!((g.fraction(BqClass::III) - 4.28 / 6.28).abs() < 1e-12);
        assert!((g.fraction(BqClass::V) - 2.0 / 6.28).abs() < 1e-12);
        assert_eq!(g.fraction(BqClass::I), 0.0);
    }

    #[test]
    fn encode_ground_single_stratum_is_one_hot() {
        let g = encode_ground(&[(BqClass::II, 6.28)], 6.28).unwrap();
        assert_eq!(g.fraction(BqClass::II), 1.0);
        assert_eq!(g.main_class().unwrap(), BqClass::II);
    }

    #[test]
    fn encode_ground_merges_repeated_classes() {
        let g = encode_ground(&[(BqClass::IV, 2.0), (BqClass::IV, 4.0)], 6.0).unwrap();
        assert_eq!(g.fraction(BqClass::IV), 1.0);
    }

    #[test]
    fn encode_ground_rejects_mistiled_faces() {
        assert!(matches!(
            encode_ground(&[(BqClass::II, 3.0)], 6.28),
            Err(KrfError::StrataMismatch(_))
        ));
    }

    #[test]
    fn main_class_takes_the_argmax_with_low_index_ties() {
        let g = GroundVector::new([0.0, 0.0, 0.68, 0.0, 0.32, 0.0]).unwrap();
        assert_eq!(g.main_class().unwrap(), BqClass::III);

        let tie = GroundVector::new([0.0, 0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(tie.main_class().unwrap(), BqClass::II);

        let one_hot = GroundVector::new([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(one_hot.main_class().unwrap(), BqClass::V);

        assert!(matches!(
            GroundVector::unknown().main_class(),
            Err(KrfError::UnknownGround)
        ));
    }

    #[test]
    fn encode_then_main_class_equals_thickest_class() {
        let strata = [
            (BqClass::II, 1.0),
            (BqClass::V, 2.5),
            (BqClass::II, 1.8),
            (BqClass::IV, 0.98),
        ];
        let g = encode_ground(&strata, 6.28).unwrap();
        // II accumulates 2.8 m, more than V's 2.5 m
        assert_eq!(g.main_class().unwrap(), BqClass::II);
    }

    #[test]
    fn clean_records_reports_both_drop_reasons() {
        let mut records: Vec<OperatingRecord> = (0..40).map(|i| record(i as f64)).collect();
        records[5].torque = 0.0; // non-working
        records[10].thrust = 400.0; // outlier
        let report = clean_records(&records, 1.5).unwrap();
        assert_eq!(report.dropped_nonworking, 1);
        assert_eq!(report.dropped_outliers, 1);
        assert_eq!(report.kept.len(), 38);
        assert!(report.kept.iter().all(|r| r.thrust < 400.0 && r.torque > 0.0));
    }

    proptest! {
        #[test]
        fn tukey_bounds_are_translation_equivariant(
            values in proptest::collection::vec(-1e3..1e3f64, 4..40),
            shift in -1e3..1e3f64,
        ) {
            let (lo, hi) = tukey_bounds(&values, 1.5).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let (lo_s, hi_s) = tukey_bounds(&shifted, 1.5).unwrap();
            prop_assert!((lo_s - (lo + shift)).abs() < 1e-6);
            prop_assert!((hi_s - (hi + shift)).abs() < 1e-6);
        }

        #[test]
        fn tukey_bounds_are_scale_equivariant(
            values in proptest::collection::vec(-1e3..1e3f64, 4..40),
            scale in 1e-3..1e3f64,
        ) {
            let (lo, hi) = tukey_bounds(&values, 1.5).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let (lo_s, hi_s) = tukey_bounds(&scaled, 1.5).unwrap();
            prop_assert!((lo_s - lo * scale).abs() < 1e-6 * scale.max(1.0));
            prop_assert!((hi_s - hi * scale).abs() < 1e-6 * scale.max(1.0));
        }

        #[test]
        fn log_transform_round_trips(
            values in proptest::collection::vec(0.0..1e6f64, 1..50),
        ) {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let transform = Transform::Log { shift: (1e-6 - min).max(0.0) };
            for &v in &values {
                let back = transform.invert(transform.apply(v));
                prop_assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }
}
