//! Seeded synthetic-tunnel generator: spatially correlated ground profiles
//! plus operating records consistent with them.
//!
//! The ground is driven by one latent Gaussian field per palette class,
//! simulated sequentially along the chainage so that the field realizes the
//! requested variogram. A softmax over the latent fields gives the per-ring
//! fraction vector; a documented monotone forward model maps the face's
//! strength index into the eight operating parameters, inside the observed
//! telemetry envelopes. All randomness flows from the tunnel seed through
//! named sub-streams, so equal specs generate byte-identical tunnels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KrfError, Result};
use crate::kriging::{KrigingMode, KrigingSystem};
use crate::preprocess::{BqClass, GroundVector, OperatingRecord};
use crate::variogram::{VariogramKind, VariogramModel};

/// Observed envelopes of the eight operating parameters, in feature order:
/// thrust MN, advance rate mm/min, torque MN·m, cutter speed rpm,
/// penetration mm/rev, chamber pressure bar, foam L, water L.
pub const PARAMETER_ENVELOPE: [(f64, f64); 8] = [
    (0.28, 29.79),
    (1.00, 96.38),
    (0.50, 4.73),
    (0.80, 3.06),
    (1.00, 75.82),
    (0.00, 3.05),
    (0.00, 10.35),
    (0.00, 154.80),
];

/// Two synthetic geologies sharing one spec family. Region B tilts the class
/// mix toward softer ground and perturbs the forward-model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    A,
    B,
}

impl std::str::FromStr for Region {
    type Err = KrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Region::A),
            "B" | "b" => Ok(Region::B),
            other => Err(KrfError::InvalidInput(format!("unknown region '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunnelSpec {
    pub length_m: f64,
    pub ring_width_m: f64,
    pub face_diameter_m: f64,
    /// Latent-field variogram (spherical).
    pub nugget: f64,
    pub partial_sill: f64,
    pub range_m: f64,
    /// Classes that can appear in this tunnel.
    pub palette: Vec<BqClass>,
    /// Softmax temperature: lower values give sharper class transitions.
    pub smoothness: f64,
    /// Per-record noise, as a fraction of each parameter's dynamic range.
    pub sensor_noise: f64,
    /// Per-ring operator offset, same scaling.
    pub operator_noise: f64,
    /// Fraction of records emitted as stopped-machine rows.
    pub nonworking_fraction: f64,
    pub records_per_ring: usize,
    /// Noise on the regional scalar series, absolute.
    pub borehole_noise: f64,
    pub region: Region,
    pub seed: u64,
}

impl Default for TunnelSpec {
    fn default() -> Self {
        TunnelSpec {
            length_m: 450.0,
            ring_width_m: 1.5,
            face_diameter_m: 6.28,
            nugget: 0.1,
            partial_sill: 0.9,
            range_m: 18.0,
            palette: vec![BqClass::II, BqClass::III, BqClass::IV, BqClass::V],
            smoothness: 0.25,
            sensor_noise: 0.08,
            operator_noise: 0.08,
            nonworking_fraction: 0.05,
            records_per_ring: 2,
            borehole_noise: 0.05,
            region: Region::A,
            seed: 42,
        }
    }
}

impl TunnelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0 && self.ring_width_m > 0.0 && self.face_diameter_m > 0.0) {
            return Err(KrfError::InvalidInput(
                "tunnel length, ring width and face diameter must be positive".into(),
            ));
        }
        if self.palette.is_empty() {
            return Err(KrfError::InvalidInput("palette must not be empty".into()));
        }
        if self.smoothness <= 0.0 || self.smoothness.is_nan() {
            return Err(KrfError::InvalidInput("smoothness must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.sensor_noise)
            || !(0.0..=0.5).contains(&self.operator_noise)
        {
            return Err(KrfError::InvalidInput(
                "noise fractions must lie in [0, 0.5]".into(),
            ));
        }
        if !(0.0..=0.9).contains(&self.nonworking_fraction) {
            return Err(KrfError::InvalidInput(
                "nonworking fraction must lie in [0, 0.9]".into(),
            ));
        }
        if self.records_per_ring < 1 {
            return Err(KrfError::InvalidInput("records_per_ring must be >= 1".into()));
        }
        VariogramModel::new(
            VariogramKind::Spherical,
            self.nugget,
            self.partial_sill,
            self.range_m,
        )?;
        Ok(())
    }

    pub fn n_rings(&self) -> usize {
        (self.length_m / self.ring_width_m).ceil() as usize
    }

    fn latent_model(&self) -> VariogramModel {
        VariogramModel::new(
            VariogramKind::Spherical,
            self.nugget,
            self.partial_sill,
            self.range_m,
        )
        .expect("validated spec")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTunnel {
    /// Ring center chainages.
    pub ring_chainage: Vec<f64>,
    /// Ground truth per ring.
    pub ground_truth: Vec<GroundVector>,
    /// Latent fields, one per palette class, before the softmax.
    pub latent: Vec<Vec<f64>>,
    /// Strength index per ring in [1, 6] (6 = hardest).
    pub strength: Vec<f64>,
    pub records: Vec<OperatingRecord>,
    /// Ground truth of the ring each record belongs to.
    pub record_labels: Vec<GroundVector>,
    /// Ring index per record.
    pub record_ring: Vec<usize>,
    /// True where the record was emitted as a stopped-machine row.
    pub nonworking: Vec<bool>,
    /// Regional scalar series (chainage, strength + noise) per ring.
    pub borehole: Vec<(f64, f64)>,
}

fn hardness(class: BqClass) -> f64 {
    6.0 - class.index() as f64
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps stream accounting simple
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sequential simulation of a zero-mean Gaussian field with the model's
/// variogram at the given 1-D locations, conditioning on a moving window of
/// previous points.
fn simulate_latent(
    locations: &[f64],
    model: &VariogramModel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    const WINDOW: usize = 24;
    let sill = model.sill();
    let cov = |h: f64| -> f64 {
        if h == 0.0 {
            sill
        } else {
            sill - model.evaluate(h)
        }
    };
    let mut field: Vec<f64> = Vec::with_capacity(locations.len());
    for (i, &x) in locations.iter().enumerate() {
        if i == 0 {
            field.push(sill.sqrt() * standard_normal(rng));
            continue;
        }
        let start = i.saturating_sub(WINDOW);
        let prev = &locations[start..i];
        let a: Vec<Vec<f64>> = prev
            .iter()
            .map(|&xi| prev.iter().map(|&xj| cov((xi - xj).abs())).collect())
            .collect();
        let b: Vec<f64> = prev.iter().map(|&xi| cov((xi - x).abs())).collect();
        // simple-kriging conditioning in covariance form
        let system = KrigingSystem::from_parts(a, b.clone(), KrigingMode::PaperLiteral)?;
        let weights = system.solve()?;
        let mean: f64 = weights
            .lambda
            .iter()
            .zip(&field[start..i])
            .map(|(w, g)| w * g)
            .sum();
        let reduction: f64 = weights.lambda.iter().zip(&b).map(|(w, k)| w * k).sum();
        let variance = (sill - reduction).max(1e-12);
        field.push(mean + variance.sqrt() * standard_normal(rng));
    }
    Ok(field)
}

/// Forward-model coefficients: value = base + slope · t, with t the strength
/// index mapped to [0, 1]. Region B scales slopes by 1.12 and bases by 0.94.
fn forward_coefficients(region: Region) -> ([f64; 8], [f64; 8]) {
    let base = [6.0, 70.0, 1.2, 1.1, 45.0, 0.7, 0.8, 15.0];
    let slope = [18.0, -52.0, 2.8, 1.4, -33.0, 1.8, 1.6, 70.0];
    match region {
        Region::A => (base, slope),
        Region::B => {
            let mut b = base;
            let mut s = slope;
            for v in b.iter_mut() {
                *v *= 0.94;
            }
            for v in s.iter_mut() {
                *v *= 1.12;
            }
            (b, s)
        }
    }
}

/// Noise-free operating parameters for a face with strength index `s` in
/// [1, 6].
pub fn forward_model(strength: f64, region: Region) -> [f64; 8] {
    let t = ((strength - 1.0) / 5.0).clamp(0.0, 1.0);
    let (base, slope) = forward_coefficients(region);
    let mut out = [0.0; 8];
    for i in 0..8 {
        let (lo, hi) = PARAMETER_ENVELOPE[i];
        out[i] = (base[i] + slope[i] * t).clamp(lo, hi);
    }
    out
}

fn region_bias(palette: &[BqClass], region: Region) -> Vec<f64> {
    match region {
        Region::A => vec![0.0; palette.len()],
        Region::B => {
            // tilt toward the soft end of the palette
            let k = palette.len() as f64;
            palette
                .iter()
                .enumerate()
                .map(|(i, _)| 0.35 * (i as f64 - (k - 1.0) / 2.0) / (k - 1.0).max(1.0))
                .collect()
        }
    }
}

/// Generate the ground profile and the telemetry stream for one tunnel.
#[allow(clippy::needless_range_loop)]
pub fn generate_tunnel(spec: &TunnelSpec) -> Result<GeneratedTunnel> {
    spec.validate()?;
    let n_rings = spec.n_rings();
    let model = spec.latent_model();
    let ring_chainage: Vec<f64> = (0..n_rings)
        .map(|r| (r as f64 + 0.5) * spec.ring_width_m)
        .collect();

    // latent field per palette class, independent sub-streams
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(spec.palette.len());
    for (c, _) in spec.palette.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, 1 + c as u64);
        latent.push(simulate_latent(&ring_chainage, &model, &mut rng)?);
    }

    let bias = region_bias(&spec.palette, spec.region);
    let mut ground_truth = Vec::with_capacity(n_rings);
    let mut strength = Vec::with_capacity(n_rings);
    for r in 0..n_rings {
        let mut fractions = [0.0; 6];
        let logits: Vec<f64> = spec
            .palette
            .iter()
            .enumerate()
            .map(|(c, _)| (latent[c][r] + bias[c]) / spec.smoothness)
            .collect();
        let max_logit = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expo: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
        let total: f64 = expo.iter().sum();
        for (c, class) in spec.palette.iter().enumerate() {
            fractions[class.index()] = expo[c] / total;
        }
        let g = GroundVector::new(fractions)?;
        strength.push(
            g.fractions()
                .iter()
                .enumerate()
                .map(|(i, f)| f * hardness(BqClass::from_index(i).expect("index")))
                .sum(),
        );
        ground_truth.push(g);
    }

    // telemetry
    let mut sensor_rng = stream_rng(spec.seed, 100);
    let mut operator_rng = stream_rng(spec.seed, 101);
    let mut nonworking_rng = stream_rng(spec.seed, 102);
    let (_, slope) = forward_coefficients(spec.region);
    let n_records = n_rings * spec.records_per_ring;
    let mut records = Vec::with_capacity(n_records);
    let mut record_labels = Vec::with_capacity(n_records);
    let mut record_ring = Vec::with_capacity(n_records);
    let mut nonworking = Vec::with_capacity(n_records);
    let mut k = 0usize;
    for r in 0..n_rings {
        let clean = forward_model(strength[r], spec.region);
        let operator_offset: [f64; 8] = std::array::from_fn(|i| {
            spec.operator_noise * slope[i].abs() * standard_normal(&mut operator_rng)
        });
        for j in 0..spec.records_per_ring {
            let mut values = [0.0; 8];
            for i in 0..8 {
                let (lo, hi) = PARAMETER_ENVELOPE[i];
                let sensor = spec.sensor_noise * slope[i].abs() * standard_normal(&mut sensor_rng);
                values[i] = (clean[i] + operator_offset[i] + sensor).clamp(lo, hi);
            }
            let stopped = nonworking_rng.gen_bool(spec.nonworking_fraction);
            if stopped {
                // machine at rest: the drive parameters read zero
                values[0] = 0.0; // thrust
                values[1] = 0.0; // advance rate
                values[2] = 0.0; // torque
                values[3] = 0.0; // cutter speed
                values[4] = 0.0; // penetration
            }
            let chainage =
                r as f64 * spec.ring_width_m + (j as f64 + 0.5) * spec.ring_width_m
                    / spec.records_per_ring as f64;
            records.push(OperatingRecord {
                chainage,
                timestamp: 60.0 * k as f64,
                thrust: values[0],
                advance_rate: values[1],
                torque: values[2],
                cutter_speed: values[3],
                penetration: values[4],
                chamber_pressure: values[5],
                foam_volume: values[6],
                water_volume: values[7],
            });
            record_labels.push(ground_truth[r]);
            record_ring.push(r);
            nonworking.push(stopped);
            k += 1;
        }
    }

    let mut borehole_rng = stream_rng(spec.seed, 103);
    let borehole: Vec<(f64, f64)> = ring_chainage
        .iter()
        .zip(&strength)
        .map(|(&x, &s)| (x, s + spec.borehole_noise * standard_normal(&mut borehole_rng)))
        .collect();

    Ok(GeneratedTunnel {
        ring_chainage,
        ground_truth,
        latent,
        strength,
        records,
        record_labels,
        record_ring,
        nonworking,
        borehole,
    })
}

/// Decompose a ring's fraction vector into horizontal strata rows
/// `(class, thickness)` that tile the face diameter.
pub fn strata_rows(g: &GroundVector, face_diameter: f64) -> Vec<(BqClass, f64)> {
    g.fractions()
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0.0)
        .map(|(i, &f)| {
            (
                BqClass::from_index(i).expect("index in range"),
                f * face_diameter,
            )
        })
        .collect()
}
