//! Seeded synthetic data with a sigmoid bias mechanism.
//!
//! Each row draws `s ~ Bernoulli(p_group1)`, then `e` from a normal with the
//! group's mean, rounded and re-drawn until it lands in the E domain, then
//!
//! ```text
//! z = round(100·σ(e/10 − 5)·(1 + factor_s) + ε),   ε ~ N(noise.mean, noise.sd)
//! ```
//!
//! clamped into the Z domain, and `y = threshold(e)`.
//!
//! The generator is ChaCha8 seeded from a 64-bit seed; the draw order per
//! row is fixed (`s`, then `e` attempts, then `ε`), so equal configurations
//! produce identical tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DecisionThreshold, Domain, GroupLabel, SampleTable, TypeError};

pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("row {row}: no value inside the E domain after {MAX_REJECTIONS} draws")]
    RejectionLimit { row: usize },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Either an inclusive integer range or an explicit value list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Range { min: i64, max: i64 },
    Values { values: Vec<i64> },
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain, TypeError> {
        match self {
            DomainSpec::Range { min, max } => Domain::range(*min, *max),
            DomainSpec::Values { values } => Domain::new(values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    pub factor0: f64,
    pub factor1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub mean: f64,
    /// Standard deviation of ε.
    pub sd: f64,
}

/// Random number generator family. Only one is supported; the field exists
/// so data files can state which stream produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RngKind {
    #[default]
    Chacha8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub p_group1: f64,
    pub mean0: f64,
    pub mean1: f64,
    pub sd: f64,
    pub e_domain: DomainSpec,
    pub z_domain: DomainSpec,
    pub bias: BiasConfig,
    pub noise: NoiseConfig,
    pub threshold: DecisionThreshold,
    pub seed: u64,
    pub rng: RngKind,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_samples: 30_000,
            p_group1: 0.5,
            mean0: 40.0,
            mean1: 80.0,
            sd: 30.0,
            e_domain: DomainSpec::Range { min: 0, max: 99 },
            z_domain: DomainSpec::Range { min: 0, max: 103 },
            bias: BiasConfig { factor0: -0.20, factor1: 0.02 },
            noise: NoiseConfig { mean: 1.0, sd: 0.05 },
            threshold: DecisionThreshold { tau: 80, strict: true },
            seed: 0,
            rng: RngKind::Chacha8,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(Domain, Domain), DatagenError> {
        let invalid = |field, reason: String| Err(DatagenError::Invalid { field, reason });
        if self.n_samples == 0 {
            return invalid("n_samples", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_group1) {
            return invalid("p_group1", format!("must lie in [0, 1], got {}", self.p_group1));
        }
        if !(self.sd > 0.0 && self.sd.is_finite()) {
            return invalid("sd", format!("must be > 0, got {}", self.sd));
        }
        if !(self.noise.sd >= 0.0 && self.noise.sd.is_finite()) {
            return invalid("noise.sd", format!("must be >= 0, got {}", self.noise.sd));
        }
        for (field, v) in [
            ("mean0", self.mean0),
            ("mean1", self.mean1),
            ("noise.mean", self.noise.mean),
            ("bias.factor0", self.bias.factor0),
            ("bias.factor1", self.bias.factor1),
        ] {
            if !v.is_finite() {
                return invalid(field, "must be finite".into());
            }
        }
        let e_domain = self
            .e_domain
            .build()
            .map_err(|e| DatagenError::Invalid { field: "e_domain", reason: e.to_string() })?;
        let z_domain = self
            .z_domain
            .build()
            .map_err(|e| DatagenError::Invalid { field: "z_domain", reason: e.to_string() })?;
        if self.threshold.validate(&e_domain).is_err() {
            return invalid("threshold.tau", format!("{} is outside the E domain", self.threshold.tau));
        }
        Ok((e_domain, z_domain))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Noise-free biased score `100·σ(e/10 − 5)·(1 + factor)`.
pub fn bias_map(e: i64, factor: f64) -> f64 {
    100.0 * sigmoid(e as f64 / 10.0 - 5.0) * (1.0 + factor)
}

/// Rounds `raw` to the nearest integer and clamps it into `domain`.
pub fn discretize(raw: f64, domain: &Domain) -> i64 {
    domain.value(domain.nearest_index(raw.round()))
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SampleTable, DatagenError> {
    let (e_domain, z_domain) = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normals = [
        Normal::new(cfg.mean0, cfg.sd).expect("validated"),
        Normal::new(cfg.mean1, cfg.sd).expect("validated"),
    ];
    let noise = Normal::new(cfg.noise.mean, cfg.noise.sd).expect("validated");
    let factors = [cfg.bias.factor0, cfg.bias.factor1];

    let n = cfg.n_samples;
    let (mut s, mut z, mut e, mut y) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for row in 0..n {
        let group = usize::from(rng.random_bool(cfg.p_group1));
        let value = draw_in_domain(&mut rng, &normals[group], &e_domain).ok_or(DatagenError::RejectionLimit { row })?;
        let eps = noise.sample(&mut rng);
        s.push(GroupLabel(group));
        e.push(value);
        z.push(discretize(bias_map(value, factors[group]) + eps, &z_domain));
        y.push(cfg.threshold.decide(value));
    }
    Ok(SampleTable::with_truth(s, z, e, y)?)
}

fn draw_in_domain(rng: &mut ChaCha8Rng, normal: &Normal<f64>, domain: &Domain) -> Option<i64> {
    for _ in 0..MAX_REJECTIONS {
        let x = normal.sample(rng).round();
        if x.is_finite() && x >= i64::MIN as f64 && x <= i64::MAX as f64 && domain.contains(x as i64) {
            return Some(x as i64);
        }
    }
    None
}

/// SplitMix64 mixing of a base seed with a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut x = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetRole {
    Source,
    Target,
}

impl DatasetRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetRole::Source => "source",
            DatasetRole::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub id: String,
    pub role: DatasetRole,
    pub config: GeneratorConfig,
    pub table: SampleTable,
}

/// Identifier used for the target with the given group-0 mean.
pub fn target_id(mean0: f64) -> String {
    format!("mean0_{mean0}")
}

/// One source table (`base` with even groups) plus one target per `mean0`,
/// each with `p_group1 = p_group1_target` and its own derived seed.
pub fn generate_shift_suite(
    base: &GeneratorConfig,
    mean0_values: &[f64],
    p_group1_target: f64,
) -> Result<Vec<GeneratedDataset>, DatagenError> {
    let mut source_cfg = base.clone();
    source_cfg.p_group1 = 0.5;
    source_cfg.seed = derive_seed(base.seed, 0);
    let mut out = vec![GeneratedDataset {
        id: "source".into(),
        role: DatasetRole::Source,
        table: generate(&source_cfg)?,
        config: source_cfg,
    }];
    for (i, &mean0) in mean0_values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.mean0 = mean0;
        cfg.p_group1 = p_group1_target;
        cfg.seed = derive_seed(base.seed, i as u64 + 1);
        out.push(GeneratedDataset {
            id: target_id(mean0),
            role: DatasetRole::Target,
            table: generate(&cfg)?,
            config: cfg,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_bias_map() {
        // σ(0) = 0.5, so 100·0.5·1.02 + 1 = 52
        let raw = bias_map(50, 0.02) + 1.0;
        assert!((raw - 52.0).abs() < 1e-12);
        assert_eq!(discretize(raw, &Domain::range(0, 103).unwrap()), 52);

        let cfg = GeneratorConfig {
            n_samples: 200,
            p_group1: 1.0,
            mean1: 50.0,
            sd: 1e-9,
            noise: NoiseConfig { mean: 1.0, sd: 0.0 },
            seed: 3,
            ..Default::default()
        };
        let t = generate(&cfg).unwrap();
        assert!(t.e().unwrap().iter().all(|&e| e == Some(50)));
        assert!(t.z().iter().all(|&z| z == 52));
    }

    #[test]
    fn discretize_clamps() {
        let dom = Domain::range(0, 103).unwrap();
        assert_eq!(discretize(-3.2, &dom), 0);
        assert_eq!(discretize(250.0, &dom), 103);
        assert_eq!(discretize(77.5, &dom), 78);
    }

    #[test]
    fn unbiased_mechanism_is_group_symmetric() {
        let cfg = GeneratorConfig {
            n_samples: 2000,
            bias: BiasConfig { factor0: 0.0, factor1: 0.0 },
            noise: NoiseConfig { mean: 0.0, sd: 0.0 },
            seed: 11,
            ..Default::default()
        };
        let t = generate(&cfg).unwrap();
        for (&z, e) in t.z().iter().zip(t.e().unwrap()) {
            let e = e.unwrap();
            assert_eq!(z, (100.0 * sigmoid(e as f64 / 10.0 - 5.0)).round() as i64);
        }
    }

    #[test]
    fn deterministic_and_in_domain() {
        let cfg = GeneratorConfig { n_samples: 5000, seed: 42, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate(&GeneratorConfig { seed: 43, ..cfg.clone() }).unwrap();
        assert_ne!(a, other);
        let e_dom = Domain::range(0, 99).unwrap();
        for (e, y) in a.e().unwrap().iter().zip(a.y().unwrap()) {
            let e = e.unwrap();
            assert!(e_dom.contains(e));
            assert_eq!(y.unwrap(), u8::from(e > 80));
        }
    }

    #[test]
    fn monotone_without_noise() {
        let cfg = GeneratorConfig {
            n_samples: 3000,
            noise: NoiseConfig { mean: 1.0, sd: 0.0 },
            seed: 5,
            ..Default::default()
        };
        let t = generate(&cfg).unwrap();
        for g in 0..2 {
            let mut pairs: Vec<(i64, i64)> = t
                .s()
                .iter()
                .zip(t.e().unwrap())
                .zip(t.z())
                .filter(|((s, _), _)| s.0 == g)
                .map(|((_, e), &z)| (e.unwrap(), z))
                .collect();
            pairs.sort();
            assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn config_validation() {
        let bad = GeneratorConfig { n_samples: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(DatagenError::Invalid { field: "n_samples", .. })));
        let bad = GeneratorConfig { p_group1: 1.5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(DatagenError::Invalid { field: "p_group1", .. })));
        let bad = GeneratorConfig { sd: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(DatagenError::Invalid { field: "sd", .. })));
        let bad = GeneratorConfig { noise: NoiseConfig { mean: 1.0, sd: -1.0 }, ..Default::default() };
        assert!(matches!(bad.validate(), Err(DatagenError::Invalid { field: "noise.sd", .. })));
    }

    #[test]
    fn pathological_config_hits_rejection_limit() {
        let cfg = GeneratorConfig { n_samples: 1, mean0: 1e6, mean1: 1e6, sd: 1.0, ..Default::default() };
        assert_eq!(generate(&cfg), Err(DatagenError::RejectionLimit { row: 0 }));
    }

    #[test]
    fn shift_suite_layout() {
        let base = GeneratorConfig { n_samples: 4000, seed: 9, ..Default::default() };
        let suite = generate_shift_suite(&base, &[40.0, 60.0, 80.0], 0.6).unwrap();
        let ids: Vec<_> = suite.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["source", "mean0_40", "mean0_60", "mean0_80"]);
        let mut seeds: Vec<_> = suite.iter().map(|d| d.config.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
        for d in &suite[1..] {
            let frac = d.table.group_count(GroupLabel(1)) as f64 / d.table.len() as f64;
            // 3σ of a Binomial(4000, 0.6) proportion is ≈ 0.023
            assert!((frac - 0.6).abs() < 0.03, "{frac}");
        }
        assert_eq!(generate_shift_suite(&base, &[], 0.6).unwrap().len(), 1);
    }
}
