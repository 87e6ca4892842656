//! Synthetic stand-in for a subject × reading-test eye-tracking dataset.
//!
//! Every subject has a latent reading ability and every test a latent
//! difficulty. The 19 base features are noisy, heterogeneously scaled linear
//! read-outs of both; the optional exam scores are per-subject read-outs of
//! ability. Scores add a squared-ability term, an unobserved per-test offset,
//! a persistent per-subject offset and per-record noise. All unobserved terms
//! scale with `noise`, so `noise = 0` makes the score an exact function of the
//! features (and an exact linear one when `nonlinearity = 0` too).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DataError, FeatureSchema, SubjectRecord};

/// Subjects `1..=N` are cut into consecutive blocks that share a per-test
/// offset in both score and features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStructure {
    pub block_size: usize,
    /// Standard deviation of the shared offset, in score points.
    pub strength: f64,
}

impl Default for GroupStructure {
    fn default() -> Self {
        Self {
            block_size: 3,
            strength: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subjects: usize,
    pub tests: usize,
    pub features: usize,
    pub seed: u64,
    /// Multiplies every unobserved noise source.
    pub noise: f64,
    /// Weight of the squared-ability term.
    pub nonlinearity: f64,
    pub structure: Option<GroupStructure>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 68,
            tests: 42,
            features: 22,
            seed: 7,
            noise: 0.5,
            nonlinearity: 1.0,
            structure: None,
        }
    }
}

// score points
const BASE_SCORE: f64 = 56.0;
const ABILITY_SLOPE: f64 = 11.0;
const DIFFICULTY_SLOPE: f64 = -5.0;
const SQUARED_ABILITY: f64 = 3.0;
const TEST_OFFSET_SD: f64 = 6.0;
const SUBJECT_OFFSET_SD: f64 = 4.0;
const RECORD_NOISE_SD: f64 = 1.0;

/// How strongly each exam score tracks ability; the first (chinese) is the
/// most informative.
const EXAM_LOADINGS: [f64; 3] = [0.9, 0.45, 0.35];

struct FeatureModel {
    offset: f64,
    scale: f64,
    ability: f64,
    difficulty: f64,
    noise: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Builds a complete, normalised `subjects × tests` dataset.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    let schema = FeatureSchema::with_dim(cfg.features)?;
    assert!(cfg.subjects >= 2 && cfg.tests >= 1, "need at least two subjects and one test");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let base: Vec<FeatureModel> = (0..super::BASE_FEATURES)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            FeatureModel {
                offset: rng.gen_range(-5.0..5.0),
                scale: 10f64.powf(rng.gen_range(-1.0..2.0)),
                ability: sign * rng.gen_range(0.2..0.6),
                difficulty: rng.gen_range(-0.6..0.6),
                noise: rng.gen_range(0.6..1.2),
            }
        })
        .collect();

    let ability: Vec<f64> = (0..cfg.subjects).map(|_| normal(&mut rng)).collect();
    let subject_offset: Vec<f64> = (0..cfg.subjects).map(|_| normal(&mut rng)).collect();
    let exam_noise: Vec<[f64; 3]> = (0..cfg.subjects)
        .map(|_| [normal(&mut rng), normal(&mut rng), normal(&mut rng)])
        .collect();
    let difficulty: Vec<f64> = (0..cfg.tests).map(|_| normal(&mut rng)).collect();
    let test_offset: Vec<f64> = (0..cfg.tests).map(|_| normal(&mut rng)).collect();
    let group_offset: Vec<Vec<f64>> = match cfg.structure {
        Some(g) => {
            let blocks = cfg.subjects.div_ceil(g.block_size.max(1));
            (0..blocks)
                .map(|_| (0..cfg.tests).map(|_| normal(&mut rng)).collect())
                .collect()
        }
        None => Vec::new(),
    };

    let mut ds = Dataset::new(schema, format!("synthetic:{}", cfg.seed), true);
    for s in 0..cfg.subjects {
        let a = ability[s];
        for t in 0..cfg.tests {
            let b = difficulty[t];
            let group = cfg.structure.map_or(0.0, |g| {
                g.strength * group_offset[s / g.block_size.max(1)][t]
            });

            let mut features: Vec<f64> = base
                .iter()
                .map(|m| {
                    let eps = normal(&mut rng);
                    let latent = m.ability * a + m.difficulty * b + 0.1 * m.ability * group * cfg.noise
                        + cfg.noise * m.noise * eps;
                    m.offset + m.scale * latent
                })
                .collect();
            if cfg.features == 22 {
                for (e, loading) in EXAM_LOADINGS.iter().enumerate() {
                    let spread = (1.0 - loading * loading).sqrt();
                    features.push(60.0 + 15.0 * (loading * a + cfg.noise * spread * exam_noise[s][e]));
                }
            }

            let record_noise = normal(&mut rng);
            let raw = BASE_SCORE
                + ABILITY_SLOPE * a
                + DIFFICULTY_SLOPE * b
                + cfg.nonlinearity * SQUARED_ABILITY * (a * a - 1.0)
                + cfg.noise
                    * (TEST_OFFSET_SD * test_offset[t]
                        + SUBJECT_OFFSET_SD * subject_offset[s]
                        + RECORD_NOISE_SD * record_noise
                        + group);
            ds.insert(SubjectRecord {
                subject_id: s as u32 + 1,
                test_id: t as u32 + 1,
                features,
                score: raw.clamp(0.0, 100.0) / 100.0,
            });
        }
    }
    Ok(ds)
}
