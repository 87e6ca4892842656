//! Train/test subject splits, per-test episode grouping and circular-shift folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, SubjectRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpisodeError {
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    Ratio(f64),
    #[error("episode size must be at least 1")]
    ZeroK,
    #[error("training split of {train} subjects is smaller than episode size {k}")]
    Split { train: usize, k: usize },
    #[error("{count} subjects cannot form an episode of size {k}")]
    TooFewSubjects { count: usize, k: usize },
    #[error("no record for subject {subject_id} in test {test_id}")]
    MissingRecord { subject_id: u32, test_id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestOrder {
    /// One shuffled test order shared by all subjects; every episode holds a
    /// single test.
    #[default]
    Global,
    /// Each subject gets its own shuffled test order and episodes group the
    /// records sitting at the same position. Episodes then mix tests and
    /// `Episode::test_id` holds the position instead.
    PerSubject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of subjects used for training.
    pub r: f64,
    pub k: usize,
    pub seed: u64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(EpisodeError::Ratio(self.r));
        }
        if self.k == 0 {
            return Err(EpisodeError::ZeroK);
        }
        Ok(())
    }
}

/// `k` records of one test; the last member is the prediction target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    pub test_id: u32,
    /// Circular shift applied to the original member order.
    pub shift: usize,
    pub members: Vec<SubjectRecord>,
}

impl Episode {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn target(&self) -> &SubjectRecord {
        self.members.last().expect("episodes are never empty")
    }

    pub fn support(&self) -> &[SubjectRecord] {
        &self.members[..self.members.len() - 1]
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.members.iter().map(|m| m.subject_id).collect()
    }
}

/// Seeded shuffle of `subjects`; the first `floor(r·N)` train, the rest test.
pub fn split_train_test(subjects: &[u32], cfg: &SplitConfig) -> Result<(Vec<u32>, Vec<u32>), EpisodeError> {
    cfg.validate()?;
    let n_train = (cfg.r * subjects.len() as f64).floor() as usize;
    if n_train < cfg.k {
        return Err(EpisodeError::Split {
            train: n_train,
            k: cfg.k,
        });
    }
    let mut ids = subjects.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let test = ids.split_off(n_train);
    Ok((ids, test))
}

/// Groups `subjects` into disjoint episodes of exactly `k` per test.
///
/// Tests are visited in a seeded shuffled order; within each test the subject
/// list is reshuffled and cut into consecutive groups of `k`. The last
/// `count mod k` subjects of each test are left out.
pub fn build_episodes(
    subjects: &[u32],
    ds: &Dataset,
    k: usize,
    seed: u64,
    order: TestOrder,
) -> Result<Vec<Episode>, EpisodeError> {
    if k == 0 {
        return Err(EpisodeError::ZeroK);
    }
    if subjects.len() < k {
        return Err(EpisodeError::TooFewSubjects {
            count: subjects.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = ds.test_ids();
    tests.shuffle(&mut rng);
    let mut sorted = subjects.to_vec();
    sorted.sort_unstable();

    let per_subject: Vec<Vec<u32>> = match order {
        TestOrder::Global => Vec::new(),
        TestOrder::PerSubject => sorted
            .iter()
            .map(|_| {
                let mut t = tests.clone();
                t.shuffle(&mut rng);
                t
            })
            .collect(),
    };

    let mut episodes = Vec::new();
    for (slot, &test_id) in tests.iter().enumerate() {
        let mut idx: Vec<usize> = (0..sorted.len()).collect();
        idx.shuffle(&mut rng);
        for group in idx.chunks_exact(k) {
            let members = group
                .iter()
                .map(|&i| {
                    let s = sorted[i];
                    let t = match order {
                        TestOrder::Global => test_id,
                        TestOrder::PerSubject => per_subject[i][slot],
                    };
                    ds.get(s, t).cloned().ok_or(EpisodeError::MissingRecord {
                        subject_id: s,
                        test_id: t,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            episodes.push(Episode {
                id: episodes.len(),
                test_id: match order {
                    TestOrder::Global => test_id,
                    TestOrder::PerSubject => slot as u32,
                },
                shift: 0,
                members,
            });
        }
    }
    Ok(episodes)
}

/// The `k` rotations of an episode. Fold `t` rotates the members left by
/// `t`, so fold `t` targets original member `t - 1` (fold 0 keeps the
/// original target) and every member is the target exactly once.
pub fn circular_shift_folds(e: &Episode) -> Vec<Episode> {
    (0..e.k())
        .map(|t| {
            let mut members = e.members.clone();
            members.rotate_left(t);
            Episode {
                id: e.id,
                test_id: e.test_id,
                shift: (e.shift + t) % e.k(),
                members,
            }
        })
        .collect()
}

/// Fixed sliding windows over one subject order: for every test, subject `p`
/// is predicted from its `k - 1` predecessors (wrapping around). Windows
/// overlap, so each subject is a target once per test.
pub fn sliding_windows(subjects: &[u32], ds: &Dataset, k: usize) -> Result<Vec<Episode>, EpisodeError> {
    if k == 0 {
        return Err(EpisodeError::ZeroK);
    }
    if subjects.len() < k {
        return Err(EpisodeError::TooFewSubjects {
            count: subjects.len(),
            k,
        });
    }
    let n = subjects.len();
    let mut out = Vec::with_capacity(n * ds.test_ids().len());
    for test_id in ds.test_ids() {
        for p in 0..n {
            let members = (0..k)
                .rev()
                .map(|back| {
                    let s = subjects[(p + n - back) % n];
                    ds.get(s, test_id).cloned().ok_or(EpisodeError::MissingRecord {
                        subject_id: s,
                        test_id,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(Episode {
                id: out.len(),
                test_id,
                shift: 0,
                members,
            });
        }
    }
    Ok(out)
}
