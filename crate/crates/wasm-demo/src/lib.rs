//! wasm-bindgen wrapper around a small end-to-end run. Every method returns
//! JSON for the page to render.

use fewshot_core::data::{generate_synthetic, SynthConfig};
use fewshot_core::experiment::{prepare, run_experiment, ExperimentConfig, ExperimentOutcome};
use fewshot_core::shapley::{ranking, shapley_impact_each};
use fewshot_core::trainer::{evaluate, CvMode};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    outcome: ExperimentOutcome,
    names: Vec<String>,
    /// Standardised training records, the marginal background for attribution.
    background: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    losses: &'a [f64],
    train_mae: f64,
    test_mae: f64,
    test_sd: f64,
    train_subjects: usize,
    test_subjects: usize,
    episodes: usize,
}

#[derive(Serialize)]
struct Member {
    subject_id: u32,
    actual: f64,
    predicted: f64,
}

#[derive(Serialize)]
struct EpisodeView {
    test_id: u32,
    members: Vec<Member>,
}

#[derive(Serialize)]
struct Impact {
    feature: String,
    mean_abs_phi: f64,
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
}

#[wasm_bindgen]
impl Demo {
    /// Generates a synthetic cohort and trains on it. Kept small so a run
    /// finishes in a few seconds in the browser.
    #[wasm_bindgen(constructor)]
    pub fn new(subjects: usize, tests: usize, k: usize, epochs: usize, seed: u64) -> Result<Demo, JsError> {
        let ds = generate_synthetic(&SynthConfig {
            subjects,
            tests,
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| JsError::new(&e.to_string()))?;
        let mut cfg = ExperimentConfig {
            r: 0.75,
            k,
            hidden: 6,
            depth: 2,
            seed,
            ..ExperimentConfig::default()
        };
        cfg.train.epochs = epochs;
        let outcome = run_experiment(&ds, &cfg).map_err(|e| JsError::new(&e.to_string()))?;
        let background = prepare(&ds, outcome.stats.as_ref())
            .records_of(&outcome.train_subjects)
            .map(|r| r.features.clone())
            .collect();
        Ok(Demo {
            names: ds.schema.names.clone(),
            outcome,
            background,
        })
    }

    /// Loss curve and headline metrics.
    pub fn summary(&self) -> String {
        let o = &self.outcome;
        to_json(&TrainSummary {
            losses: &o.report.epoch_losses,
            train_mae: o.report.train.metrics.mae,
            test_mae: o.test.metrics.mae,
            test_sd: o.test.metrics.sd,
            train_subjects: o.train_subjects.len(),
            test_subjects: o.test_subjects.len(),
            episodes: o.test_episodes.len(),
        })
    }

    /// Every member of one held-out episode, each predicted from the others.
    pub fn episode(&self, index: usize) -> Result<String, JsError> {
        let episodes = &self.outcome.test_episodes;
        let e = episodes
            .get(index % episodes.len().max(1))
            .ok_or_else(|| JsError::new("no test episodes"))?;
        let report = evaluate(&self.outcome.model, std::slice::from_ref(e), CvMode::Full)
            .map_err(|e| JsError::new(&e.to_string()))?;
        let members = report
            .rows
            .iter()
            .map(|r| Member {
                subject_id: r.subject_id,
                actual: r.truth * 100.0,
                predicted: r.prediction.clamp(0.0, 1.0) * 100.0,
            })
            .collect();
        Ok(to_json(&EpisodeView {
            test_id: e.test_id,
            members,
        }))
    }

    /// Mean |Shapley value| per feature over the held-out targets, largest
    /// first.
    pub fn impact(&self, samples: usize) -> String {
        let o = &self.outcome;
        let model = &o.model;
        let points: Vec<_> = o
            .test_episodes
            .iter()
            .map(|e| {
                let f = move |x: &[f64]| {
                    let mut probe = e.clone();
                    probe.members.last_mut().expect("non-empty").features = x.to_vec();
                    model.predict(&probe).map_or(f64::NAN, |p| p * 100.0)
                };
                (f, e.target().features.clone())
            })
            .collect();
        let report = shapley_impact_each(&points, &self.background, samples.max(1), o.seeds.model);
        let rows: Vec<Impact> = ranking(&report)
            .into_iter()
            .map(|j| Impact {
                feature: self.names[j].clone(),
                mean_abs_phi: report.mean_abs[j],
            })
            .collect();
        to_json(&rows)
    }
}
