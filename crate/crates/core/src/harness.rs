//! Replay-driven experiment harness.
//!
//! Produces accuracy and cost curves for fixed-size and adaptive sampling,
//! weight-learning curves, model-triple ensemble sweeps, bootstrap error
//! bars and the sample-complexity bound. Every random draw is seeded by
//! hashing the master seed with a role tag, the trial index and the problem
//! id, never with the budget or threshold being measured. Points on
//! different curves therefore share their replay draws (the infinite
//! threshold at budget N reproduces fixed best-of-N byte for byte) and every
//! run with the same master seed is identical.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::adaptive::{
    run_adaptive_cached, AdaptiveError, ReplaySource, StoppingConfig, WeightVector,
};
use crate::datamodel::{DataError, GenerationDataset};
use crate::ensemble::{
    boinf_accuracy, build_instance, max_margin, EnsembleData, EnsembleError, SolveStatus,
};
use crate::posterior::{PosteriorCache, PosteriorConfig, PosteriorError, StopReason};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
}

/// Shared experiment defaults: 100 trials, budget 100, the standard
/// threshold grid, and the posterior settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub trials: u32,
    pub n_max: u32,
    pub b_grid: Vec<f64>,
    pub posterior: PosteriorConfig,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn new(master_seed: u64) -> Self {
        ExperimentConfig {
            trials: 100,
            n_max: 100,
            b_grid: vec![2.0, 3.0, 5.0, 7.0, 10.0, 30.0, 100.0, 300.0],
            posterior: PosteriorConfig::new(0.3, 1000, master_seed)
                .expect("default posterior config is valid"),
            master_seed,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::BadConfig("trials must be at least 1".into()));
        }
        if self.n_max == 0 {
            return Err(HarnessError::BadConfig("n_max must be at least 1".into()));
        }
        if self.b_grid.iter().any(|b| !(*b > 0.0)) {
            return Err(HarnessError::BadConfig(
                "thresholds must be positive".into(),
            ));
        }
        self.posterior.validate()?;
        Ok(())
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::new(0)
    }
}

/// Derives a stream seed from the master seed. The hash covers the role tag,
/// the trial index and the problem id but never the stopping setting, so all
/// settings see the same draws.
pub fn subseed(master: u64, role: &str, trial: u32, problem: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0u8]);
    h.update(role.as_bytes());
    h.update([0u8]);
    h.update(trial.to_le_bytes());
    h.update(problem.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// One stopping setting on a curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    FixedN(u32),
    AdaptiveB(f64),
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Setting::FixedN(n) => write!(f, "fixed_n={n}"),
            Setting::AdaptiveB(b) => write!(f, "adaptive_b={b}"),
        }
    }
}

/// Aggregated measurement for one setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub setting: Setting,
    pub mean_samples: f64,
    pub mean_tokens: f64,
    pub accuracy: f64,
    /// Two bootstrap standard errors of the accuracy over trials.
    pub ci_halfwidth: f64,
}

/// Raw per-trial measurements for one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStats {
    pub per_trial_accuracy: Vec<f64>,
    pub per_trial_samples: Vec<f64>,
    pub per_trial_tokens: Vec<f64>,
}

impl PointStats {
    pub fn to_curve_point(&self, setting: Setting, boot_seed: u64) -> CurvePoint {
        let (accuracy, ci_halfwidth) =
            bootstrap_ci(&self.per_trial_accuracy, 1000, boot_seed);
        CurvePoint {
            setting,
            mean_samples: mean(&self.per_trial_samples),
            mean_tokens: mean(&self.per_trial_tokens),
            accuracy,
            ci_halfwidth,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Measures one stopping setting by replaying every problem `trials` times.
/// Trials run in parallel; results are collected in trial order and all
/// seeds are derived per (trial, problem), so the outcome is independent of
/// the thread schedule.
#[allow(clippy::too_many_arguments)]
pub fn run_point(
    ds: &GenerationDataset,
    models: &[String],
    w: &WeightVector,
    b_threshold: f64,
    n_max: u32,
    trials: u32,
    posterior: PosteriorConfig,
    master_seed: u64,
    cache: &PosteriorCache,
) -> Result<PointStats, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::BadConfig("trials must be at least 1".into()));
    }
    if ds.problems().is_empty() {
        return Err(HarnessError::BadConfig("dataset has no problems".into()));
    }
    let per_trial: Vec<(f64, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<(f64, f64, f64), HarnessError> {
            let mut correct = 0u32;
            let mut samples = 0u64;
            let mut tokens = 0u64;
            for spec in ds.problems() {
                let mut source = ReplaySource::new(
                    ds,
                    models,
                    &spec.id,
                    subseed(master_seed, "replay", trial, &spec.id),
                )?;
                let cfg = StoppingConfig {
                    n_max,
                    b_threshold,
                    posterior,
                    master_seed: subseed(master_seed, "pick", trial, &spec.id),
                };
                let outcome = run_adaptive_cached(&mut source, w, &cfg, cache)?;
                if outcome.answer == spec.gold {
                    correct += 1;
                }
                samples += u64::from(outcome.n_used);
                tokens += outcome.tokens_used;
            }
            let q = ds.problems().len() as f64;
            Ok((
                f64::from(correct) / q,
                samples as f64 / q,
                tokens as f64 / q,
            ))
        })
        .collect::<Result<_, _>>()?;
    Ok(PointStats {
        per_trial_accuracy: per_trial.iter().map(|t| t.0).collect(),
        per_trial_samples: per_trial.iter().map(|t| t.1).collect(),
        per_trial_tokens: per_trial.iter().map(|t| t.2).collect(),
    })
}

/// Accuracy/cost curve for fixed sample sizes: each point replays with the
/// stopping evidence disabled and the budget pinned to the grid value.
pub fn fixed_bon_curve(
    ds: &GenerationDataset,
    models: &[String],
    w: &WeightVector,
    n_grid: &[u32],
    cfg: &ExperimentConfig,
) -> Result<Vec<CurvePoint>, HarnessError> {
    cfg.validate()?;
    let cache = PosteriorCache::new(cfg.posterior);
    n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let stats = run_point(
                ds,
                models,
                w,
                f64::INFINITY,
                n,
                cfg.trials,
                cfg.posterior,
                cfg.master_seed,
                &cache,
            )?;
            Ok(stats.to_curve_point(
                Setting::FixedN(n),
                subseed(cfg.master_seed, "boot-fixed", i as u32, ""),
            ))
        })
        .collect()
}

/// Accuracy/cost curve for the adaptive rule over the threshold grid.
pub fn adaptive_curve(
    ds: &GenerationDataset,
    models: &[String],
    w: &WeightVector,
    cfg: &ExperimentConfig,
) -> Result<Vec<CurvePoint>, HarnessError> {
    cfg.validate()?;
    let cache = PosteriorCache::new(cfg.posterior);
    cfg.b_grid
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let stats = run_point(
                ds,
                models,
                w,
                b,
                cfg.n_max,
                cfg.trials,
                cfg.posterior,
                cfg.master_seed,
                &cache,
            )?;
            Ok(stats.to_curve_point(
                Setting::AdaptiveB(b),
                subseed(cfg.master_seed, "boot-adaptive", i as u32, ""),
            ))
        })
        .collect()
}

/// One adaptive episode per problem, reported in full; the detail view
/// behind the curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub problem: String,
    pub answer: String,
    pub correct: bool,
    pub n_used: u32,
    pub tokens_used: u64,
    pub bayes_factor: f64,
    pub stopped_by: StopReason,
}

pub fn simulate_problems(
    ds: &GenerationDataset,
    models: &[String],
    w: &WeightVector,
    b_threshold: f64,
    n_max: u32,
    posterior: PosteriorConfig,
    master_seed: u64,
) -> Result<Vec<SimRow>, HarnessError> {
    let cache = PosteriorCache::new(posterior);
    let mut rows = Vec::with_capacity(ds.problems().len());
    for spec in ds.problems() {
        let mut source = ReplaySource::new(
            ds,
            models,
            &spec.id,
            subseed(master_seed, "replay", 0, &spec.id),
        )?;
        let cfg = StoppingConfig {
            n_max,
            b_threshold,
            posterior,
            master_seed: subseed(master_seed, "pick", 0, &spec.id),
        };
        let outcome = run_adaptive_cached(&mut source, w, &cfg, &cache)?;
        rows.push(SimRow {
            problem: spec.id.clone(),
            correct: outcome.answer == spec.gold,
            answer: outcome.answer.to_string(),
            n_used: outcome.n_used,
            tokens_used: outcome.tokens_used,
            bayes_factor: outcome.final_bf.bf,
            stopped_by: outcome.stopped_by,
        });
    }
    Ok(rows)
}

/// Mean of `values` and two bootstrap standard errors, from `resamples`
/// seeded resamples with replacement. A single value has zero width.
pub fn bootstrap_ci(values: &[f64], resamples: u32, seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let m = mean(values);
    if values.len() < 2 || resamples == 0 {
        return (m, 0.0);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // Resampling the centered values keeps the variance exact (identically
    // zero for constant inputs) instead of losing it to cancellation.
    let centered: Vec<f64> = values.iter().map(|v| v - m).collect();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..values.len() {
            acc += centered[rng.gen_range(0..values.len())];
        }
        let rm = acc / values.len() as f64;
        sum += rm;
        sumsq += rm * rm;
    }
    let n = f64::from(resamples);
    let var = (sumsq - sum * sum / n) / (n - 1.0);
    (m, 2.0 * var.max(0.0).sqrt())
}

/// Smallest round count n such that running a union bound over all rounds
/// m >= n, each contributing 2s exp(-m gap^2 / 2), stays within delta:
///
///   2s exp(-n gap^2 / 2) / (1 - exp(-gap^2 / 2)) <= delta.
///
/// Closed-form start, then adjusted by direct substitution so the returned
/// n is exactly the threshold where the bound first holds.
pub fn hoeffding_n0(delta: f64, gap: f64, s: u32) -> Result<u64, HarnessError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(HarnessError::BadConfig(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(HarnessError::BadConfig(format!(
            "gap must be in (0, 1], got {gap}"
        )));
    }
    if s < 2 {
        return Err(HarnessError::BadConfig(
            "need at least two answer categories".into(),
        ));
    }
    let lam = gap * gap / 2.0;
    let denom = 1.0 - (-lam).exp();
    let bound = |n: f64| 2.0 * f64::from(s) * (-lam * n).exp() / denom;
    let start = (2.0 / (gap * gap)) * (2.0 * f64::from(s) / (delta * denom)).ln();
    let mut n = start.ceil().max(1.0) as u64;
    while n > 1 && bound((n - 1) as f64) <= delta {
        n -= 1;
    }
    while bound(n as f64) > delta {
        n += 1;
    }
    Ok(n)
}

/// Mean full-set vote accuracy of weights trained on random problem subsets
/// of one size. Size zero means the uniform baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningPoint {
    pub train_size: usize,
    pub mean_accuracy: f64,
    pub ci_halfwidth: f64,
}

pub fn weight_learning_curve(
    data: &EnsembleData,
    sizes: &[usize],
    reps: u32,
    tol: f64,
    node_budget: u64,
    master_seed: u64,
) -> Result<Vec<LearningPoint>, HarnessError> {
    use rand::{Rng, SeedableRng};
    if reps == 0 {
        return Err(HarnessError::BadConfig("reps must be at least 1".into()));
    }
    let q = data.problems().len();
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size > q {
            return Err(HarnessError::BadConfig(format!(
                "train size {size} exceeds {q} problems"
            )));
        }
        let mut accs = Vec::with_capacity(reps as usize);
        for rep in 0..reps {
            let w = if size == 0 {
                WeightVector::uniform(data.num_models())
            } else {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(subseed(
                    master_seed,
                    "train",
                    rep,
                    &format!("size={size}"),
                ));
                // Partial Fisher-Yates: the first `size` entries are a
                // uniform draw without replacement.
                let mut idx: Vec<usize> = (0..q).collect();
                for i in 0..size {
                    let j = rng.gen_range(i..q);
                    idx.swap(i, j);
                }
                let sub = data.subset(&idx[..size])?;
                let inst = build_instance(&sub);
                let sol = max_margin(&inst, tol, node_budget)?;
                if sol.status != SolveStatus::Optimal {
                    return Err(HarnessError::BadConfig(format!(
                        "node budget {node_budget} exhausted while training on {size} problems"
                    )));
                }
                sol.w
            };
            accs.push(boinf_accuracy(data, &w)?);
        }
        let (mean_accuracy, ci_halfwidth) = bootstrap_ci(
            &accs,
            1000,
            subseed(master_seed, "boot-train", 0, &format!("size={size}")),
        );
        points.push(LearningPoint {
            train_size: size,
            mean_accuracy,
            ci_halfwidth,
        });
    }
    Ok(points)
}

/// Optimised three-model ensemble versus its best member, for every model
/// triple in the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleRow {
    pub models: Vec<String>,
    pub weights: Vec<f64>,
    pub ensemble_accuracy: f64,
    pub best_single_accuracy: f64,
    pub improved: bool,
}

pub fn transfer_eval(
    data: &EnsembleData,
    tol: f64,
    node_budget: u64,
) -> Result<Vec<TripleRow>, HarnessError> {
    let k = data.num_models();
    if k < 3 {
        return Err(HarnessError::BadConfig(format!(
            "need at least three models, got {k}"
        )));
    }
    let mut rows = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            for l in (j + 1)..k {
                let sub = data.subset_models(&[i, j, l])?;
                let inst = build_instance(&sub);
                let sol = max_margin(&inst, tol, node_budget)?;
                if sol.status != SolveStatus::Optimal {
                    return Err(HarnessError::BadConfig(format!(
                        "node budget {node_budget} exhausted on triple {i},{j},{l}"
                    )));
                }
                let ensemble_accuracy = boinf_accuracy(&sub, &sol.w)?;
                let mut best_single_accuracy = f64::NEG_INFINITY;
                for m in 0..3 {
                    let acc =
                        boinf_accuracy(&sub, &WeightVector::point_mass(3, m))?;
                    best_single_accuracy = best_single_accuracy.max(acc);
                }
                rows.push(TripleRow {
                    models: sub.models().to_vec(),
                    weights: sol.w.as_slice().to_vec(),
                    ensemble_accuracy,
                    best_single_accuracy,
                    improved: ensemble_accuracy >= best_single_accuracy,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with one row per curve point. Plain float formatting keeps the file
/// byte-stable for a given seed.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("setting,mean_samples,mean_tokens,accuracy,ci_halfwidth\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.setting, p.mean_samples, p.mean_tokens, p.accuracy, p.ci_halfwidth
        ));
    }
    out
}

pub fn learning_csv(points: &[LearningPoint]) -> String {
    let mut out = String::from("train_size,mean_accuracy,ci_halfwidth\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            p.train_size, p.mean_accuracy, p.ci_halfwidth
        ));
    }
    out
}

pub fn transfer_csv(rows: &[TripleRow]) -> String {
    let mut out =
        String::from("models,weights,ensemble_accuracy,best_single_accuracy,improved\n");
    for r in rows {
        let weights: Vec<String> = r.weights.iter().map(|w| w.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.models.join("+"),
            weights.join("|"),
            r.ensemble_accuracy,
            r.best_single_accuracy,
            r.improved
        ));
    }
    out
}

/// Distinct answers across the whole dataset; a quick ingest summary.
pub fn answer_domain(ds: &GenerationDataset) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for spec in ds.problems() {
        for m in ds.models() {
            if let Ok(recs) = ds.records_for(m, &spec.id) {
                for (a, _) in recs {
                    set.insert(a.to_string());
                }
            }
        }
    }
    set
}
