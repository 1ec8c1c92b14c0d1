//! Sequential answer sampling with the Bayes-factor stop rule.
//!
//! One run draws a model index from a weight vector, asks an [`AnswerSource`]
//! for that model's next answer, accumulates answer counts and token costs,
//! and stops as soon as the budget is exhausted or the Bayes factor clears the
//! threshold. The returned answer is the plurality answer, with ties broken
//! uniformly at random from the run's own seeded generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{AnswerCounts, AnswerKey, DataError, GenerationDataset};
use crate::posterior::{
    pick_weighted, BfResult, PosteriorCache, PosteriorConfig, PosteriorError, StopReason,
    StopVerdict,
};

#[derive(Debug, thiserror::Error)]
#[error("answer source failed: {0}")]
pub struct SourceError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum AdaptiveError {
    #[error("invalid weight vector: {0}")]
    BadWeights(String),
    #[error("invalid stopping config: {0}")]
    BadConfig(String),
    #[error("weight vector has {weights} entries but the source serves {models} models")]
    DimensionMismatch { weights: usize, models: usize },
    #[error("source failed after {n_completed} completed draws ({tokens_used} tokens): {source}")]
    SourceFailed {
        n_completed: u32,
        tokens_used: u64,
        source: SourceError,
    },
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Probability weights over models: non-negative entries summing to one
/// within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self, AdaptiveError> {
        if w.is_empty() {
            return Err(AdaptiveError::BadWeights("empty weight vector".into()));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(AdaptiveError::BadWeights(format!(
                "entries must be finite and non-negative, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AdaptiveError::BadWeights(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0);
        WeightVector(vec![1.0 / k as f64; k])
    }

    pub fn point_mass(k: usize, i: usize) -> Self {
        assert!(i < k);
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        WeightVector(w)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Anything that can produce the next answer (and its token cost) for a
/// registered model index.
pub trait AnswerSource {
    fn num_models(&self) -> usize;
    fn next_answer(&mut self, model: usize) -> Result<(AnswerKey, u64), SourceError>;
}

/// Draws one model index according to the weights.
pub fn sample_model(w: &WeightVector, rng: &mut impl Rng) -> usize {
    pick_weighted(w.as_slice(), rng)
}

/// Budget, threshold, posterior settings and the run's generator seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingConfig {
    pub n_max: u32,
    /// Stop when the Bayes factor reaches this value. `f64::INFINITY` means
    /// "never stop early": the run always uses the full budget.
    pub b_threshold: f64,
    pub posterior: PosteriorConfig,
    pub master_seed: u64,
}

impl StoppingConfig {
    fn validate(&self) -> Result<(), AdaptiveError> {
        if self.n_max == 0 {
            return Err(AdaptiveError::BadConfig("n_max must be at least 1".into()));
        }
        if !(self.b_threshold > 0.0) {
            return Err(AdaptiveError::BadConfig(format!(
                "b_threshold must be positive, got {}",
                self.b_threshold
            )));
        }
        self.posterior.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutcome {
    pub answer: AnswerKey,
    pub n_used: u32,
    pub tokens_used: u64,
    pub final_bf: BfResult,
    pub stopped_by: StopReason,
}

/// Runs one adaptive sampling episode with a private posterior memo.
pub fn run_adaptive(
    source: &mut dyn AnswerSource,
    w: &WeightVector,
    cfg: &StoppingConfig,
) -> Result<AdaptiveOutcome, AdaptiveError> {
    let cache = PosteriorCache::new(cfg.posterior);
    run_adaptive_cached(source, w, cfg, &cache)
}

/// Runs one adaptive sampling episode against a shared posterior memo. The
/// memo must have been built for the same posterior config; results are
/// identical to [`run_adaptive`], the memo only avoids recomputing
/// Monte-Carlo estimates for count patterns seen before.
pub fn run_adaptive_cached(
    source: &mut dyn AnswerSource,
    w: &WeightVector,
    cfg: &StoppingConfig,
    cache: &PosteriorCache,
) -> Result<AdaptiveOutcome, AdaptiveError> {
    cfg.validate()?;
    if *cache.config() != cfg.posterior {
        return Err(PosteriorError::ConfigMismatch.into());
    }
    if w.dim() != source.num_models() {
        return Err(AdaptiveError::DimensionMismatch {
            weights: w.dim(),
            models: source.num_models(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let mut counts = AnswerCounts::new();
    let mut tokens = 0u64;
    let mut n = 0u32;
    let (reason, bf) = loop {
        let model = sample_model(w, &mut rng);
        let (answer, tok) = match source.next_answer(model) {
            Ok(pair) => pair,
            Err(e) => {
                return Err(AdaptiveError::SourceFailed {
                    n_completed: n,
                    tokens_used: tokens,
                    source: e,
                })
            }
        };
        n += 1;
        counts.add(answer);
        tokens += tok;
        // An infinite threshold never stops early, so the evidence is only
        // worth computing on the budget round. The posterior draws from its
        // own per-call seeded generator, so skipping it here changes nothing.
        if !cfg.b_threshold.is_finite() && n < cfg.n_max {
            continue;
        }
        match cache.should_stop(&counts, n, cfg.n_max, cfg.b_threshold)? {
            StopVerdict::Stop { reason, bf } => break (reason, bf),
            StopVerdict::Continue { .. } => {}
        }
    };

    let leaders = counts.leaders();
    let pick = if leaders.len() == 1 {
        0
    } else {
        rng.gen_range(0..leaders.len())
    };
    Ok(AdaptiveOutcome {
        answer: leaders[pick].clone(),
        n_used: n,
        tokens_used: tokens,
        final_bf: bf,
        stopped_by: reason,
    })
}

/// Replays recorded generations by sampling with replacement.
pub struct ReplaySource<'a> {
    per_model: Vec<&'a [(AnswerKey, u64)]>,
    rng: ChaCha8Rng,
}

impl<'a> ReplaySource<'a> {
    /// Source over an explicit model subset, in the given order. Every model
    /// must have at least one record for the problem.
    pub fn new(
        ds: &'a GenerationDataset,
        models: &[String],
        problem: &str,
        seed: u64,
    ) -> Result<Self, AdaptiveError> {
        if models.is_empty() {
            return Err(AdaptiveError::BadConfig("no models selected".into()));
        }
        let mut per_model = Vec::with_capacity(models.len());
        for m in models {
            per_model.push(ds.records_for(m, problem)?);
        }
        Ok(ReplaySource {
            per_model,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

/// Replay source over all models in the dataset, in dataset order.
pub fn replay_source<'a>(
    ds: &'a GenerationDataset,
    problem: &str,
    seed: u64,
) -> Result<ReplaySource<'a>, AdaptiveError> {
    ReplaySource::new(ds, ds.models(), problem, seed)
}

impl AnswerSource for ReplaySource<'_> {
    fn num_models(&self) -> usize {
        self.per_model.len()
    }

    fn next_answer(&mut self, model: usize) -> Result<(AnswerKey, u64), SourceError> {
        let recs = self
            .per_model
            .get(model)
            .ok_or_else(|| SourceError(format!("model index {model} out of range")))?;
        let idx = self.rng.gen_range(0..recs.len());
        let (answer, tokens) = &recs[idx];
        Ok((answer.clone(), *tokens))
    }
}
