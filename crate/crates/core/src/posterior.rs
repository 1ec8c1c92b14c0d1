//! Posterior probability that the current plurality answer is the population
//! majority, under a Dirichlet-process prior over answer distributions, and
//! the Bayes factor built from it.
//!
//! With counts N_1 >= N_2 >= ... >= N_s after n draws and concentration
//! `alpha`, the posterior over the probability masses of the observed answers
//! plus the unobserved tail is Dirichlet(N_1 + 1, ..., N_s + 1, alpha). The
//! leader-is-majority probability is Pr[X_1 >= max of the other components],
//! estimated by Monte Carlo: each component is an independent Gamma(shape, 1)
//! draw and the comparison is scale-free, so no normalisation is needed.
//!
//! Estimates are deterministic: the generator is seeded from the config alone,
//! so identical (counts, config) inputs give bit-identical results.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::datamodel::AnswerCounts;

#[derive(Debug, thiserror::Error)]
pub enum PosteriorError {
    #[error("counts are empty; at least one observation is required")]
    EmptyCounts,
    #[error("invalid posterior config: {0}")]
    BadConfig(String),
    #[error("posterior cache built for a different config")]
    ConfigMismatch,
}

/// Prior concentration, Monte-Carlo sample count, and generator seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorConfig {
    pub alpha: f64,
    pub mc_samples: u32,
    pub seed: u64,
}

impl PosteriorConfig {
    pub fn new(alpha: f64, mc_samples: u32, seed: u64) -> Result<Self, PosteriorError> {
        let cfg = PosteriorConfig {
            alpha,
            mc_samples,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PosteriorError> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(PosteriorError::BadConfig(format!(
                "alpha must be finite and positive, got {}",
                self.alpha
            )));
        }
        if self.mc_samples == 0 {
            return Err(PosteriorError::BadConfig(
                "mc_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Bayes factor for "the current leader is the majority" against the
/// alternative, together with the posterior estimate it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfResult {
    /// Raw Monte-Carlo estimate of the leader-is-majority probability.
    pub p_h1: f64,
    /// Number of distinct observed answers.
    pub s: usize,
    /// s * p / (1 - p). Infinite when every Monte-Carlo draw favoured the
    /// leader; see `saturated`.
    pub bf: f64,
    /// True when p_h1 hit 0 or 1 at Monte-Carlo resolution. A p of exactly 0
    /// is clamped to 1/(2 mc) before forming the ratio so the Bayes factor
    /// stays positive; a p of exactly 1 is reported as an infinite Bayes
    /// factor so that any finite threshold still triggers a stop.
    pub saturated: bool,
}

pub(crate) fn bf_from_posterior(s: usize, p_raw: f64, mc_samples: u32) -> BfResult {
    debug_assert!((0.0..=1.0).contains(&p_raw));
    let s_f = s as f64;
    if p_raw >= 1.0 {
        BfResult {
            p_h1: p_raw,
            s,
            bf: f64::INFINITY,
            saturated: true,
        }
    } else if p_raw <= 0.0 {
        let p = 1.0 / (2.0 * mc_samples as f64);
        BfResult {
            p_h1: p_raw,
            s,
            bf: s_f * p / (1.0 - p),
            saturated: true,
        }
    } else {
        BfResult {
            p_h1: p_raw,
            s,
            bf: s_f * p_raw / (1.0 - p_raw),
            saturated: false,
        }
    }
}

// Dirichlet component shapes: observed counts in leader-first order, each + 1,
// then the bare concentration for the unobserved tail.
fn shapes(counts: &AnswerCounts, alpha: f64) -> Vec<f64> {
    let mut v: Vec<f64> = counts
        .sorted_desc()
        .iter()
        .map(|&(_, c)| c as f64 + 1.0)
        .collect();
    v.push(alpha);
    v
}

/// Monte-Carlo estimate of the posterior probability that the designated
/// plurality answer is the majority of the underlying answer distribution.
pub fn posterior_h1_prob(
    counts: &AnswerCounts,
    cfg: &PosteriorConfig,
) -> Result<f64, PosteriorError> {
    cfg.validate()?;
    if counts.distinct() == 0 {
        return Err(PosteriorError::EmptyCounts);
    }
    let shapes = shapes(counts, cfg.alpha);
    let gammas: Vec<Gamma<f64>> = shapes
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("shape is positive"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hits = 0u64;
    for _ in 0..cfg.mc_samples {
        let leader = gammas[0].sample(&mut rng);
        let mut rest = f64::NEG_INFINITY;
        for g in &gammas[1..] {
            let x = g.sample(&mut rng);
            if x > rest {
                rest = x;
            }
        }
        if leader >= rest {
            hits += 1;
        }
    }
    Ok(hits as f64 / cfg.mc_samples as f64)
}

/// Bayes factor in favour of the current plurality answer being the majority.
pub fn bayes_factor(
    counts: &AnswerCounts,
    cfg: &PosteriorConfig,
) -> Result<BfResult, PosteriorError> {
    let p = posterior_h1_prob(counts, cfg)?;
    Ok(bf_from_posterior(counts.distinct(), p, cfg.mc_samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BayesFactor,
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopVerdict {
    Stop { reason: StopReason, bf: BfResult },
    Continue { bf: BfResult },
}

impl StopVerdict {
    pub fn is_stop(&self) -> bool {
        matches!(self, StopVerdict::Stop { .. })
    }

    pub fn bf(&self) -> &BfResult {
        match self {
            StopVerdict::Stop { bf, .. } => bf,
            StopVerdict::Continue { bf } => bf,
        }
    }
}

/// Stop rule after round `n`: stop on exhausted budget (n >= n_max) first,
/// otherwise on Bayes factor >= b. An infinite `b` means "never stop early",
/// so a saturated infinite Bayes factor does not trigger it.
pub fn should_stop(
    counts: &AnswerCounts,
    n: u32,
    cfg: &PosteriorConfig,
    n_max: u32,
    b: f64,
) -> Result<StopVerdict, PosteriorError> {
    if !(b > 0.0) {
        return Err(PosteriorError::BadConfig(format!(
            "stop threshold must be positive, got {b}"
        )));
    }
    let bf = bayes_factor(counts, cfg)?;
    if n >= n_max {
        return Ok(StopVerdict::Stop {
            reason: StopReason::Budget,
            bf,
        });
    }
    if b.is_finite() && bf.bf >= b {
        return Ok(StopVerdict::Stop {
            reason: StopReason::BayesFactor,
            bf,
        });
    }
    Ok(StopVerdict::Continue { bf })
}

/// Thread-safe memo table for posterior estimates under one fixed config.
///
/// The posterior depends on the counts only through the multiset of count
/// values (the components are exchangeable and the leader is always a maximal
/// count), so the memo key is the descending count vector. Cached and direct
/// calls return bit-identical values because the estimator itself is a pure
/// function of (counts, config).
pub struct PosteriorCache {
    cfg: PosteriorConfig,
    map: Mutex<HashMap<Vec<u64>, f64>>,
}

impl PosteriorCache {
    pub fn new(cfg: PosteriorConfig) -> Self {
        PosteriorCache {
            cfg,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &PosteriorConfig {
        &self.cfg
    }

    pub fn p_h1(&self, counts: &AnswerCounts) -> Result<f64, PosteriorError> {
        let mut key: Vec<u64> = counts.iter().map(|(_, c)| c).collect();
        key.sort_unstable_by(|a, b| b.cmp(a));
        if let Some(&p) = self.map.lock().unwrap().get(&key) {
            return Ok(p);
        }
        let p = posterior_h1_prob(counts, &self.cfg)?;
        self.map.lock().unwrap().insert(key, p);
        Ok(p)
    }

    pub fn bayes_factor(&self, counts: &AnswerCounts) -> Result<BfResult, PosteriorError> {
        let p = self.p_h1(counts)?;
        Ok(bf_from_posterior(counts.distinct(), p, self.cfg.mc_samples))
    }

    pub fn should_stop(
        &self,
        counts: &AnswerCounts,
        n: u32,
        n_max: u32,
        b: f64,
    ) -> Result<StopVerdict, PosteriorError> {
        if !(b > 0.0) {
            return Err(PosteriorError::BadConfig(format!(
                "stop threshold must be positive, got {b}"
            )));
        }
        let bf = self.bayes_factor(counts)?;
        if n >= n_max {
            return Ok(StopVerdict::Stop {
                reason: StopReason::Budget,
                bf,
            });
        }
        if b.is_finite() && bf.bf >= b {
            return Ok(StopVerdict::Stop {
                reason: StopReason::BayesFactor,
                bf,
            });
        }
        Ok(StopVerdict::Continue { bf })
    }
}

// Deterministic sampling of one model index from a weight vector; here so the
// posterior and sampling share the one RNG type used across the crate.
pub(crate) fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
