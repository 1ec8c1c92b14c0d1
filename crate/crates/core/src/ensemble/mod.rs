//! Ensemble weight selection by exact optimisation of infinite-vote accuracy.
//!
//! With per-model answer distributions p_i and weights w on the simplex, the
//! infinite-sample majority vote on a problem picks the answer with the
//! largest weighted mass. A problem is won when the gold answer's mass
//! strictly exceeds every rival's. Maximising the number of won problems is a
//! mixed-integer program: one binary y_q per problem, one row per wrong
//! answer with entries p_i(gold) - p_i(wrong), linked by a big-M of 2 (rows
//! lie in [-1, 1], so M = 2 deactivates a row entirely).
//!
//! `solve` runs branch and bound over the y's with an LP relaxation per node
//! (dense simplex, see [`simplex`]); `max_margin` then binary-searches the
//! largest margin xi that keeps the optimal objective, which picks a single
//! interior point from the optimal region. `brute_force_oracle` is a
//! deliberately independent route to the same objective (exhaustive lattice
//! search) used to validate the solver; keep the two implementations apart.

pub mod simplex;

use std::collections::BTreeMap;
use std::io::Write;

use num::rational::BigRational;
use num::{FromPrimitive, ToPrimitive, Zero};

use crate::adaptive::{AdaptiveError, WeightVector};
use crate::datamodel::{AnswerKey, DataError, GenerationDataset};

use simplex::{Constraint, LinearProgram, LpOutcome, Relation};

/// Rows of every problem matrix lie in [-1, 1], so a big-M of 2 makes a
/// deactivated row vacuous.
pub const BIG_M: f64 = 2.0;

/// Float comparisons treat weighted-mass differences inside this band as
/// ties; ties never count as wins.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("invalid ensemble data: {0}")]
    BadData(String),
    #[error("margin must lie in [0, 1], got {0}")]
    BadMargin(f64),
    #[error("brute force supports at most 4 models, instance has {0}")]
    OracleTooLarge(usize),
    #[error("resolution must be at least 1")]
    BadResolution,
    #[error(transparent)]
    Lp(#[from] simplex::LpError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Weights(#[from] AdaptiveError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Answer distribution of one model on one problem: either exact counts from
/// a replay log, or real-valued probabilities for synthetic experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum AnswerDist {
    Counts(BTreeMap<AnswerKey, u64>),
    Probs(BTreeMap<AnswerKey, f64>),
}

impl AnswerDist {
    fn total(&self) -> f64 {
        match self {
            AnswerDist::Counts(c) => c.values().sum::<u64>() as f64,
            AnswerDist::Probs(p) => p.values().sum(),
        }
    }

    fn prob(&self, a: &AnswerKey) -> f64 {
        match self {
            AnswerDist::Counts(c) => {
                let n: u64 = c.values().sum();
                c.get(a).copied().unwrap_or(0) as f64 / n as f64
            }
            AnswerDist::Probs(p) => p.get(a).copied().unwrap_or(0.0),
        }
    }

    fn prob_exact(&self, a: &AnswerKey) -> Option<BigRational> {
        match self {
            AnswerDist::Counts(c) => {
                let n: u64 = c.values().sum();
                let num = c.get(a).copied().unwrap_or(0);
                Some(BigRational::new(num.into(), n.into()))
            }
            AnswerDist::Probs(_) => None,
        }
    }

    fn answers(&self) -> Box<dyn Iterator<Item = &AnswerKey> + '_> {
        match self {
            AnswerDist::Counts(c) => Box::new(c.keys()),
            AnswerDist::Probs(p) => Box::new(p.keys()),
        }
    }
}

/// Per-model answer distributions for a problem set, plus gold answers.
/// The input the optimiser and the voting evaluators share.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleData {
    models: Vec<String>,
    problems: Vec<(String, AnswerKey)>,
    // dists[problem][model]
    dists: Vec<Vec<AnswerDist>>,
}

impl EnsembleData {
    /// Collects exact per-problem answer counts for the given models from a
    /// replay dataset. Every model must have records on every problem.
    pub fn from_dataset(
        ds: &GenerationDataset,
        models: &[String],
    ) -> Result<Self, EnsembleError> {
        if models.is_empty() {
            return Err(EnsembleError::BadData("no models selected".into()));
        }
        let mut dists = Vec::with_capacity(ds.problems().len());
        let mut problems = Vec::with_capacity(ds.problems().len());
        for spec in ds.problems() {
            let mut row = Vec::with_capacity(models.len());
            for m in models {
                let counts = ds.counts_of(m, &spec.id)?;
                row.push(AnswerDist::Counts(counts.iter().map(|(k, c)| (k.clone(), c)).collect()));
            }
            dists.push(row);
            problems.push((spec.id.clone(), spec.gold.clone()));
        }
        Ok(EnsembleData {
            models: models.to_vec(),
            problems,
            dists,
        })
    }

    /// Synthetic data from explicit distributions; `dists[problem][model]`.
    pub fn from_probs(
        models: Vec<String>,
        problems: Vec<(String, AnswerKey)>,
        dists: Vec<Vec<AnswerDist>>,
    ) -> Result<Self, EnsembleError> {
        if models.is_empty() || problems.is_empty() {
            return Err(EnsembleError::BadData(
                "need at least one model and one problem".into(),
            ));
        }
        if dists.len() != problems.len() {
            return Err(EnsembleError::BadData(format!(
                "{} problems but {} distribution rows",
                problems.len(),
                dists.len()
            )));
        }
        for (q, row) in dists.iter().enumerate() {
            if row.len() != models.len() {
                return Err(EnsembleError::BadData(format!(
                    "problem {q}: {} models but {} distributions",
                    models.len(),
                    row.len()
                )));
            }
            for d in row {
                match d {
                    AnswerDist::Probs(p) => {
                        if p.is_empty() || p.values().any(|v| !v.is_finite() || *v < 0.0) {
                            return Err(EnsembleError::BadData(format!(
                                "problem {q}: probabilities must be non-negative and finite"
                            )));
                        }
                        if (d.total() - 1.0).abs() > 1e-9 {
                            return Err(EnsembleError::BadData(format!(
                                "problem {q}: distribution mass {} is not 1",
                                d.total()
                            )));
                        }
                    }
                    AnswerDist::Counts(c) => {
                        if c.is_empty() || c.values().any(|&v| v == 0) {
                            return Err(EnsembleError::BadData(format!(
                                "problem {q}: counts must be non-empty and positive"
                            )));
                        }
                    }
                }
            }
        }
        Ok(EnsembleData {
            models,
            problems,
            dists,
        })
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn problems(&self) -> &[(String, AnswerKey)] {
        &self.problems
    }

    /// Restriction to a subset of problem indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, EnsembleError> {
        let mut problems = Vec::with_capacity(indices.len());
        let mut dists = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.problems.len() {
                return Err(EnsembleError::BadData(format!(
                    "problem index {i} out of range"
                )));
            }
            problems.push(self.problems[i].clone());
            dists.push(self.dists[i].clone());
        }
        Ok(EnsembleData {
            models: self.models.clone(),
            problems,
            dists,
        })
    }

    /// Restriction to a subset of model indices, in the given order.
    pub fn subset_models(&self, indices: &[usize]) -> Result<Self, EnsembleError> {
        if indices.is_empty() {
            return Err(EnsembleError::BadData("no models selected".into()));
        }
        let mut models = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.models.len() {
                return Err(EnsembleError::BadData(format!(
                    "model index {i} out of range"
                )));
            }
            models.push(self.models[i].clone());
        }
        let dists = self
            .dists
            .iter()
            .map(|row| indices.iter().map(|&i| row[i].clone()).collect())
            .collect();
        Ok(EnsembleData {
            models,
            problems: self.problems.clone(),
            dists,
        })
    }

    fn rivals(&self, q: usize) -> Vec<AnswerKey> {
        let gold = &self.problems[q].1;
        let mut set: std::collections::BTreeSet<AnswerKey> = std::collections::BTreeSet::new();
        for d in &self.dists[q] {
            for a in d.answers() {
                if a != gold {
                    set.insert(a.clone());
                }
            }
        }
        set.into_iter().collect()
    }

    fn all_counts(&self, q: usize) -> bool {
        self.dists[q].iter().all(|d| matches!(d, AnswerDist::Counts(_)))
    }
}

/// Margin rows for one problem: rows[j][i] = p_i(gold) - p_i(wrong_j).
/// A problem with no rows is pre-selected: no model ever produces a wrong
/// answer, so it is won by any weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemMatrix {
    pub id: String,
    pub wrong: Vec<AnswerKey>,
    pub rows: Vec<Vec<f64>>,
}

impl ProblemMatrix {
    pub fn preselected(&self) -> bool {
        self.rows.is_empty()
    }

    /// Smallest row value at w; +inf for pre-selected problems.
    pub fn min_row(&self, w: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpInstance {
    pub num_models: usize,
    pub problems: Vec<ProblemMatrix>,
    pub big_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    BudgetExceeded,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub w: WeightVector,
    /// Problem ids counted in the objective, in instance order.
    pub selected: Vec<String>,
    pub objective: u32,
    /// Margin this solution is certified for: the xi passed to `solve`, or
    /// the largest surviving xi found by `max_margin`.
    pub margin: f64,
    pub status: SolveStatus,
    pub nodes: u64,
}

/// Builds the optimisation instance from ensemble data.
pub fn build_instance(data: &EnsembleData) -> MilpInstance {
    let problems = (0..data.problems.len())
        .map(|q| {
            let gold = &data.problems[q].1;
            let wrong = data.rivals(q);
            let rows = wrong
                .iter()
                .map(|a| {
                    data.dists[q]
                        .iter()
                        .map(|d| d.prob(gold) - d.prob(a))
                        .collect()
                })
                .collect();
            ProblemMatrix {
                id: data.problems[q].0.clone(),
                wrong,
                rows,
            }
        })
        .collect();
    MilpInstance {
        num_models: data.num_models(),
        problems,
        big_m: BIG_M,
    }
}

// LP relaxation of the instance under partial fixings: variables are the k
// weights followed by one y per *free* problem, y relaxed to [0, 1].
// fixings[q]: None = free, Some(true/false) = fixed.
fn build_node_lp(
    inst: &MilpInstance,
    fixings: &[Option<bool>],
    xi: f64,
) -> (LinearProgram, Vec<usize>) {
    let k = inst.num_models;
    let mut free = Vec::new();
    for (q, p) in inst.problems.iter().enumerate() {
        if !p.preselected() && fixings[q].is_none() {
            free.push(q);
        }
    }
    let num_vars = k + free.len();
    let mut objective = vec![0.0; num_vars];
    for j in 0..free.len() {
        objective[k + j] = 1.0;
    }
    let mut constraints = Vec::new();
    let mut simplex_row = vec![0.0; num_vars];
    for v in simplex_row.iter_mut().take(k) {
        *v = 1.0;
    }
    constraints.push(Constraint {
        coeffs: simplex_row,
        rel: Relation::Eq,
        rhs: 1.0,
    });
    for j in 0..free.len() {
        let mut c = vec![0.0; num_vars];
        c[k + j] = 1.0;
        constraints.push(Constraint {
            coeffs: c,
            rel: Relation::Le,
            rhs: 1.0,
        });
    }
    for (q, p) in inst.problems.iter().enumerate() {
        if p.preselected() {
            continue;
        }
        match fixings[q] {
            Some(false) => {} // deactivated rows are vacuous
            Some(true) => {
                for row in &p.rows {
                    let mut c = vec![0.0; num_vars];
                    c[..k].copy_from_slice(row);
                    constraints.push(Constraint {
                        coeffs: c,
                        rel: Relation::Ge,
                        rhs: xi,
                    });
                }
            }
            None => {
                let j = free.iter().position(|&f| f == q).unwrap();
                for row in &p.rows {
                    let mut c = vec![0.0; num_vars];
                    c[..k].copy_from_slice(row);
                    c[k + j] = -inst.big_m;
                    constraints.push(Constraint {
                        coeffs: c,
                        rel: Relation::Ge,
                        rhs: xi - inst.big_m,
                    });
                }
            }
        }
    }
    (
        LinearProgram {
            num_vars,
            objective,
            constraints,
        },
        free,
    )
}

struct NodeResult {
    w: Vec<f64>,
    y: Vec<f64>, // aligned with the free list
    free: Vec<usize>,
    value: f64, // objective over free y only
}

fn solve_node(
    inst: &MilpInstance,
    fixings: &[Option<bool>],
    xi: f64,
) -> Result<Option<NodeResult>, EnsembleError> {
    let (lp, free) = build_node_lp(inst, fixings, xi);
    match simplex::solve(&lp)? {
        LpOutcome::Optimal { x, value } => {
            let k = inst.num_models;
            Ok(Some(NodeResult {
                w: x[..k].to_vec(),
                y: x[k..].to_vec(),
                free,
                value,
            }))
        }
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(EnsembleError::BadData(
            "relaxation unbounded; instance rows are malformed".into(),
        )),
    }
}

/// Exact maximisation of the number of selected problems at margin `xi` by
/// branch and bound. `node_budget` caps the number of LP nodes; when it runs
/// out the best incumbent is returned with `BudgetExceeded` status.
pub fn solve(
    inst: &MilpInstance,
    xi: f64,
    node_budget: u64,
) -> Result<MilpSolution, EnsembleError> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(EnsembleError::BadMargin(xi));
    }
    let k = inst.num_models;
    if k == 0 {
        return Err(EnsembleError::BadData("instance has no models".into()));
    }
    let q_total = inst.problems.len();
    let preselected: Vec<usize> = (0..q_total)
        .filter(|&q| inst.problems[q].preselected())
        .collect();
    let open: Vec<usize> = (0..q_total)
        .filter(|&q| !inst.problems[q].preselected())
        .collect();

    let finish = |w: Vec<f64>, chosen: Vec<usize>, nodes: u64, status: SolveStatus| {
        let mut picked: Vec<bool> = vec![false; q_total];
        for &q in &preselected {
            picked[q] = true;
        }
        for &q in &chosen {
            picked[q] = true;
        }
        let selected: Vec<String> = (0..q_total)
            .filter(|&q| picked[q])
            .map(|q| inst.problems[q].id.clone())
            .collect();
        let objective = selected.len() as u32;
        Ok(MilpSolution {
            w: WeightVector::new(normalise(w))?,
            selected,
            objective,
            margin: xi,
            status,
            nodes,
        })
    };

    if open.is_empty() {
        return finish(vec![1.0 / k as f64; k], Vec::new(), 0, SolveStatus::Optimal);
    }

    let mut best_chosen: Vec<usize> = Vec::new();
    let mut best_w = vec![1.0 / k as f64; k];
    // Starts below zero so the first node always records its weights.
    let mut best_value = -1.0;
    let mut nodes: u64 = 0;
    let mut budget_hit = false;

    // Depth-first stack of unsolved nodes; children are pushed so the y = 1
    // branch pops first.
    struct Node {
        fixings: Vec<Option<bool>>,
        bound: f64,
    }
    let mut stack = vec![Node {
        fixings: vec![None; q_total],
        bound: f64::INFINITY,
    }];

    while let Some(node) = stack.pop() {
        if node.bound < best_value + 1.0 - 1e-6 {
            continue;
        }
        if nodes >= node_budget {
            budget_hit = true;
            break;
        }
        nodes += 1;
        let Some(res) = solve_node(inst, &node.fixings, xi)? else {
            continue;
        };

        // Rounding incumbent: select exactly the problems whose rows clearly
        // clear the margin at this node's weights. The direct row check makes
        // this sound regardless of the fixings, and the strict slack means it
        // never overcounts.
        let rounded: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&q| inst.problems[q].min_row(&res.w) >= xi + 1e-9)
            .collect();
        if rounded.len() as f64 > best_value {
            best_value = rounded.len() as f64;
            best_chosen = rounded;
            best_w = res.w.clone();
        }

        let fixed_on = node.fixings.iter().filter(|f| **f == Some(true)).count() as f64;
        let total_value = res.value + fixed_on;
        if total_value < best_value + 1.0 - 1e-6 {
            continue;
        }
        // Most fractional free y, ties to the smallest problem index.
        let mut branch: Option<(usize, f64)> = None;
        for (j, &q) in res.free.iter().enumerate() {
            let y = res.y[j];
            if y > 1e-6 && y < 1.0 - 1e-6 {
                let frac = (y - 0.5).abs();
                if branch.map_or(true, |(_, bf)| frac < bf - 1e-12) {
                    branch = Some((q, frac));
                }
            }
        }
        match branch {
            None => {
                // Integral leaf. Free flags that rounded to 1 only did so
                // through the big-M row, so re-check the actual margin
                // before counting them.
                let chosen: Vec<usize> = node
                    .fixings
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| **f == Some(true))
                    .map(|(q, _)| q)
                    .chain(
                        res.free
                            .iter()
                            .enumerate()
                            .filter(|(j, &q)| {
                                res.y[*j] > 0.5
                                    && inst.problems[q].min_row(&res.w) >= xi - 1e-9
                            })
                            .map(|(_, &q)| q),
                    )
                    .collect();
                if chosen.len() as f64 > best_value {
                    best_value = chosen.len() as f64;
                    best_chosen = chosen;
                    best_w = res.w;
                }
            }
            Some((q, _)) => {
                let mut off = node.fixings.clone();
                off[q] = Some(false);
                stack.push(Node {
                    fixings: off,
                    bound: total_value,
                });
                let mut on = node.fixings;
                on[q] = Some(true);
                stack.push(Node {
                    fixings: on,
                    bound: total_value,
                });
            }
        }
    }

    let status = if budget_hit {
        SolveStatus::BudgetExceeded
    } else {
        SolveStatus::Optimal
    };
    finish(best_w, best_chosen, nodes, status)
}

fn normalise(mut w: Vec<f64>) -> Vec<f64> {
    for v in w.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        for v in w.iter_mut() {
            *v /= sum;
        }
    } else {
        let k = w.len();
        for v in w.iter_mut() {
            *v = 1.0 / k as f64;
        }
    }
    w
}

/// Largest margin (within `tol`) that preserves the unconstrained optimum,
/// with the weight vector that attains it. The objective is nonincreasing in
/// the margin, so a bisection over [0, 1] suffices.
pub fn max_margin(
    inst: &MilpInstance,
    tol: f64,
    node_budget: u64,
) -> Result<MilpSolution, EnsembleError> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(EnsembleError::BadMargin(tol));
    }
    let base = solve(inst, 0.0, node_budget)?;
    if base.status != SolveStatus::Optimal {
        return Ok(base);
    }
    let target = base.objective;
    let top = solve(inst, 1.0, node_budget)?;
    if top.status != SolveStatus::Optimal {
        return Ok(top);
    }
    if top.objective == target {
        return Ok(top);
    }
    let mut lo = 0.0;
    let mut lo_sol = base;
    let mut hi = 1.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let probe = solve(inst, mid, node_budget)?;
        if probe.status != SolveStatus::Optimal {
            lo_sol.status = SolveStatus::BudgetExceeded;
            lo_sol.margin = lo;
            return Ok(lo_sol);
        }
        if probe.objective == target {
            lo = mid;
            lo_sol = probe;
        } else {
            hi = mid;
        }
    }
    lo_sol.margin = lo;
    Ok(lo_sol)
}

/// Exhaustive lattice search over the weight simplex at the given resolution,
/// counting strict wins. Returns (objective, weights of the first best cell).
/// Independent of `solve`; used to validate it.
pub fn brute_force_oracle(
    inst: &MilpInstance,
    resolution: u32,
) -> Result<(u32, WeightVector), EnsembleError> {
    if resolution == 0 {
        return Err(EnsembleError::BadResolution);
    }
    let k = inst.num_models;
    if k == 0 {
        return Err(EnsembleError::BadData("instance has no models".into()));
    }
    if k > 4 {
        return Err(EnsembleError::OracleTooLarge(k));
    }
    let pre = inst.problems.iter().filter(|p| p.preselected()).count() as u32;
    let open: Vec<&ProblemMatrix> = inst.problems.iter().filter(|p| !p.preselected()).collect();

    let mut best: Option<(u32, Vec<f64>)> = None;
    let mut parts = vec![0u32; k];
    let mut w = vec![0.0; k];
    enumerate_compositions(resolution, k, &mut parts, 0, &mut |parts| {
        for i in 0..k {
            w[i] = parts[i] as f64 / resolution as f64;
        }
        let mut wins = 0u32;
        for p in &open {
            if p.min_row(&w) > TIE_EPS {
                wins += 1;
            }
        }
        if best.as_ref().map_or(true, |(b, _)| wins > *b) {
            best = Some((wins, w.clone()));
        }
    });
    let (wins, w) = best.expect("lattice is non-empty");
    Ok((wins + pre, WeightVector::new(w)?))
}

fn enumerate_compositions(
    remaining: u32,
    k: usize,
    parts: &mut Vec<u32>,
    idx: usize,
    f: &mut impl FnMut(&[u32]),
) {
    if idx == k - 1 {
        parts[idx] = remaining;
        f(parts);
        return;
    }
    for v in 0..=remaining {
        parts[idx] = v;
        enumerate_compositions(remaining - v, k, parts, idx + 1, f);
    }
}

/// Fraction of problems whose gold answer has strictly the largest weighted
/// mass. Ties count as losses. Count-backed problems are compared in exact
/// rational arithmetic (the weights, being floats, are exact rationals too);
/// problems with real-valued distributions fall back to floats with a small
/// tie band.
pub fn boinf_accuracy(data: &EnsembleData, w: &WeightVector) -> Result<f64, EnsembleError> {
    if w.dim() != data.num_models() {
        return Err(EnsembleError::BadData(format!(
            "weight vector has {} entries for {} models",
            w.dim(),
            data.num_models()
        )));
    }
    let q_total = data.problems.len();
    let mut wins = 0u32;
    for q in 0..q_total {
        if problem_won(data, q, w.as_slice()) {
            wins += 1;
        }
    }
    Ok(wins as f64 / q_total as f64)
}

fn problem_won(data: &EnsembleData, q: usize, w: &[f64]) -> bool {
    let gold = &data.problems[q].1;
    let rivals = data.rivals(q);
    if rivals.is_empty() {
        return true;
    }
    if data.all_counts(q) {
        let w_exact: Vec<BigRational> = w
            .iter()
            .map(|&v| BigRational::from_f64(v).expect("weights are finite"))
            .collect();
        let mass = |a: &AnswerKey| -> BigRational {
            data.dists[q]
                .iter()
                .zip(&w_exact)
                .map(|(d, wi)| wi * d.prob_exact(a).expect("counts path"))
                .fold(BigRational::zero(), |acc, x| acc + x)
        };
        let gold_mass = mass(gold);
        rivals.iter().all(|a| gold_mass > mass(a))
    } else {
        let mass = |a: &AnswerKey| -> f64 {
            data.dists[q]
                .iter()
                .zip(w)
                .map(|(d, wi)| wi * d.prob(a))
                .sum()
        };
        let gold_mass = mass(gold);
        rivals.iter().all(|a| gold_mass > mass(a) + TIE_EPS)
    }
}

/// Best single model by mean gold probability, with the full accuracy list.
/// Ties go to the smaller index; count-backed data is compared exactly.
pub fn bo1_best_model(data: &EnsembleData) -> (usize, Vec<f64>) {
    let q_total = data.problems.len() as u64;
    let mut exact: Vec<BigRational> = Vec::with_capacity(data.num_models());
    for i in 0..data.num_models() {
        let mut acc = BigRational::zero();
        for q in 0..data.problems.len() {
            let gold = &data.problems[q].1;
            let p = match data.dists[q][i].prob_exact(gold) {
                Some(r) => r,
                None => BigRational::from_f64(data.dists[q][i].prob(gold))
                    .expect("probabilities are finite"),
            };
            acc += p;
        }
        exact.push(acc / BigRational::from_integer(q_total.into()));
    }
    let mut best = 0;
    for i in 1..exact.len() {
        if exact[i] > exact[best] {
            best = i;
        }
    }
    let accs = exact
        .iter()
        .map(|r| r.to_f64().expect("accuracy fits in f64"))
        .collect();
    (best, accs)
}

/// Writes the instance at margin `xi` in CPLEX LP format, so external solvers
/// can cross-check or take over at scales the built-in solver is not for.
pub fn export_lp<W: Write>(
    inst: &MilpInstance,
    xi: f64,
    out: &mut W,
) -> Result<(), EnsembleError> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(EnsembleError::BadMargin(xi));
    }
    let k = inst.num_models;
    writeln!(out, "\\ weighted majority selection, margin xi = {xi}")?;
    writeln!(out, "\\ variables: w0..w{} model weights, y<q> selection flags", k - 1)?;
    for (q, p) in inst.problems.iter().enumerate() {
        writeln!(out, "\\ y{q} <-> problem {:?}{}", p.id, if p.preselected() { " (always won)" } else { "" })?;
    }
    writeln!(out, "Maximize")?;
    let obj_terms: Vec<String> = (0..inst.problems.len()).map(|q| format!("y{q}")).collect();
    writeln!(out, " obj: {}", obj_terms.join(" + "))?;
    writeln!(out, "Subject To")?;
    let w_terms: Vec<String> = (0..k).map(|i| format!("w{i}")).collect();
    writeln!(out, " simplex: {} = 1", w_terms.join(" + "))?;
    for q in 0..inst.problems.len() {
        writeln!(out, " ub{q}: y{q} <= 1")?;
    }
    for (q, p) in inst.problems.iter().enumerate() {
        for (j, row) in p.rows.iter().enumerate() {
            let mut line = format!(" c{q}_{j}:");
            let mut first = true;
            for (i, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                push_term(&mut line, &mut first, a, &format!("w{i}"));
            }
            push_term(&mut line, &mut first, -inst.big_m, &format!("y{q}"));
            line.push_str(&format!(" >= {}", xi - inst.big_m));
            writeln!(out, "{line}")?;
        }
    }
    writeln!(out, "Binaries")?;
    writeln!(
        out,
        " {}",
        (0..inst.problems.len())
            .map(|q| format!("y{q}"))
            .collect::<Vec<_>>()
            .join(" ")
    )?;
    writeln!(out, "End")?;
    Ok(())
}

fn push_term(line: &mut String, first: &mut bool, coeff: f64, var: &str) {
    if *first {
        if coeff < 0.0 {
            line.push_str(&format!(" -{} {var}", -coeff));
        } else {
            line.push_str(&format!(" {coeff} {var}"));
        }
        *first = false;
    } else if coeff < 0.0 {
        line.push_str(&format!(" - {} {var}", -coeff));
    } else {
        line.push_str(&format!(" + {coeff} {var}"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key(s: &str) -> AnswerKey {
        AnswerKey::new(s).unwrap()
    }

    fn probs(pairs: &[(&str, f64)]) -> AnswerDist {
        AnswerDist::Probs(pairs.iter().map(|(a, p)| (key(a), *p)).collect())
    }

    fn counts(pairs: &[(&str, u64)]) -> AnswerDist {
        AnswerDist::Counts(pairs.iter().map(|(a, c)| (key(a), *c)).collect())
    }

    fn data(models: usize, dists: Vec<Vec<AnswerDist>>) -> EnsembleData {
        let models = (0..models).map(|i| format!("m{i}")).collect();
        let problems = (0..dists.len())
            .map(|q| (format!("p{q}"), key("g")))
            .collect();
        EnsembleData::from_probs(models, problems, dists).unwrap()
    }

    // One problem, one model always right, the other always wrong.
    fn disagreement_data() -> EnsembleData {
        data(2, vec![vec![probs(&[("g", 1.0)]), probs(&[("z", 1.0)])]])
    }

    #[test]
    fn instance_rows_are_gold_minus_wrong() {
        let inst = build_instance(&disagreement_data());
        assert_eq!(inst.num_models, 2);
        assert_eq!(inst.problems.len(), 1);
        let p = &inst.problems[0];
        assert_eq!(p.wrong, vec![key("z")]);
        assert_eq!(p.rows, vec![vec![1.0, -1.0]]);
        assert!(!p.preselected());
    }

    #[test]
    fn unanimous_problem_is_preselected() {
        let d = data(
            2,
            vec![
                vec![probs(&[("g", 1.0)]), probs(&[("g", 1.0)])],
                vec![probs(&[("g", 1.0)]), probs(&[("z", 1.0)])],
            ],
        );
        let inst = build_instance(&d);
        assert!(inst.problems[0].preselected());
        assert!(!inst.problems[1].preselected());
        let sol = solve(&inst, 0.0, 10_000).unwrap();
        assert_eq!(sol.objective, 2);
        assert!(sol.selected.contains(&"p0".to_string()));
    }

    #[test]
    fn full_disagreement_gives_point_mass_weights() {
        let inst = build_instance(&disagreement_data());
        let sol = solve(&inst, 0.0, 10_000).unwrap();
        assert_eq!(sol.objective, 1);
        let mm = max_margin(&inst, 1e-6, 10_000).unwrap();
        assert_eq!(mm.objective, 1);
        assert_abs_diff_eq!(mm.margin, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mm.w.as_slice()[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mm.w.as_slice()[1], 0.0, epsilon = 1e-9);
    }

    // Two problems that are only both won when the weights tie exactly.
    fn knife_edge_instance() -> MilpInstance {
        let d = data(
            2,
            vec![
                vec![probs(&[("g", 1.0)]), probs(&[("u", 1.0)])],
                vec![probs(&[("v", 1.0)]), probs(&[("g", 1.0)])],
            ],
        );
        build_instance(&d)
    }

    #[test]
    fn knife_edge_optimum_has_zero_margin() {
        let inst = knife_edge_instance();
        let sol = solve(&inst, 0.0, 10_000).unwrap();
        assert_eq!(sol.objective, 2);
        let mm = max_margin(&inst, 1e-6, 10_000).unwrap();
        assert_eq!(mm.objective, 2);
        assert!(mm.margin <= 1e-6, "margin {} should vanish", mm.margin);
        assert_abs_diff_eq!(mm.w.as_slice()[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(mm.w.as_slice()[1], 0.5, epsilon = 1e-6);
    }

    // Three models, five problems, with one problem that caps the best
    // achievable margin at exactly 0.2 and one problem that conflicts with
    // the rest. The optimum selects four problems.
    fn capped_margin_instance() -> MilpInstance {
        let d = data(
            3,
            vec![
                vec![
                    probs(&[("g", 0.8), ("z", 0.2)]),
                    probs(&[("g", 0.8), ("z", 0.2)]),
                    probs(&[("z", 1.0)]),
                ],
                vec![
                    probs(&[("g", 0.8), ("z", 0.2)]),
                    probs(&[("z", 1.0)]),
                    probs(&[("g", 0.8), ("z", 0.2)]),
                ],
                vec![
                    probs(&[("z", 1.0)]),
                    probs(&[("g", 0.8), ("z", 0.2)]),
                    probs(&[("g", 0.8), ("z", 0.2)]),
                ],
                vec![
                    probs(&[("g", 0.6), ("z", 0.4)]),
                    probs(&[("g", 0.6), ("z", 0.4)]),
                    probs(&[("g", 0.6), ("z", 0.4)]),
                ],
                vec![
                    probs(&[("g", 1.0)]),
                    probs(&[("z", 1.0)]),
                    probs(&[("z", 1.0)]),
                ],
            ],
        );
        build_instance(&d)
    }

    #[test]
    fn capped_margin_instance_selects_four() {
        let inst = capped_margin_instance();
        let sol = solve(&inst, 0.0, 100_000).unwrap();
        assert_eq!(sol.objective, 4);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let (oracle_obj, _) = brute_force_oracle(&inst, 60).unwrap();
        assert_eq!(oracle_obj, 4);
    }

    #[test]
    fn capped_margin_instance_max_margin_hits_cap() {
        let inst = capped_margin_instance();
        let mm = max_margin(&inst, 1e-6, 100_000).unwrap();
        assert_eq!(mm.objective, 4);
        assert_abs_diff_eq!(mm.margin, 0.2, epsilon = 5e-6);
        // Every selected problem clears the certified margin at the weights.
        for p in &inst.problems {
            if mm.selected.contains(&p.id) {
                assert!(
                    p.min_row(mm.w.as_slice()) >= mm.margin - 1e-6,
                    "{} violates the certified margin",
                    p.id
                );
            }
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        // At margin 0.5 the two knife-edge problems are mutually exclusive
        // and the relaxation is fractional, so one node cannot close it.
        let inst = knife_edge_instance();
        let limited = solve(&inst, 0.5, 1).unwrap();
        assert_eq!(limited.status, SolveStatus::BudgetExceeded);
        let full = solve(&inst, 0.5, 10_000).unwrap();
        assert_eq!(full.status, SolveStatus::Optimal);
        assert_eq!(full.objective, 1);
        assert!(limited.objective <= full.objective);
    }

    fn random_data(seed: u64, num_models: usize, num_problems: usize) -> EnsembleData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = ["g", "b", "c", "d"];
        let dists = (0..num_problems)
            .map(|_| {
                let n_ans = rng.gen_range(2..=4usize);
                (0..num_models)
                    .map(|_| {
                        let raw: Vec<f64> =
                            (0..n_ans).map(|_| -rng.gen::<f64>().ln()).collect();
                        let total: f64 = raw.iter().sum();
                        AnswerDist::Probs(
                            names[..n_ans]
                                .iter()
                                .zip(&raw)
                                .map(|(a, r)| (key(a), r / total))
                                .collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        data(num_models, dists)
    }

    #[test]
    fn solver_matches_lattice_oracle_on_random_instances() {
        for seed in 0..25u64 {
            let d = random_data(seed, 3, 6);
            let inst = build_instance(&d);
            let sol = solve(&inst, 0.0, 200_000).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
            let (oracle_obj, _) = brute_force_oracle(&inst, 60).unwrap();
            assert_eq!(sol.objective, oracle_obj, "seed {seed}");
        }
    }

    #[test]
    fn solver_weights_reproduce_objective_under_voting() {
        // With a positive certified margin the weak and strict win counts
        // coincide, so the vote evaluator must reproduce the objective.
        for seed in 0..10u64 {
            let d = random_data(seed, 3, 6);
            let inst = build_instance(&d);
            let mm = max_margin(&inst, 1e-6, 200_000).unwrap();
            if mm.margin > 1e-4 {
                let acc = boinf_accuracy(&d, &mm.w).unwrap();
                let won = (acc * d.problems().len() as f64).round() as u32;
                assert_eq!(won, mm.objective, "seed {seed}");
            }
        }
    }

    #[test]
    fn oracle_rejects_unsupported_shapes() {
        let inst = build_instance(&random_data(0, 5, 2));
        assert!(matches!(
            brute_force_oracle(&inst, 10),
            Err(EnsembleError::OracleTooLarge(5))
        ));
        let inst = build_instance(&random_data(0, 2, 2));
        assert!(matches!(
            brute_force_oracle(&inst, 0),
            Err(EnsembleError::BadResolution)
        ));
    }

    #[test]
    fn counts_scale_invariance() {
        let base = data(
            2,
            vec![
                vec![counts(&[("g", 3), ("b", 1)]), counts(&[("g", 1), ("b", 1)])],
                vec![counts(&[("g", 1), ("b", 3)]), counts(&[("b", 2)])],
            ],
        );
        let scaled = data(
            2,
            vec![
                vec![counts(&[("g", 21), ("b", 7)]), counts(&[("g", 9), ("b", 9)])],
                vec![counts(&[("g", 5), ("b", 15)]), counts(&[("b", 14)])],
            ],
        );
        assert_eq!(build_instance(&base).problems[0].rows, build_instance(&scaled).problems[0].rows);
        assert_eq!(build_instance(&base).problems[1].rows, build_instance(&scaled).problems[1].rows);
        let w = WeightVector::new(vec![0.7, 0.3]).unwrap();
        assert_eq!(
            boinf_accuracy(&base, &w).unwrap(),
            boinf_accuracy(&scaled, &w).unwrap()
        );
    }

    #[test]
    fn exact_ties_lose() {
        let d = data(2, vec![vec![counts(&[("g", 1)]), counts(&[("b", 1)])]]);
        let tied = WeightVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(boinf_accuracy(&d, &tied).unwrap(), 0.0);
        let tilted = WeightVector::new(vec![0.6, 0.4]).unwrap();
        assert_eq!(boinf_accuracy(&d, &tilted).unwrap(), 1.0);
    }

    #[test]
    fn single_model_accuracy_and_ties_to_first() {
        let d = data(
            2,
            vec![
                vec![counts(&[("g", 3), ("b", 1)]), counts(&[("g", 1), ("b", 1)])],
                vec![counts(&[("g", 1), ("b", 3)]), counts(&[("g", 1), ("b", 1)])],
            ],
        );
        let (best, accs) = bo1_best_model(&d);
        assert_eq!(best, 0, "equal means tie to the smaller index");
        assert_abs_diff_eq!(accs[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(accs[1], 0.5, epsilon = 1e-12);
        let m0 = boinf_accuracy(&d, &WeightVector::point_mass(2, 0)).unwrap();
        assert_eq!(m0, 0.5);
    }

    #[test]
    fn export_lp_row_shape() {
        let inst = build_instance(&disagreement_data());
        let mut buf = Vec::new();
        export_lp(&inst, 0.05, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let body: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("Subject To"))
            .skip(1)
            .take_while(|l| !l.starts_with("Binaries"))
            .collect();
        // One weight-simplex row, one selection bound, one margin row.
        assert_eq!(body.len(), 3, "{text}");
        assert!(text.contains("Maximize"));
        assert!(text.contains(" obj: y0"));
        assert!(text.contains(" simplex: w0 + w1 = 1"));
        assert!(text.contains(" ub0: y0 <= 1"));
        assert!(text.contains(" c0_0: 1 w0 - 1 w1 - 2 y0 >= -1.95"));
        assert!(text.trim_end().ends_with("End"));
    }

    #[test]
    fn from_probs_validates_shapes() {
        let bad_mass = EnsembleData::from_probs(
            vec!["m0".into()],
            vec![("p0".into(), key("g"))],
            vec![vec![probs(&[("g", 0.5), ("b", 0.4)])]],
        );
        assert!(matches!(bad_mass, Err(EnsembleError::BadData(_))));
        let bad_dims = EnsembleData::from_probs(
            vec!["m0".into(), "m1".into()],
            vec![("p0".into(), key("g"))],
            vec![vec![probs(&[("g", 1.0)])]],
        );
        assert!(matches!(bad_dims, Err(EnsembleError::BadData(_))));
        let zero_count = EnsembleData::from_probs(
            vec!["m0".into()],
            vec![("p0".into(), key("g"))],
            vec![vec![counts(&[("g", 0)])]],
        );
        assert!(matches!(zero_count, Err(EnsembleError::BadData(_))));
    }

    #[test]
    fn subset_restricts_problems() {
        let d = random_data(7, 2, 5);
        let sub = d.subset(&[4, 0]).unwrap();
        assert_eq!(sub.problems().len(), 2);
        assert_eq!(sub.problems()[0].0, d.problems()[4].0);
        assert_eq!(sub.problems()[1].0, d.problems()[0].0);
        assert!(d.subset(&[9]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn oracle_never_beats_solver(seed in 0u64..10_000) {
            let d = random_data(seed, 3, 5);
            let inst = build_instance(&d);
            let sol = solve(&inst, 0.0, 200_000).unwrap();
            prop_assume!(sol.status == SolveStatus::Optimal);
            let (oracle_obj, oracle_w) = brute_force_oracle(&inst, 24).unwrap();
            prop_assert!(oracle_obj <= sol.objective);
            // The oracle's weights are feasible, so the evaluator agrees.
            let acc = boinf_accuracy(&d, &oracle_w).unwrap();
            let strict_wins = (acc * d.problems().len() as f64).round() as u32;
            prop_assert_eq!(strict_wins, oracle_obj);
        }

        #[test]
        fn objective_is_nonincreasing_in_margin(
            seed in 0u64..10_000,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let d = random_data(seed, 2, 4);
            let inst = build_instance(&d);
            let at_lo = solve(&inst, lo, 200_000).unwrap();
            let at_hi = solve(&inst, hi, 200_000).unwrap();
            prop_assume!(at_lo.status == SolveStatus::Optimal);
            prop_assume!(at_hi.status == SolveStatus::Optimal);
            prop_assert!(at_lo.objective >= at_hi.objective);
        }
    }
}
