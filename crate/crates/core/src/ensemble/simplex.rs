//! Dense-tableau two-phase simplex for small linear programs.
//!
//! Maximises c'x over x >= 0 subject to mixed <=, >=, = rows. Pivoting uses
//! Bland's rule (lowest eligible index enters, ratio ties leave by lowest
//! basic index), which rules out cycling at some cost in pivot count; the
//! node subproblems this crate generates are small enough not to care.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    /// Coefficients of the maximisation objective, one per variable.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, thiserror::Error)]
pub enum LpError {
    #[error("objective length {obj} does not match variable count {vars}")]
    ShapeMismatch { obj: usize, vars: usize },
    #[error("constraint {row} has {got} coefficients, expected {vars}")]
    RowMismatch { row: usize, got: usize, vars: usize },
    #[error("non-finite coefficient encountered")]
    NonFinite,
    #[error("pivot iteration limit hit; the tableau is numerically stuck")]
    IterationLimit,
}

struct Tableau {
    rows: Vec<Vec<f64>>, // m x (cols + 1), last column is the rhs
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64], value: &mut f64) {
        let piv = self.rows[r][c];
        debug_assert!(piv.abs() > EPS);
        let inv = 1.0 / piv;
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f.abs() > 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        let f = obj[c];
        if f.abs() > 0.0 {
            for (v, p) in obj.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            obj[c] = 0.0;
            *value += f * pivot_row[self.cols];
        }
        self.basis[r] = c;
    }

    // Reduced costs and objective value for cost vector c over the current
    // basis: d_j = c_j - sum_r c[basis[r]] * T[r][j].
    fn price(&self, c: &[f64]) -> (Vec<f64>, f64) {
        let mut d = c.to_vec();
        d.push(0.0); // rhs slot, unused but keeps indices aligned
        let mut value = 0.0;
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = c[b];
            if cb != 0.0 {
                for j in 0..=self.cols {
                    if j == self.cols {
                        value += cb * self.rows[r][j];
                    } else {
                        d[j] -= cb * self.rows[r][j];
                    }
                }
            }
        }
        (d, value)
    }

    // One Bland step for maximisation over the allowed column range.
    fn bland_step(&mut self, obj: &mut [f64], value: &mut f64, allowed_cols: usize) -> Step {
        let mut enter = None;
        for j in 0..allowed_cols {
            if obj[j] > EPS {
                enter = Some(j);
                break;
            }
        }
        let Some(c) = enter else {
            return Step::Optimal;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..self.rows.len() {
            let a = self.rows[r][c];
            if a > EPS {
                let ratio = self.rows[r][self.cols] / a;
                let better = match leave {
                    None => true,
                    Some((lr, lratio)) => {
                        ratio < lratio - EPS
                            || (ratio < lratio + EPS && self.basis[r] < self.basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return Step::Unbounded;
        };
        self.pivot(r, c, obj, value);
        Step::Pivoted
    }
}

enum Step {
    Pivoted,
    Optimal,
    Unbounded,
}

pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    if lp.objective.len() != lp.num_vars {
        return Err(LpError::ShapeMismatch {
            obj: lp.objective.len(),
            vars: lp.num_vars,
        });
    }
    for (i, c) in lp.constraints.iter().enumerate() {
        if c.coeffs.len() != lp.num_vars {
            return Err(LpError::RowMismatch {
                row: i,
                got: c.coeffs.len(),
                vars: lp.num_vars,
            });
        }
        if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite);
        }
    }
    if lp.objective.iter().any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite);
    }

    let m = lp.constraints.len();
    let n = lp.num_vars;

    // Normalise to non-negative rhs, then count auxiliary columns.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let coeffs = c.coeffs.iter().map(|v| -v).collect();
                let rel = match c.rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (coeffs, rel, -c.rhs)
            } else {
                (c.coeffs.clone(), c.rel, c.rhs)
            }
        })
        .collect();

    let n_slack = rows
        .iter()
        .filter(|(_, rel, _)| matches!(rel, Relation::Le | Relation::Ge))
        .count();
    let n_art = rows
        .iter()
        .filter(|(_, rel, _)| matches!(rel, Relation::Ge | Relation::Eq))
        .count();
    let cols = n + n_slack + n_art;
    let art_start = n + n_slack;

    let mut tab = Tableau {
        rows: vec![vec![0.0; cols + 1]; m],
        basis: vec![0; m],
        cols,
    };
    let mut slack_at = n;
    let mut art_at = art_start;
    for (r, (coeffs, rel, rhs)) in rows.drain(..).enumerate() {
        tab.rows[r][..n].copy_from_slice(&coeffs);
        tab.rows[r][cols] = rhs;
        match rel {
            Relation::Le => {
                tab.rows[r][slack_at] = 1.0;
                tab.basis[r] = slack_at;
                slack_at += 1;
            }
            Relation::Ge => {
                tab.rows[r][slack_at] = -1.0;
                slack_at += 1;
                tab.rows[r][art_at] = 1.0;
                tab.basis[r] = art_at;
                art_at += 1;
            }
            Relation::Eq => {
                tab.rows[r][art_at] = 1.0;
                tab.basis[r] = art_at;
                art_at += 1;
            }
        }
    }

    let max_iters = 2000 + 200 * (m + cols);

    // Phase 1: drive the artificial variables to zero.
    if n_art > 0 {
        let mut c1 = vec![0.0; cols];
        for j in art_start..cols {
            c1[j] = -1.0;
        }
        let (mut d, mut value) = tab.price(&c1);
        let mut iters = 0;
        loop {
            match tab.bland_step(&mut d, &mut value, cols) {
                Step::Pivoted => {}
                Step::Optimal => break,
                // Phase 1 is bounded above by zero; hitting this means the
                // tableau degraded numerically.
                Step::Unbounded => return Err(LpError::IterationLimit),
            }
            iters += 1;
            if iters > max_iters {
                return Err(LpError::IterationLimit);
            }
        }
        if value < -1e-7 {
            return Ok(LpOutcome::Infeasible);
        }
        // Pivot leftover artificial basics out, or drop their rows when the
        // constraint turned out redundant.
        let mut r = 0;
        while r < tab.basis.len() {
            if tab.basis[r] >= art_start {
                let mut pivot_col = None;
                for j in 0..art_start {
                    if tab.rows[r][j].abs() > EPS {
                        pivot_col = Some(j);
                        break;
                    }
                }
                match pivot_col {
                    Some(c) => {
                        let mut dummy = vec![0.0; cols + 1];
                        let mut dv = 0.0;
                        tab.pivot(r, c, &mut dummy, &mut dv);
                    }
                    None => {
                        tab.rows.remove(r);
                        tab.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    // Phase 2: the real objective, artificial columns banned from entering.
    let mut c2 = vec![0.0; cols];
    c2[..n].copy_from_slice(&lp.objective);
    let (mut d, mut value) = tab.price(&c2);
    let mut iters = 0;
    loop {
        match tab.bland_step(&mut d, &mut value, art_start) {
            Step::Pivoted => {}
            Step::Optimal => break,
            Step::Unbounded => return Ok(LpOutcome::Unbounded),
        }
        iters += 1;
        if iters > max_iters {
            return Err(LpError::IterationLimit);
        }
    }

    let mut x = vec![0.0; n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rows[r][tab.cols];
        }
    }
    Ok(LpOutcome::Optimal { x, value })
}
