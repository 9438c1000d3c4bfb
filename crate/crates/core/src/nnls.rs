//! Lawson–Hanson active-set non-negative least squares.
//!
//! The solver works on the normal equations: with design `M` (`m x n`) and
//! target `b` it only needs `G = MᵀM`, `c = Mᵀb` and `bᵀb`. Batches that
//! share a design (one NNLS problem per non-anchor term, all against the same
//! anchor block) therefore share `G`, and each solve costs `O(n²)` per
//! active-set change through an incrementally grown Cholesky factor of the
//! passive block.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_TOL_KKT: f64 = 1e-8;

/// One problem `min ‖M x − b‖₂` subject to `x ⪰ 0`.
#[derive(Debug, Clone)]
pub struct NnlsProblem {
    pub design: DMatrix<f64>,
    pub target: Vec<f64>,
    pub tol_kkt: f64,
    /// Defaults to three times the number of unknowns.
    pub max_iter: Option<usize>,
}

impl NnlsProblem {
    pub fn new(design: DMatrix<f64>, target: Vec<f64>) -> Self {
        NnlsProblem {
            design,
            target,
            tol_kkt: DEFAULT_TOL_KKT,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    /// Largest violation of the KKT conditions on the gradient
    /// `g = Mᵀ(M x − b)`: `g_i ≥ 0` where `x_i = 0`, `g_i = 0` where `x_i > 0`.
    pub kkt_violation: f64,
    pub iterations: usize,
}

/// Shared normal-equation data for a fixed design.
#[derive(Debug, Clone)]
pub struct GramSystem {
    gram: DMatrix<f64>,
}

impl GramSystem {
    pub fn from_design(design: &DMatrix<f64>) -> Self {
        GramSystem {
            gram: design.tr_mul(design),
        }
    }

    pub fn from_gram(gram: DMatrix<f64>) -> Self {
        assert!(gram.is_square());
        GramSystem { gram }
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Solves with `c = Mᵀb` and `btb = bᵀb`. The returned residual norm is
    /// evaluated from the quadratic form.
    pub fn solve(&self, c: &[f64], btb: f64, tol: f64, max_iter: Option<usize>) -> Result<NnlsSolution> {
        let n = self.n();
        if c.len() != n {
            return Err(Error::Dimension(format!("expected {n} normal-equation entries, got {}", c.len())));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument("tol_kkt must be positive".into()));
        }
        let max_iter = max_iter.unwrap_or(3 * n).max(1);
        let (x, iterations) = if btb == 0.0 || c.iter().all(|&v| v == 0.0) {
            (vec![0.0; n], 0)
        } else {
            lawson_hanson(&self.gram, c, tol, max_iter)?
        };
        let kkt_violation = kkt_violation(&self.gram, c, &x);
        if kkt_violation > tol {
            return Err(Error::NnlsNotConverged { x, kkt_violation, iterations });
        }
        let quad = quadratic_form(&self.gram, &x);
        let cx: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let residual_norm = (btb - 2.0 * cx + quad).max(0.0).sqrt();
        Ok(NnlsSolution {
            x,
            residual_norm,
            kkt_violation,
            iterations,
        })
    }
}

fn quadratic_form(g: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for j in 0..n {
        if x[j] == 0.0 {
            continue;
        }
        let mut col = 0.0;
        for i in 0..n {
            col += g[(i, j)] * x[i];
        }
        s += col * x[j];
    }
    s
}

/// `w = c − G x`, the negative gradient.
fn dual(g: &DMatrix<f64>, c: &[f64], x: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut w = c.to_vec();
    for j in 0..n {
        if x[j] == 0.0 {
            continue;
        }
        let col = g.column(j);
        for i in 0..n {
            w[i] -= col[i] * x[j];
        }
    }
    w
}

fn kkt_violation(g: &DMatrix<f64>, c: &[f64], x: &[f64]) -> f64 {
    let w = dual(g, c, x);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| if xi > 0.0 { wi.abs() } else { wi.max(0.0) })
        .fold(0.0, f64::max)
}

/// Cholesky factor of `G[P, P]` for an ordered passive set `P`, grown one
/// variable at a time. Stored row-major lower triangular.
struct PassiveCholesky<'a> {
    gram: &'a DMatrix<f64>,
    set: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl<'a> PassiveCholesky<'a> {
    fn new(gram: &'a DMatrix<f64>) -> Self {
        PassiveCholesky {
            gram,
            set: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Appends `j`; fails (leaving the factor untouched) when the column is
    /// numerically dependent on the current passive set.
    fn push(&mut self, j: usize) -> bool {
        let p = self.set.len();
        let mut l = vec![0.0; p + 1];
        for r in 0..p {
            let mut s = self.gram[(self.set[r], j)];
            for k in 0..r {
                s -= self.rows[r][k] * l[k];
            }
            l[r] = s / self.rows[r][r];
        }
        let gjj = self.gram[(j, j)];
        let d = gjj - l[..p].iter().map(|a| a * a).sum::<f64>();
        if !(d > 1e-13 * gjj) {
            return false;
        }
        l[p] = d.sqrt();
        self.rows.push(l);
        self.set.push(j);
        true
    }

    fn pop(&mut self) {
        self.rows.pop();
        self.set.pop();
    }

    fn rebuild(&mut self, set: Vec<usize>) {
        self.set.clear();
        self.rows.clear();
        for j in set {
            // a subset of a factorizable set always factorizes
            let ok = self.push(j);
            debug_assert!(ok);
        }
    }

    /// Solves `G[P, P] z = rhs`.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let p = self.set.len();
        let mut y = rhs.to_vec();
        for r in 0..p {
            let mut s = y[r];
            for k in 0..r {
                s -= self.rows[r][k] * y[k];
            }
            y[r] = s / self.rows[r][r];
        }
        for r in (0..p).rev() {
            let mut s = y[r];
            for k in r + 1..p {
                s -= self.rows[k][r] * y[k];
            }
            y[r] = s / self.rows[r][r];
        }
        y
    }
}

fn lawson_hanson(gram: &DMatrix<f64>, c: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = c.len();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    // variables that may not enter until x changes again
    let mut blocked = vec![false; n];
    let mut chol = PassiveCholesky::new(gram);
    let mut w = c.to_vec();
    let mut iterations = 0;

    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !passive[i] && !blocked[i] && w[i] > tol && best.is_none_or(|b| w[i] > w[b]) {
                best = Some(i);
            }
        }
        let Some(j) = best else { break };
        iterations += 1;
        if iterations > max_iter {
            let kkt_violation = kkt_violation(gram, c, &x);
            return Err(Error::NnlsNotConverged { x, kkt_violation, iterations: iterations - 1 });
        }
        if !chol.push(j) {
            blocked[j] = true;
            continue;
        }
        let rhs: Vec<f64> = chol.set.iter().map(|&i| c[i]).collect();
        let mut z = chol.solve(&rhs);
        if *z.last().unwrap() <= 0.0 {
            chol.pop();
            blocked[j] = true;
            continue;
        }
        passive[j] = true;

        // inner loop: step back toward feasibility until z is strictly positive
        let mut inner = 0;
        while z.iter().any(|&v| v <= 0.0) {
            inner += 1;
            if inner > 3 * n {
                let kkt_violation = kkt_violation(gram, c, &x);
                return Err(Error::NnlsNotConverged { x, kkt_violation, iterations });
            }
            let mut alpha = f64::INFINITY;
            let mut arg = 0;
            for (k, &i) in chol.set.iter().enumerate() {
                if z[k] <= 0.0 {
                    let a = x[i] / (x[i] - z[k]);
                    if a < alpha {
                        alpha = a;
                        arg = i;
                    }
                }
            }
            for (k, &i) in chol.set.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
            }
            x[arg] = 0.0;
            let keep: Vec<usize> = chol
                .set
                .iter()
                .copied()
                .filter(|&i| {
                    if x[i] <= 0.0 {
                        x[i] = 0.0;
                        passive[i] = false;
                        false
                    } else {
                        true
                    }
                })
                .collect();
            chol.rebuild(keep);
            let rhs: Vec<f64> = chol.set.iter().map(|&i| c[i]).collect();
            z = chol.solve(&rhs);
        }
        for (k, &i) in chol.set.iter().enumerate() {
            x[i] = z[k];
        }
        w = dual(gram, c, &x);
        blocked.iter_mut().for_each(|b| *b = false);
    }
    Ok((x, iterations))
}

/// Solves one problem.
pub fn solve_nnls(p: &NnlsProblem) -> Result<NnlsSolution> {
    let (m, _) = p.design.shape();
    if p.target.len() != m {
        return Err(Error::Dimension(format!("design has {m} rows, target has {}", p.target.len())));
    }
    let system = GramSystem::from_design(&p.design);
    solve_with(&system, &p.design, &p.target, p.tol_kkt, p.max_iter)
}

fn solve_with(
    system: &GramSystem,
    design: &DMatrix<f64>,
    target: &[f64],
    tol: f64,
    max_iter: Option<usize>,
) -> Result<NnlsSolution> {
    let b = nalgebra::DVector::from_column_slice(target);
    let c = design.tr_mul(&b);
    let btb = b.norm_squared();
    let mut sol = system.solve(c.as_slice(), btb, tol, max_iter)?;
    // report the residual directly rather than from the quadratic form
    let x = nalgebra::DVector::from_column_slice(&sol.x);
    sol.residual_norm = (design * x - b).norm();
    Ok(sol)
}

/// Solves one problem per target, sharing the Gram matrix of `design`.
/// Rows are independent and run in parallel; results are identical to
/// calling [`solve_nnls`] on each target.
pub fn solve_nnls_batch(
    design: &DMatrix<f64>,
    targets: &[Vec<f64>],
    tol_kkt: f64,
    max_iter: Option<usize>,
) -> Result<Vec<NnlsSolution>> {
    let m = design.nrows();
    if let Some(k) = targets.iter().position(|t| t.len() != m) {
        return Err(Error::Dimension(format!("target {k} has length {}, design has {m} rows", targets[k].len())));
    }
    let system = GramSystem::from_design(design);
    targets
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            solve_with(&system, design, t, tol_kkt, max_iter).map_err(|e| Error::NnlsRow {
                row: k,
                term: None,
                source: Box::new(e),
            })
        })
        .collect()
}
