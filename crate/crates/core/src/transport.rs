//! Entropic optimal transport between local feature tokens and prompts.
//!
//! Three costs are supported: the node cost `1 - cos(Z, W)`, the
//! Gromov-Wasserstein pseudo-cost built from intra-domain cosine graphs, and
//! their convex combination. Plans are found with a log-domain Sinkhorn
//! solver; [`solve_assignment`] alternates between re-linearizing the
//! Gromov-Wasserstein term around the current plan and re-solving.
//!
//! [`exact_ot_bruteforce`] enumerates permutations and serves as an exact
//! reference for small square problems with uniform marginals.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_matrix, cosine_self, EmbeddingMatrix, Matrix, ProbVector};

/// Largest problem [`exact_ot_bruteforce`] will enumerate (8! plans).
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Symmetry tolerance for intra-domain similarity graphs.
const GRAPH_SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    /// Entropic regularization strength.
    pub lambda: f64,
    /// Maximum Sinkhorn sweeps per solve.
    pub inner_max: usize,
    /// Maximum re-linearizations of the fused cost.
    pub outer_max: usize,
    /// Largest accepted marginal violation.
    pub marginal_tol: f64,
    /// Outer loop stops once successive plans differ by less than this (max-abs).
    pub plan_tol: f64,
    /// Weight of the Gromov-Wasserstein (edge) cost in the fused cost.
    pub alpha: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            inner_max: 100,
            outer_max: 10,
            marginal_tol: 1e-6,
            plan_tol: 1e-6,
            alpha: 0.2,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidWeight(self.alpha));
        }
        if !(self.marginal_tol > 0.0) || !(self.plan_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.inner_max == 0 || self.outer_max == 0 {
            return Err(Error::InvalidConfig(
                "iteration limits must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }
}

/// Solver bookkeeping attached to every plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    /// Sinkhorn sweeps summed over all outer iterations.
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Max-abs violation of the row marginal `p`.
    pub row_residual: f64,
    /// Max-abs violation of the column marginal `q`; zero when columns are unconstrained.
    pub col_residual: f64,
    /// Marginals met within `marginal_tol`.
    pub converged: bool,
    /// Successive outer plans settled within `plan_tol`.
    pub outer_converged: bool,
    /// False for plans (such as cross-attention) that only fix the row marginal.
    pub columns_constrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    plan: Matrix,
    p: ProbVector,
    q: ProbVector,
    diagnostics: PlanDiagnostics,
}

impl TransportPlan {
    pub(crate) fn from_parts(
        plan: Matrix,
        p: ProbVector,
        q: ProbVector,
        diagnostics: PlanDiagnostics,
    ) -> Self {
        Self {
            plan,
            p,
            q,
            diagnostics,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.plan
    }

    pub fn p(&self) -> &ProbVector {
        &self.p
    }

    pub fn q(&self) -> &ProbVector {
        &self.q
    }

    pub fn diagnostics(&self) -> &PlanDiagnostics {
        &self.diagnostics
    }

    /// Transport objective `<T, C>`.
    pub fn cost(&self, cost: &Matrix) -> Result<f64> {
        self.plan.frobenius_dot(cost)
    }
}

/// Max-abs marginal violations `(rows vs p, columns vs q)` of `plan`.
pub fn marginal_residuals(plan: &Matrix, p: &[f64], q: &[f64]) -> (f64, f64) {
    let max_dev = |sums: Vec<f64>, target: &[f64]| {
        sums.iter()
            .zip(target)
            .fold(0.0, |acc: f64, (s, t)| acc.max((s - t).abs()))
    };
    (max_dev(plan.row_sums(), p), max_dev(plan.col_sums(), q))
}

/// Node cost `1 - cos(z_i, w_j)`, entries in `[0, 2]`.
pub fn wd_cost(z: &EmbeddingMatrix, w: &EmbeddingMatrix) -> Result<Matrix> {
    Ok(cosine_matrix(z, w)?.map(|c| 1.0 - c))
}

/// Gromov-Wasserstein pseudo-cost `C_zw - 2 C_z T C_w^T` with
/// `C_zw = (C_z∘C_z) p 1^T + 1 q^T (C_w∘C_w)^T`.
///
/// Contracted against `T` this equals
/// `sum_{i,j,k,l} (C_z[i,k] - C_w[j,l])^2 T[i,j] T[k,l]` whenever `T` has
/// marginals `p` and `q`.
pub fn gwd_cost(
    c_z: &Matrix,
    c_w: &Matrix,
    p: &ProbVector,
    q: &ProbVector,
    plan: &Matrix,
) -> Result<Matrix> {
    let terms = GromovTerms::new(c_z, c_w, p, q)?;
    terms.cost(plan)
}

/// The plan-independent pieces of the Gromov-Wasserstein pseudo-cost.
struct GromovTerms<'a> {
    c_z: &'a Matrix,
    c_w_t: Matrix,
    cross: Matrix,
}

impl<'a> GromovTerms<'a> {
    fn new(c_z: &'a Matrix, c_w: &Matrix, p: &ProbVector, q: &ProbVector) -> Result<Self> {
        let (n, m) = (c_z.rows(), c_w.rows());
        if c_z.cols() != n || c_w.cols() != m {
            return Err(Error::InvalidGraph(
                "similarity graphs must be square".into(),
            ));
        }
        if !c_z.is_symmetric(GRAPH_SYMMETRY_TOL) || !c_w.is_symmetric(GRAPH_SYMMETRY_TOL) {
            return Err(Error::InvalidGraph(
                "similarity graphs must be symmetric".into(),
            ));
        }
        if p.len() != n || q.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "marginals of length {}/{} for a {n}x{m} problem",
                p.len(),
                q.len()
            )));
        }
        let row_term = c_z.map(|x| x * x).matvec(p.as_slice())?;
        let col_term = c_w.map(|x| x * x).matvec(q.as_slice())?;
        let cross = Matrix::from_fn(n, m, |i, j| row_term[i] + col_term[j]);
        Ok(Self {
            c_z,
            c_w_t: c_w.transpose(),
            cross,
        })
    }

    fn cost(&self, plan: &Matrix) -> Result<Matrix> {
        if plan.shape() != self.cross.shape() {
            return Err(Error::ShapeMismatch(format!(
                "plan is {}x{}, expected {}x{}",
                plan.rows(),
                plan.cols(),
                self.cross.rows(),
                self.cross.cols()
            )));
        }
        let coupled = self.c_z.matmul(&plan.matmul(&self.c_w_t)?)?;
        let mut out = self.cross.clone();
        out.add_scaled(-2.0, &coupled)?;
        Ok(out)
    }
}

/// `alpha * C_gwd + (1 - alpha) * C_wd`; the endpoints return the selected
/// matrix unchanged.
pub fn fused_cost(c_wd: &Matrix, c_gwd: &Matrix, alpha: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidWeight(alpha));
    }
    c_wd.check_same_shape(c_gwd)?;
    if alpha == 0.0 {
        return Ok(c_wd.clone());
    }
    if alpha == 1.0 {
        return Ok(c_gwd.clone());
    }
    let mut out = c_wd.map(|x| (1.0 - alpha) * x);
    out.add_scaled(alpha, c_gwd)?;
    Ok(out)
}

/// Entropic OT plan `diag(a) exp(-C/lambda) diag(b)` via log-domain
/// Sinkhorn sweeps. Failing to reach `marginal_tol` within `inner_max`
/// sweeps is reported through [`PlanDiagnostics::converged`], not an error.
pub fn sinkhorn(
    cost: &Matrix,
    p: &ProbVector,
    q: &ProbVector,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    Ok(sinkhorn_warm(cost, p, q, cfg, None)?.0)
}

/// Sinkhorn with an optional starting column potential `ln b`; returns the
/// final `ln b` alongside the plan.
fn sinkhorn_warm(
    cost: &Matrix,
    p: &ProbVector,
    q: &ProbVector,
    cfg: &SinkhornConfig,
    log_b_init: Option<Vec<f64>>,
) -> Result<(TransportPlan, Vec<f64>)> {
    let (n, m) = cost.shape();
    if p.len() != n || q.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "marginals of length {}/{} for a {n}x{m} cost",
            p.len(),
            q.len()
        )));
    }
    if !cost.is_finite() {
        return Err(Error::InvalidCost);
    }
    let kernel = cost.map(|c| -c / cfg.lambda);
    let log_p: Vec<f64> = p.as_slice().iter().map(|x| x.ln()).collect();
    let log_q: Vec<f64> = q.as_slice().iter().map(|x| x.ln()).collect();
    let mut log_b = log_b_init.unwrap_or_else(|| vec![0.0; m]);
    let mut log_a = vec![0.0; n];
    let mut row_lse = vec![0.0; n];
    let mut sweeps = 0;

    for sweep in 0..cfg.inner_max {
        for (i, r) in row_lse.iter_mut().enumerate() {
            *r = lse_row(kernel.row(i), &log_b);
        }
        // Columns are exact after each sweep, so the row sums under the
        // current potentials measure feasibility.
        if sweep > 0 {
            let residual = (0..n).fold(0.0f64, |acc, i| {
                acc.max(((log_a[i] + row_lse[i]).exp() - p.as_slice()[i]).abs())
            });
            if residual <= cfg.marginal_tol {
                break;
            }
        }
        for i in 0..n {
            log_a[i] = log_p[i] - row_lse[i];
        }
        let col_lse = lse_cols(&kernel, &log_a);
        for j in 0..m {
            log_b[j] = log_q[j] - col_lse[j];
        }
        sweeps += 1;
    }

    let plan = Matrix::from_fn(n, m, |i, j| (log_a[i] + kernel[(i, j)] + log_b[j]).exp());
    if !plan.is_finite() {
        return Err(Error::NonFinite("transport plan".into()));
    }
    let (row_residual, col_residual) = marginal_residuals(&plan, p.as_slice(), q.as_slice());
    let diagnostics = PlanDiagnostics {
        inner_iterations: sweeps,
        outer_iterations: 1,
        row_residual,
        col_residual,
        converged: row_residual.max(col_residual) <= cfg.marginal_tol,
        outer_converged: true,
        columns_constrained: true,
    };
    Ok((
        TransportPlan::from_parts(plan, p.clone(), q.clone(), diagnostics),
        log_b,
    ))
}

fn lse_row(kernel_row: &[f64], log_b: &[f64]) -> f64 {
    let max = kernel_row
        .iter()
        .zip(log_b)
        .fold(f64::NEG_INFINITY, |acc, (k, b)| acc.max(k + b));
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s = kernel_row
        .iter()
        .zip(log_b)
        .fold(0.0, |acc, (k, b)| acc + (k + b - max).exp());
    max + s.ln()
}

fn lse_cols(kernel: &Matrix, log_a: &[f64]) -> Vec<f64> {
    let m = kernel.cols();
    let mut max = vec![f64::NEG_INFINITY; m];
    for (row, &a) in kernel.row_iter().zip(log_a) {
        for (mx, &k) in max.iter_mut().zip(row) {
            *mx = mx.max(k + a);
        }
    }
    let mut acc = vec![0.0; m];
    for (row, &a) in kernel.row_iter().zip(log_a) {
        for ((s, &k), &mx) in acc.iter_mut().zip(row).zip(&max) {
            if mx > f64::NEG_INFINITY {
                *s += (k + a - mx).exp();
            }
        }
    }
    max.iter().zip(acc).map(|(&mx, s)| mx + s.ln()).collect()
}

/// Fused graph matching between local tokens `z` (N×d) and prompts `w` (M×d)
/// with uniform marginals.
pub fn solve_assignment(
    z: &EmbeddingMatrix,
    w: &EmbeddingMatrix,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let similarity = cosine_matrix(z, w)?;
    let c_z = cosine_self(z)?;
    let c_w = cosine_self(w)?;
    solve_assignment_from_graphs(&similarity, &c_z, &c_w, cfg)
}

/// [`solve_assignment`] on precomputed graphs: `similarity` is `cos(Z, W)`,
/// `c_z` and `c_w` the intra-domain cosine graphs.
pub fn solve_assignment_from_graphs(
    similarity: &Matrix,
    c_z: &Matrix,
    c_w: &Matrix,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    let (n, m) = similarity.shape();
    if c_z.rows() != n || c_w.rows() != m {
        return Err(Error::ShapeMismatch(format!(
            "graphs of order {}/{} for a {n}x{m} problem",
            c_z.rows(),
            c_w.rows()
        )));
    }
    let p = ProbVector::uniform(n)?;
    let q = ProbVector::uniform(m)?;
    let c_wd = similarity.map(|c| 1.0 - c);
    let gromov = if cfg.alpha > 0.0 {
        Some(GromovTerms::new(c_z, c_w, &p, &q)?)
    } else {
        None
    };

    let mut plan = Matrix::from_fn(n, m, |i, j| p.as_slice()[i] * q.as_slice()[j]);
    let mut result: Option<TransportPlan> = None;
    let mut previous_cost: Option<Matrix> = None;
    let mut log_b = None;
    let mut inner_total = 0;
    let mut outer = 0;
    let mut outer_converged = false;

    while outer < cfg.outer_max {
        let cost = match &gromov {
            Some(g) => fused_cost(&c_wd, &g.cost(&plan)?, cfg.alpha)?,
            None => c_wd.clone(),
        };
        // An unchanged cost reproduces the same plan.
        if previous_cost.as_ref() == Some(&cost) {
            outer_converged = true;
            break;
        }
        let (next, b) = sinkhorn_warm(&cost, &p, &q, cfg, log_b.take())?;
        log_b = Some(b);
        outer += 1;
        inner_total += next.diagnostics.inner_iterations;
        let delta = next.plan.max_abs_diff(&plan)?;
        plan = next.plan.clone();
        result = Some(next);
        previous_cost = Some(cost);
        if delta < cfg.plan_tol {
            outer_converged = true;
            break;
        }
    }

    let mut result = result.expect("outer_max >= 1 guarantees one solve");
    result.diagnostics.inner_iterations = inner_total;
    result.diagnostics.outer_iterations = outer;
    result.diagnostics.outer_converged = outer_converged;
    Ok(result)
}

/// Exact OT value for a square cost with uniform marginals: the cheapest
/// assignment, averaged over rows. Ties resolve to the lexicographically
/// smallest permutation.
pub fn exact_ot_bruteforce(cost: &Matrix) -> Result<(f64, Vec<usize>)> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "brute force needs a square cost, got {}x{}",
            n,
            cost.cols()
        )));
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("empty cost matrix".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    // `permutations` yields in lexicographic order for sorted input.
    for perm in (0..n).permutations(n) {
        let total = perm
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, &j)| acc + cost[(i, j)]);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (total, perm) = best.expect("n >= 1");
    Ok((total / n as f64, perm))
}
