//! Sparse coding of query embeddings against prompt dictionaries.
//!
//! Queries `Q` (B × d) are approximated as `P · D` with a dictionary `D`
//! (K × d) and sparse coefficients `P` (B × K) by minimising the LASSO
//! objective `½‖Q − P D‖²_F + λ‖P‖₁` with iterative soft thresholding:
//!
//! ```text
//! P ← S_{λt}(P + t · (Q − P D) Dᵀ),   t = μ / σ_max(D Dᵀ)
//! ```
//!
//! where `S_τ` is the elementwise soft-threshold operator. With `μ ≤ 1` every
//! step is a descent step, so the objective trace never increases. Stages of
//! the hierarchy feed their reconstruction `P* D` forward as the next stage's
//! queries.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const ZERO_THRESHOLD: f64 = 1e-12;
const POWER_MAX_ITER: usize = 10_000;
const POWER_TOL: f64 = 1e-8;

pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

pub fn to_dmatrix(m: &EmbeddingMatrix) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.count(), m.dim(), m.as_slice().iter().map(|&v| v as f64))
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        data.extend(m.row(r).iter().map(|&v| v as f32));
    }
    EmbeddingMatrix::new(m.ncols(), data)
}

/// Largest eigenvalue of `D Dᵀ` (equivalently of `Dᵀ D`), by power iteration
/// from a fixed pseudo-random start vector.
///
/// Iteration stops once `‖G v − ρ v‖ ≤ 1e-8 · ρ` for the Rayleigh quotient `ρ`.
pub fn spectral_norm(dictionary: &DMatrix<f64>) -> Result<f64> {
    if dictionary.is_empty() {
        return Err(Error::Argument("dictionary is empty".into()));
    }
    let gram = if dictionary.nrows() <= dictionary.ncols() {
        dictionary * dictionary.transpose()
    } else {
        dictionary.transpose() * dictionary
    };
    let n = gram.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let mut v = nalgebra::DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    v /= v.norm();
    for _ in 0..POWER_MAX_ITER {
        let w = &gram * &v;
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        let rho = v.dot(&w);
        if (&w - &v * rho).norm() <= POWER_TOL * rho.abs() {
            return Ok(rho);
        }
        v = w / wn;
    }
    Err(Error::Convergence {
        what: "power iteration for the dictionary spectral norm",
        iterations: POWER_MAX_ITER,
    })
}

/// `Q − P D`.
pub fn residual(queries: &DMatrix<f64>, coefficients: &DMatrix<f64>, dictionary: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if coefficients.nrows() != queries.nrows() {
        return Err(Error::dim(queries.nrows(), coefficients.nrows()));
    }
    if coefficients.ncols() != dictionary.nrows() {
        return Err(Error::dim(dictionary.nrows(), coefficients.ncols()));
    }
    if dictionary.ncols() != queries.ncols() {
        return Err(Error::dim(queries.ncols(), dictionary.ncols()));
    }
    Ok(queries - coefficients * dictionary)
}

/// `½‖Q − P D‖²_F + λ‖P‖₁`.
pub fn objective(queries: &DMatrix<f64>, coefficients: &DMatrix<f64>, dictionary: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let r = residual(queries, coefficients, dictionary)?;
    Ok(lasso_value(&r, coefficients, lambda))
}

fn lasso_value(residual: &DMatrix<f64>, coefficients: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * residual.norm_squared() + lambda * coefficients.iter().map(|v| v.abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    pub lambda: f64,
    /// Multiplier on the `1/σ_max` step, in `(0, 1]`.
    pub step_scale: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            step_scale: 1.0,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Argument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::Argument(format!("step scale must lie in (0, 1], got {}", self.step_scale)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Argument(format!("tolerance must be finite and > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SparseCodeProblem {
    pub queries: DMatrix<f64>,
    pub dictionary: DMatrix<f64>,
    pub settings: SolverSettings,
    /// Warm start for the coefficients; zeros when absent.
    pub initial: Option<DMatrix<f64>>,
}

impl SparseCodeProblem {
    pub fn new(queries: DMatrix<f64>, dictionary: DMatrix<f64>, settings: SolverSettings) -> Self {
        Self {
            queries,
            dictionary,
            settings,
            initial: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseCodeState {
    pub coefficients: DMatrix<f64>,
    pub residual: DMatrix<f64>,
    /// Objective at the starting point followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
    pub sigma_max: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max |P − S_{λt}(P + t (Q − P D) Dᵀ)|` at the returned coefficients.
    pub fixed_point_residual: f64,
}

impl SparseCodeState {
    pub fn nnz(&self) -> usize {
        self.coefficients.iter().filter(|v| v.abs() >= ZERO_THRESHOLD).count()
    }

    /// Fraction of coefficients that are (numerically) zero.
    pub fn sparsity(&self) -> f64 {
        let total = self.coefficients.len();
        if total == 0 {
            return 1.0;
        }
        1.0 - self.nnz() as f64 / total as f64
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting objective")
    }
}

fn ista_step(p: &DMatrix<f64>, r: &DMatrix<f64>, dictionary: &DMatrix<f64>, step: f64, tau: f64) -> DMatrix<f64> {
    let mut next = p + (r * dictionary.transpose()) * step;
    next.apply(|v| *v = soft_threshold(*v, tau));
    next
}

/// Runs ISTA until both the objective change and the largest coefficient
/// change drop below `tol`, or `max_iter` iterations have run.
pub fn ista_solve(problem: &SparseCodeProblem) -> Result<SparseCodeState> {
    let s = &problem.settings;
    s.validate()?;
    let (q, d) = (&problem.queries, &problem.dictionary);
    if d.ncols() != q.ncols() {
        return Err(Error::dim(q.ncols(), d.ncols()));
    }
    let mut p = match &problem.initial {
        Some(p0) => {
            if p0.shape() != (q.nrows(), d.nrows()) {
                return Err(Error::dim(q.nrows() * d.nrows(), p0.len()));
            }
            p0.clone()
        }
        None => DMatrix::zeros(q.nrows(), d.nrows()),
    };
    let sigma_max = spectral_norm(d)?;
    let mut r = residual(q, &p, d)?;
    let mut obj = lasso_value(&r, &p, s.lambda);
    let mut trace = vec![obj];

    if sigma_max == 0.0 {
        // A zero dictionary cannot reduce the residual; zero codes are optimal.
        p.fill(0.0);
        let r = q.clone();
        let obj = lasso_value(&r, &p, s.lambda);
        return Ok(SparseCodeState {
            coefficients: p,
            residual: r,
            objective_trace: vec![obj],
            sigma_max,
            iterations: 0,
            converged: true,
            fixed_point_residual: 0.0,
        });
    }

    let step = s.step_scale / sigma_max;
    let tau = s.lambda * step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < s.max_iter {
        iterations += 1;
        let next = ista_step(&p, &r, d, step, tau);
        let delta = (&next - &p).amax();
        p = next;
        r = q - &p * d;
        let new_obj = lasso_value(&r, &p, s.lambda);
        trace.push(new_obj);
        let change = (obj - new_obj).abs();
        obj = new_obj;
        if change < s.tol && delta < s.tol {
            converged = true;
            break;
        }
    }
    let fixed_point_residual = (ista_step(&p, &r, d, step, tau) - &p).amax();
    Ok(SparseCodeState {
        coefficients: p,
        residual: r,
        objective_trace: trace,
        sigma_max,
        iterations,
        converged,
        fixed_point_residual,
    })
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub dictionary: DMatrix<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sparsity: f64,
    pub nnz: usize,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HierarchyOutput {
    pub embeddings: DMatrix<f64>,
    pub stages: Vec<StageReport>,
}

/// Codes the queries stage by stage, passing each reconstruction `P* D` on as
/// the next stage's queries. `settings.lambda` is ignored in favour of the
/// per-stage value.
pub fn hierarchical_apply(stages: &[Stage], queries: &DMatrix<f64>, settings: &SolverSettings) -> Result<HierarchyOutput> {
    if stages.is_empty() {
        return Err(Error::Argument("at least one stage is required".into()));
    }
    let mut current = queries.clone();
    let mut reports = Vec::with_capacity(stages.len());
    for stage in stages {
        let problem = SparseCodeProblem::new(
            current.clone(),
            stage.dictionary.clone(),
            SolverSettings {
                lambda: stage.lambda,
                ..*settings
            },
        );
        let state = ista_solve(&problem)?;
        current = &state.coefficients * &stage.dictionary;
        reports.push(StageReport {
            lambda: stage.lambda,
            iterations: state.iterations,
            converged: state.converged,
            sparsity: state.sparsity(),
            nnz: state.nnz(),
            objective_trace: state.objective_trace,
        });
    }
    Ok(HierarchyOutput {
        embeddings: current,
        stages: reports,
    })
}

/// Gradient of `½‖Q − P D‖²_F` with respect to the dictionary: `−Pᵀ (Q − P D)`.
pub fn dictionary_gradient(queries: &DMatrix<f64>, coefficients: &DMatrix<f64>, dictionary: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = residual(queries, coefficients, dictionary)?;
    Ok(-(coefficients.transpose() * r))
}

#[derive(Debug, Clone)]
pub struct DictionaryFit {
    pub dictionary: DMatrix<f64>,
    pub coefficients: DMatrix<f64>,
    /// Objective after each coding step and after each dictionary step.
    pub objective_trace: Vec<f64>,
}

/// Alternates warm-started ISTA on the codes with a `1/σ_max(PᵀP)` gradient
/// step on the dictionary. Both half-steps are descent steps.
pub fn learn_dictionary(
    queries: &DMatrix<f64>,
    initial: &DMatrix<f64>,
    settings: &SolverSettings,
    rounds: usize,
) -> Result<DictionaryFit> {
    let mut dictionary = initial.clone();
    let mut coefficients: Option<DMatrix<f64>> = None;
    let mut trace = Vec::with_capacity(2 * rounds);
    for _ in 0..rounds {
        let mut problem = SparseCodeProblem::new(queries.clone(), dictionary.clone(), *settings);
        problem.initial = coefficients.take();
        let state = ista_solve(&problem)?;
        trace.push(state.objective());
        let p = state.coefficients;
        let lipschitz = spectral_norm(&p)?;
        if lipschitz > 0.0 {
            let g = dictionary_gradient(queries, &p, &dictionary)?;
            dictionary -= g / lipschitz;
        }
        trace.push(objective(queries, &p, &dictionary, settings.lambda)?);
        coefficients = Some(p);
    }
    Ok(DictionaryFit {
        dictionary,
        coefficients: coefficients.unwrap_or_else(|| DMatrix::zeros(queries.nrows(), initial.nrows())),
        objective_trace: trace,
    })
}
