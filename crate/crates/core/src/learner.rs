//! Learning a model from a covariance estimate.
//!
//! With `Γ = ggᵀ` and `B = bbᵀ` the fit `‖Ĉ − HHᵀ‖²_F` becomes
//! `f1(Γ, B) = ‖Ĉ − Σ_{k,l} Γ_kl ∘ P_kl‖²_F` where `Γ_kl` is the (k,l) N×N
//! block of `Γ` and `P_kl = Σ_{q,r} B_kl(q,r) L^{q+r}`. The problem
//!
//! ```text
//! minimize f1(Γ, B) + μ1 f2(Γ) + μ2 tr(B) + μ3 tr(Γ)   over Γ ⪰ 0, B ⪰ 0
//! ```
//!
//! is convex in each block separately and is solved by alternating projected
//! gradient steps, after which `g` and `b` are read off the leading
//! eigenpairs.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Spectrum};
use crate::linalg;
use crate::model::{vandermonde, LsgpModel};

pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub k: usize,
    pub q: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub outer_iters: usize,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub inner_iters: usize,
    /// Gradient steps on the factors `(g, b)` after rank-1 recovery; 0 disables.
    pub refine_iters: usize,
    /// Independent runs from seeds `seed, seed + 1, …`; the lowest final objective wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            k: 1,
            q: 4,
            mu1: 1e-7,
            mu2: 1e-5,
            mu3: 1e-6,
            outer_iters: 50,
            outer_tol: 1e-5,
            inner_tol: 1e-6,
            inner_iters: 500,
            refine_iters: 2000,
            restarts: 1,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if self.q == 0 || self.q > MAX_ORDER {
            return Err(Error::InvalidArgument(format!(
                "Q must be in 1..={MAX_ORDER}, got {}",
                self.q
            )));
        }
        for (name, v) in [("mu1", self.mu1), ("mu2", self.mu2), ("mu3", self.mu3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("outer_tol", self.outer_tol), ("inner_tol", self.inner_tol)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.outer_iters == 0 || self.inner_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    pub gamma: DMatrix<f64>,
    pub bmat: DMatrix<f64>,
    /// Full objective after every half-step (B then Γ), starting with the initial value.
    pub objective_trace: Vec<f64>,
    step_gamma: f64,
    step_b: f64,
}

impl LearnerState {
    pub fn new(gamma: DMatrix<f64>, bmat: DMatrix<f64>) -> Self {
        LearnerState {
            gamma,
            bmat,
            objective_trace: Vec::new(),
            step_gamma: 1.0,
            step_b: 1.0,
        }
    }

    /// Scaled identities plus a small seeded PSD term that breaks the symmetry
    /// between components.
    pub fn initial(obj: &Objective, seed: u64) -> Self {
        let (n, k, q) = (obj.n, obj.k, obj.q);
        let scale = obj.c_hat.trace().abs() / (n * k) as f64;
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perturbed = |dim: usize, s: f64| {
            let v: DVector<f64> = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let v: DVector<f64> = &v / v.norm();
            (DMatrix::identity(dim, dim) + &v * v.transpose() * 0.5) * s
        };
        let gamma = perturbed(n * k, scale);
        let bmat = perturbed(q * k, 1.0 / (q * k) as f64);
        let mut state = LearnerState::new(gamma, bmat);
        state.step_gamma = 1.0 / (obj.c_hat.norm() + 1.0);
        state.step_b = state.step_gamma;
        state
    }
}

/// Precomputed pieces of the objective for fixed `Ĉ`, spectrum, `K` and `Q`.
#[derive(Debug, Clone)]
pub struct Objective {
    c_hat: DMatrix<f64>,
    eigenvectors: DMatrix<f64>,
    frequencies: DVector<f64>,
    laplacian: DMatrix<f64>,
    /// `L^p` for `p = 0..=2Q−2`.
    powers: Vec<DMatrix<f64>>,
    n: usize,
    k: usize,
    q: usize,
}

impl Objective {
    pub fn new(c_hat: &DMatrix<f64>, spectrum: &Spectrum, k: usize, q: usize) -> Result<Self> {
        let n = spectrum.len();
        if c_hat.nrows() != n || c_hat.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c_hat.nrows(),
                context: "covariance estimate",
            });
        }
        if c_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance estimate must be finite".into()));
        }
        if (c_hat - c_hat.transpose()).norm() > 1e-10 * (1.0 + c_hat.norm()) {
            return Err(Error::InvalidArgument("covariance estimate must be symmetric".into()));
        }
        if k == 0 || q == 0 {
            return Err(Error::InvalidArgument("K and Q must be positive".into()));
        }
        let mut powers = Vec::with_capacity(2 * q - 1);
        powers.push(DMatrix::identity(n, n));
        for p in 1..(2 * q - 1) {
            let next = &powers[p - 1] * &spectrum.laplacian;
            powers.push(linalg::symmetrize(&next));
        }
        Ok(Objective {
            c_hat: c_hat.clone(),
            eigenvectors: spectrum.eigenvectors.clone(),
            frequencies: spectrum.frequencies.clone(),
            laplacian: spectrum.laplacian.clone(),
            powers,
            n,
            k,
            q,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.k, self.q)
    }

    fn check(&self, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>) -> Result<()> {
        let (nk, qk) = (self.n * self.k, self.q * self.k);
        if gamma.shape() != (nk, nk) {
            return Err(Error::DimensionMismatch { expected: nk, got: gamma.nrows(), context: "Gamma" });
        }
        if bmat.shape() != (qk, qk) {
            return Err(Error::DimensionMismatch { expected: qk, got: bmat.nrows(), context: "B" });
        }
        Ok(())
    }

    fn gamma_block<'a>(&self, gamma: &'a DMatrix<f64>, k: usize, l: usize) -> nalgebra::DMatrixView<'a, f64> {
        gamma.view((k * self.n, l * self.n), (self.n, self.n))
    }

    /// `P_kl = Σ_p c_p L^p` with `c_p = Σ_{q+r=p} B_kl(q,r)`.
    fn poly_block(&self, bmat: &DMatrix<f64>, k: usize, l: usize) -> DMatrix<f64> {
        let q = self.q;
        let mut out = DMatrix::zeros(self.n, self.n);
        for p in 0..(2 * q - 1) {
            let mut c = 0.0;
            for a in p.saturating_sub(q - 1)..=p.min(q - 1) {
                c += bmat[(k * q + a, l * q + (p - a))];
            }
            if c != 0.0 {
                out += &self.powers[p] * c;
            }
        }
        out
    }

    /// `Σ_{k,l} Γ_kl ∘ P_kl`, which equals `HHᵀ` when both matrices are rank 1.
    pub fn model_term(&self, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.n, self.n);
        for k in 0..self.k {
            for l in 0..self.k {
                let p = self.poly_block(bmat, k, l);
                r += self.gamma_block(gamma, k, l).component_mul(&p);
            }
        }
        r
    }

    fn residual(&self, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>) -> DMatrix<f64> {
        self.model_term(gamma, bmat) - &self.c_hat
    }

    pub fn f1(&self, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>) -> f64 {
        self.residual(gamma, bmat).norm_squared()
    }

    /// `Σ_k Σ_i λ(i) u_iᵀ Γ_kk u_i`.
    pub fn f2(&self, gamma: &DMatrix<f64>) -> f64 {
        let u = &self.eigenvectors;
        (0..self.k)
            .map(|k| {
                let block = self.gamma_block(gamma, k, k);
                let rotated = u.transpose() * block * u;
                (0..self.n).map(|i| self.frequencies[i] * rotated[(i, i)]).sum::<f64>()
            })
            .sum()
    }

    /// `∂f1/∂Γ`: block (k,l) is `2 E ∘ P_kl` with `E = Σ Γ∘P − Ĉ`.
    pub fn grad_f1_gamma(&self, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>) -> DMatrix<f64> {
        let e = self.residual(gamma, bmat);
        self.grad_f1_gamma_from(&e, bmat)
    }

    fn grad_f1_gamma_from(&self, e: &DMatrix<f64>, bmat: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut g = DMatrix::zeros(n * self.k, n * self.k);
        for k in 0..self.k {
            for l in 0..self.k {
                let block = e.component_mul(&self.poly_block(bmat, k, l)) * 2.0;
                g.view_mut((k * n, l * n), (n, n)).copy_from(&block);
            }
        }
        g
    }

    /// `∂f1/∂B`: entry (k,l,q,r) is `2 ⟨E ∘ Γ_kl, L^{q+r}⟩`.
    pub fn grad_f1_b(&self, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>) -> DMatrix<f64> {
        let e = self.residual(gamma, bmat);
        self.grad_f1_b_from(&e, gamma)
    }

    fn grad_f1_b_from(&self, e: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.q;
        let mut g = DMatrix::zeros(q * self.k, q * self.k);
        for k in 0..self.k {
            for l in 0..self.k {
                let weighted = e.component_mul(&self.gamma_block(gamma, k, l));
                let inner: Vec<f64> = self.powers.iter().map(|p| linalg::frob_dot(&weighted, p)).collect();
                for a in 0..q {
                    for b in 0..q {
                        g[(k * q + a, l * q + b)] = 2.0 * inner[a + b];
                    }
                }
            }
        }
        g
    }

    /// `∂f2/∂Γ`: `L` on every diagonal block.
    pub fn grad_f2_gamma(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut g = DMatrix::zeros(n * self.k, n * self.k);
        for k in 0..self.k {
            g.view_mut((k * n, k * n), (n, n)).copy_from(&self.laplacian);
        }
        g
    }

    /// `f1 + μ1 f2 + μ2 tr(B) + μ3 tr(Γ)`.
    pub fn total(&self, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>, cfg: &LearnerConfig) -> f64 {
        self.f1(gamma, bmat) + cfg.mu1 * self.f2(gamma) + cfg.mu2 * bmat.trace() + cfg.mu3 * gamma.trace()
    }
}

/// `‖Ĉ − Σ Γ_kl ∘ P_kl‖²_F`; `K` and `Q` are inferred from the shapes.
pub fn objective_f1(gamma: &DMatrix<f64>, bmat: &DMatrix<f64>, c_hat: &DMatrix<f64>, spectrum: &Spectrum) -> Result<f64> {
    let (k, q) = infer_dims(gamma, bmat, spectrum.len())?;
    let obj = Objective::new(c_hat, spectrum, k, q)?;
    obj.check(gamma, bmat)?;
    Ok(obj.f1(gamma, bmat))
}

/// `Σ_k tr(L Γ_kk)` in its eigen form; `K` is inferred from the shape.
pub fn objective_f2(gamma: &DMatrix<f64>, spectrum: &Spectrum) -> Result<f64> {
    let n = spectrum.len();
    if gamma.nrows() % n != 0 || gamma.nrows() != gamma.ncols() || gamma.nrows() == 0 {
        return Err(Error::DimensionMismatch { expected: n, got: gamma.nrows(), context: "Gamma" });
    }
    let obj = Objective::new(&DMatrix::zeros(n, n), spectrum, gamma.nrows() / n, 1)?;
    Ok(obj.f2(gamma))
}

fn infer_dims(gamma: &DMatrix<f64>, bmat: &DMatrix<f64>, n: usize) -> Result<(usize, usize)> {
    if gamma.nrows() != gamma.ncols() || gamma.nrows() == 0 || gamma.nrows() % n != 0 {
        return Err(Error::DimensionMismatch { expected: n, got: gamma.nrows(), context: "Gamma" });
    }
    let k = gamma.nrows() / n;
    if bmat.nrows() != bmat.ncols() || bmat.nrows() == 0 || bmat.nrows() % k != 0 {
        return Err(Error::DimensionMismatch { expected: k, got: bmat.nrows(), context: "B" });
    }
    Ok((k, bmat.nrows() / k))
}

/// Result of one projected-gradient subproblem solve.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub iterate: DMatrix<f64>,
    /// Subproblem objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub step: f64,
}

/// Minimizes `value` over the PSD cone by accelerated projected gradient
/// with backtracking (monotone FISTA).
///
/// Each trial point `z = Π(y − t∇F(y))` satisfies the sufficient-decrease
/// test `F(z) ≤ F(y) + ⟨∇F(y), z − y⟩ + ‖z − y‖² / (2t)`. The iterate only
/// moves to `z` when that lowers the objective, so the trace is
/// non-increasing; a rejected trial restarts the momentum.
fn projected_gradient(
    start: &DMatrix<f64>,
    value: impl Fn(&DMatrix<f64>) -> f64,
    gradient: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    mut step: f64,
    tol: f64,
    max_iter: usize,
    name: &'static str,
) -> Result<StepOutcome> {
    let mut x = linalg::project_psd(start);
    let mut fx = value(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite { step: name, iteration: 0 });
    }
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut fy = fx;
    let mut momentum = 1.0f64;
    for iteration in 1..=max_iter {
        let g = gradient(&y);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: name, iteration });
        }
        let mut trial = None;
        for _ in 0..60 {
            let z = linalg::project_psd(&(&y - &g * step));
            let d = &z - &y;
            let fz = value(&z);
            let bound = fy + linalg::frob_dot(&g, &d) + d.norm_squared() / (2.0 * step);
            if fz.is_finite() && fz <= bound + 1e-14 * fy.abs().max(1.0) {
                trial = Some((z, fz));
                break;
            }
            step *= 0.5;
        }
        let Some((z, fz)) = trial else {
            break;
        };
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        if fz < fx {
            let decrease = fx - fz;
            let x_prev = std::mem::replace(&mut x, z);
            fx = fz;
            trace.push(fx);
            if decrease <= tol * fx.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            let beta = (momentum - 1.0) / next_momentum;
            y = &x + (&x - &x_prev) * beta;
            momentum = next_momentum;
            fy = value(&y);
            if !fy.is_finite() {
                y = x.clone();
                fy = fx;
                momentum = 1.0;
            }
        } else if momentum > 1.0 {
            y = x.clone();
            fy = fx;
            momentum = 1.0;
        } else {
            break;
        }
        step *= 1.1;
    }
    Ok(StepOutcome { iterate: x, trace, step })
}

/// Minimizes `f1 + μ2 tr(B)` over `B ⪰ 0` with `Γ` fixed.
pub fn solve_b_step(state: &LearnerState, obj: &Objective, cfg: &LearnerConfig) -> Result<StepOutcome> {
    obj.check(&state.gamma, &state.bmat)?;
    let gamma = &state.gamma;
    let qk = obj.q * obj.k;
    let eye = DMatrix::<f64>::identity(qk, qk);
    projected_gradient(
        &state.bmat,
        |b| obj.f1(gamma, b) + cfg.mu2 * b.trace(),
        |b| obj.grad_f1_b(gamma, b) + &eye * cfg.mu2,
        state.step_b,
        cfg.inner_tol,
        cfg.inner_iters,
        "B step",
    )
}

/// Minimizes `f1 + μ1 f2 + μ3 tr(Γ)` over `Γ ⪰ 0` with `B` fixed.
pub fn solve_gamma_step(state: &LearnerState, obj: &Objective, cfg: &LearnerConfig) -> Result<StepOutcome> {
    obj.check(&state.gamma, &state.bmat)?;
    let bmat = &state.bmat;
    let nk = obj.n * obj.k;
    let linear = obj.grad_f2_gamma() * cfg.mu1 + DMatrix::<f64>::identity(nk, nk) * cfg.mu3;
    projected_gradient(
        &state.gamma,
        |g| obj.f1(g, bmat) + cfg.mu1 * obj.f2(g) + cfg.mu3 * g.trace(),
        |g| obj.grad_f1_gamma(g, bmat) + &linear,
        state.step_gamma,
        cfg.inner_tol,
        cfg.inner_iters,
        "Gamma step",
    )
}

/// Factored objective `F(g, b)` equal to the full objective at `Γ = ggᵀ`, `B = bbᵀ`.
fn factored_value(obj: &Objective, cfg: &LearnerConfig, g: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let gamma = g * g.transpose();
    let bmat = b * b.transpose();
    obj.f1(&gamma, &bmat) + cfg.mu1 * obj.f2(&gamma) + cfg.mu2 * b.norm_squared() + cfg.mu3 * g.norm_squared()
}

/// Result of [`refine_factors`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub g: DVector<f64>,
    pub b: DVector<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: u64,
}

struct FactoredProblem<'a> {
    obj: &'a Objective,
    cfg: &'a LearnerConfig,
    linear: DMatrix<f64>,
}

impl FactoredProblem<'_> {
    fn split(&self, p: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let nk = self.obj.n * self.obj.k;
        (DVector::from_column_slice(&p[..nk]), DVector::from_column_slice(&p[nk..]))
    }
}

impl CostFunction for FactoredProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (g, b) = self.split(p);
        Ok(factored_value(self.obj, self.cfg, &g, &b))
    }
}

impl Gradient for FactoredProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let (g, b) = self.split(p);
        let gamma = &g * g.transpose();
        let bmat = &b * b.transpose();
        let dg = (self.obj.grad_f1_gamma(&gamma, &bmat) + &self.linear) * &g * 2.0;
        let db = (self.obj.grad_f1_b(&gamma, &bmat) * &b + &b * self.cfg.mu2) * 2.0;
        Ok(dg.iter().chain(db.iter()).copied().collect())
    }
}

/// L-BFGS on the stacked factors `(g, b)` of the full objective at
/// `Γ = ggᵀ`, `B = bbᵀ`, using `∇_g F = 2 ∇_Γ F · g` and `∇_b F = 2 ∇_B F · b`.
/// Runs at most `refine_iters` iterations; the best point seen is returned.
pub fn refine_factors(obj: &Objective, cfg: &LearnerConfig, g: &DVector<f64>, b: &DVector<f64>) -> Result<Refinement> {
    let (n, k, q) = (obj.n, obj.k, obj.q);
    if g.len() != n * k {
        return Err(Error::DimensionMismatch { expected: n * k, got: g.len(), context: "stacked membership vector" });
    }
    if b.len() != q * k {
        return Err(Error::DimensionMismatch { expected: q * k, got: b.len(), context: "stacked coefficient vector" });
    }
    let initial_objective = factored_value(obj, cfg, g, b);
    if !initial_objective.is_finite() {
        return Err(Error::NonFinite { step: "refinement", iteration: 0 });
    }
    let unchanged = Refinement {
        g: g.clone(),
        b: b.clone(),
        initial_objective,
        final_objective: initial_objective,
        iterations: 0,
    };
    if cfg.refine_iters == 0 {
        return Ok(unchanged);
    }
    let problem = FactoredProblem {
        obj,
        cfg,
        linear: obj.grad_f2_gamma() * cfg.mu1 + DMatrix::<f64>::identity(n * k, n * k) * cfg.mu3,
    };
    let start: Vec<f64> = g.iter().chain(b.iter()).copied().collect();
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_cost(cfg.inner_tol * 1e-3)
        .and_then(|s| s.with_tolerance_grad(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let run = Executor::new(problem, solver)
        .configure(|st| st.param(start).max_iters(cfg.refine_iters as u64))
        .run();
    let Ok(run) = run else {
        return Ok(unchanged);
    };
    let state = run.state();
    let best = state.get_best_param().cloned();
    let cost = state.get_best_cost();
    match best {
        Some(p) if cost.is_finite() && cost <= initial_objective => {
            let nk = n * k;
            Ok(Refinement {
                g: DVector::from_column_slice(&p[..nk]),
                b: DVector::from_column_slice(&p[nk..]),
                initial_objective,
                final_objective: cost,
                iterations: state.get_iter(),
            })
        }
        _ => Ok(unchanged),
    }
}

/// Leading rank-1 factor `√σ₁ v₁` of a PSD matrix, sign-canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1 {
    pub vector: DVector<f64>,
    /// `σ₂/σ₁`, or 0 when the matrix has a single nonzero eigenvalue.
    pub residual: f64,
    /// True when the matrix has no positive eigenvalue.
    pub degenerate: bool,
}

pub fn rank1_extract(m: &DMatrix<f64>) -> Rank1 {
    let n = m.nrows();
    if n == 0 {
        return Rank1 { vector: DVector::zeros(0), residual: 0.0, degenerate: true };
    }
    let eig = SymmetricEigen::new(linalg::symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s1 = eig.eigenvalues[order[0]];
    if s1 <= 0.0 {
        return Rank1 { vector: DVector::zeros(n), residual: 0.0, degenerate: true };
    }
    let s2 = if n > 1 { eig.eigenvalues[order[1]].max(0.0) } else { 0.0 };
    let mut v = eig.eigenvectors.column(order[0]).into_owned() * s1.sqrt();
    linalg::canonical_sign(&mut v);
    Rank1 { vector: v, residual: s2 / s1, degenerate: false }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// Full objective after every half-step.
    pub objective_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub gamma_residual: f64,
    pub b_residual: f64,
    pub b_step_seconds: Vec<f64>,
    pub gamma_step_seconds: Vec<f64>,
    /// Factored objective before and after refinement.
    pub refine_objective: [f64; 2],
    pub refine_iterations: u64,
    /// Restart that produced the returned model.
    pub restart: usize,
    /// Final objective of every restart; NaN where the run degenerated.
    pub restart_objectives: Vec<f64>,
    /// Indices of components dropped because their extracted factor vanished.
    pub dropped_components: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LearnOutput {
    pub model: LsgpModel,
    pub state: LearnerState,
    pub diagnostics: Diagnostics,
}

/// Alternating minimization followed by rank-1 recovery of `g` and `b`.
pub fn learn_lsgp(graph: &Arc<Graph>, c_hat: &DMatrix<f64>, cfg: &LearnerConfig) -> Result<LearnOutput> {
    cfg.validate()?;
    let obj = Objective::new(c_hat, graph.spectrum(), cfg.k, cfg.q)?;
    let mut best: Option<LearnOutput> = None;
    let mut finals = Vec::with_capacity(cfg.restarts);
    let mut failure = None;
    for r in 0..cfg.restarts {
        match learn_once(graph, &obj, cfg, cfg.seed.wrapping_add(r as u64)) {
            Ok(mut out) => {
                let f = out.diagnostics.refine_objective[1];
                finals.push(f);
                out.diagnostics.restart = r;
                if best.as_ref().is_none_or(|b| f < b.diagnostics.refine_objective[1]) {
                    best = Some(out);
                }
            }
            Err(Error::ZeroModel) => {
                finals.push(f64::NAN);
                failure = Some(Error::ZeroModel);
            }
            Err(e) => return Err(e),
        }
    }
    let mut out = best.ok_or(failure.unwrap_or(Error::ZeroModel))?;
    out.diagnostics.restart_objectives = finals;
    Ok(out)
}

fn learn_once(graph: &Arc<Graph>, obj: &Objective, cfg: &LearnerConfig, seed: u64) -> Result<LearnOutput> {
    let spectrum = graph.spectrum();
    let mut state = LearnerState::initial(&obj, seed);
    let mut diag = Diagnostics::default();
    let mut current = obj.total(&state.gamma, &state.bmat, cfg);
    state.objective_trace.push(current);
    for outer in 0..cfg.outer_iters {
        let before = current;

        let t = Instant::now();
        let b = solve_b_step(&state, &obj, cfg)?;
        diag.b_step_seconds.push(t.elapsed().as_secs_f64());
        state.bmat = b.iterate;
        state.step_b = b.step;
        current = current.min(obj.total(&state.gamma, &state.bmat, cfg));
        state.objective_trace.push(current);

        let t = Instant::now();
        let g = solve_gamma_step(&state, &obj, cfg)?;
        diag.gamma_step_seconds.push(t.elapsed().as_secs_f64());
        state.gamma = g.iterate;
        state.step_gamma = g.step;
        current = current.min(obj.total(&state.gamma, &state.bmat, cfg));
        state.objective_trace.push(current);

        diag.outer_iterations = outer + 1;
        if before - current <= cfg.outer_tol * current.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    diag.objective_trace = state.objective_trace.clone();

    let gr = rank1_extract(&state.gamma);
    let br = rank1_extract(&state.bmat);
    diag.gamma_residual = gr.residual;
    diag.b_residual = br.residual;
    if gr.degenerate || br.degenerate {
        return Err(Error::ZeroModel);
    }
    let (n, k, q) = (obj.n, obj.k, obj.q);
    let refined = refine_factors(&obj, cfg, &gr.vector, &br.vector)?;
    diag.refine_objective = [refined.initial_objective, refined.final_objective];
    diag.refine_iterations = refined.iterations;
    let (gvec, bvec) = (refined.g, refined.b);
    let vander = vandermonde(&spectrum.frequencies, q);
    let mut gs = Vec::new();
    let mut bs = Vec::new();
    for c in 0..k {
        let g = gvec.rows(c * n, n).into_owned();
        let b = bvec.rows(c * q, q).into_owned();
        let h = &vander * &b;
        if g.norm() > 0.0 && h.norm() > 0.0 {
            gs.push(g);
            bs.push(b);
        } else {
            diag.dropped_components.push(c);
        }
    }
    if gs.is_empty() {
        return Err(Error::ZeroModel);
    }
    let model = LsgpModel::from_polynomial(graph.clone(), DMatrix::from_columns(&gs), DMatrix::from_columns(&bs))?;
    Ok(LearnOutput { model, state, diagnostics: diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_knn_graph;

    fn graph(n: usize, seed: u64) -> Arc<Graph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        Arc::new(build_knn_graph(&pts, 3.min(n - 1), None).unwrap())
    }

    fn random_gb(n: usize, k: usize, q: usize, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
        let g = DVector::from_fn(n * k, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(q * k, |_, _| rng.random_range(-1.0..1.0));
        (g, b)
    }

    fn model_from(graph: &Arc<Graph>, g: &DVector<f64>, b: &DVector<f64>, k: usize, q: usize) -> DMatrix<f64> {
        let n = graph.n_vertices();
        let gm = DMatrix::from_column_slice(n, k, g.as_slice());
        let bm = DMatrix::from_column_slice(q, k, b.as_slice());
        let s = graph.spectrum();
        let h = vandermonde(&s.frequencies, q) * bm;
        let u = &s.eigenvectors;
        let hmat = u.component_mul(&(gm * h.transpose())) * u.transpose();
        &hmat * hmat.transpose()
    }

    #[test]
    fn f1_matches_direct_fit() {
        let gr = graph(8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (g, b) = random_gb(8, 2, 3, &mut rng);
        let c_hat = DMatrix::from_fn(8, 8, |i, j| ((i + j) as f64).cos());
        let c_hat = linalg::symmetrize(&c_hat);
        let direct = (&c_hat - model_from(&gr, &g, &b, 2, 3)).norm_squared();
        let f1 = objective_f1(&(&g * g.transpose()), &(&b * b.transpose()), &c_hat, gr.spectrum()).unwrap();
        assert!((f1 - direct).abs() < 1e-8 * (1.0 + c_hat.norm_squared()));
    }

    #[test]
    fn f1_zero_for_exact_model_and_norm_for_zero_b() {
        let gr = graph(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (g, b) = random_gb(6, 1, 2, &mut rng);
        let c = model_from(&gr, &g, &b, 1, 2);
        let gamma = &g * g.transpose();
        let f1 = objective_f1(&gamma, &(&b * b.transpose()), &c, gr.spectrum()).unwrap();
        assert!(f1 < 1e-20 * (1.0 + c.norm_squared()) + 1e-24);
        let zero = objective_f1(&gamma, &DMatrix::zeros(2, 2), &c, gr.spectrum()).unwrap();
        assert!((zero - c.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn f2_forms() {
        let gr = graph(7, 5);
        let s = gr.spectrum();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = DVector::from_fn(14, |_, _| rng.random_range(-1.0..1.0));
        let gm = DMatrix::from_column_slice(7, 2, g.as_slice());
        let direct = (gm.transpose() * &s.laplacian * &gm).trace();
        let f2 = objective_f2(&(&g * g.transpose()), s).unwrap();
        assert!((f2 - direct).abs() < 1e-10);
        let eye = objective_f2(&DMatrix::identity(21, 21), s).unwrap();
        assert!((eye - 3.0 * s.laplacian.trace()).abs() < 1e-10);
        let d = gr.degree().map(f64::sqrt);
        let null = DVector::from_iterator(14, d.iter().chain(d.iter()).copied());
        assert!(objective_f2(&(&null * null.transpose()), s).unwrap().abs() < 1e-10);
    }

    fn fd_check(obj: &Objective, gamma: &DMatrix<f64>, bmat: &DMatrix<f64>) {
        let h = 1e-6;
        let gg = obj.grad_f1_gamma(gamma, bmat);
        for &(i, j) in &[(0, 0), (1, 3), (4, 2)] {
            let mut p = gamma.clone();
            let mut m = gamma.clone();
            p[(i, j)] += h;
            m[(i, j)] -= h;
            let fd = (obj.f1(&p, bmat) - obj.f1(&m, bmat)) / (2.0 * h);
            assert!((fd - gg[(i, j)]).abs() <= 1e-5 * gg[(i, j)].abs().max(1.0));
        }
        let gb = obj.grad_f1_b(gamma, bmat);
        for &(i, j) in &[(0, 0), (0, 1), (2, 1)] {
            let mut p = bmat.clone();
            let mut m = bmat.clone();
            p[(i, j)] += h;
            m[(i, j)] -= h;
            let fd = (obj.f1(gamma, &p) - obj.f1(gamma, &m)) / (2.0 * h);
            assert!((fd - gb[(i, j)]).abs() <= 1e-5 * gb[(i, j)].abs().max(1.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gr = graph(5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = linalg::symmetrize(&DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0)));
        let obj = Objective::new(&c, gr.spectrum(), 2, 2).unwrap();
        let a = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        fd_check(&obj, &(&a * a.transpose()), &(&b * b.transpose()));
    }

    #[test]
    fn b_step_with_zero_target_goes_to_zero() {
        let gr = graph(6, 9);
        let cfg = LearnerConfig { k: 1, q: 2, mu2: 1.0, inner_iters: 2000, ..Default::default() };
        let obj = Objective::new(&DMatrix::zeros(6, 6), gr.spectrum(), 1, 2).unwrap();
        let state = LearnerState::new(DMatrix::identity(6, 6), DMatrix::identity(2, 2));
        let out = solve_b_step(&state, &obj, &cfg).unwrap();
        assert!(out.iterate.norm() < 1e-6);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gamma_step_with_zero_b_goes_to_zero() {
        let gr = graph(6, 10);
        let cfg = LearnerConfig { k: 1, q: 2, mu3: 1.0, inner_iters: 2000, ..Default::default() };
        let c = DMatrix::identity(6, 6);
        let obj = Objective::new(&c, gr.spectrum(), 1, 2).unwrap();
        let state = LearnerState::new(DMatrix::identity(6, 6), DMatrix::zeros(2, 2));
        let out = solve_gamma_step(&state, &obj, &cfg).unwrap();
        assert!(out.iterate.norm() < 1e-6);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rank1_cases() {
        let v = DVector::from_vec(vec![0.5, -2.0, 1.0]);
        let r = rank1_extract(&(&v * v.transpose()));
        assert!((r.vector + &v).norm() < 1e-10);
        assert!(r.residual < 1e-12);
        let a = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let m = &a * a.transpose() * 4.0 + &b * b.transpose();
        let r = rank1_extract(&m);
        assert!((r.vector.norm() - 2.0).abs() < 1e-12);
        assert!((r.residual - 0.25).abs() < 1e-12);
        let z = rank1_extract(&DMatrix::zeros(3, 3));
        assert!(z.degenerate);
        assert_eq!(z.vector, DVector::zeros(3));
    }

    #[test]
    fn heavy_regularization_yields_zero_model_error() {
        let gr = graph(6, 11);
        let cfg = LearnerConfig { k: 1, q: 2, mu2: 1e6, mu3: 1e6, ..Default::default() };
        let c = DMatrix::identity(6, 6) * 1e-3;
        assert!(matches!(learn_lsgp(&gr, &c, &cfg), Err(Error::ZeroModel)));
    }

    #[test]
    fn planted_single_component_recovery() {
        let spec = crate::eval::PlantedSpec { nodes: 12, knn: 4, components: 1, order: 2, seed: 3 };
        let (gr, model) = crate::eval::planted_lsgp(&spec).unwrap();
        let c = model.model_covariance();
        let cfg = LearnerConfig { k: 1, q: 2, ..Default::default() };
        let out = learn_lsgp(&gr, &c, &cfg).unwrap();
        let cd = crate::eval::covariance_discrepancy(&c, &out.model.model_covariance()).unwrap();
        assert!(cd < 0.05, "cd = {cd}");
    }

    #[test]
    fn single_component_on_regular_graph_is_a_filter() {
        let n = 8;
        let edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        let gr = Arc::new(Graph::from_edges(n, &edges).unwrap());
        let s = gr.spectrum();
        let h = vandermonde(&s.frequencies, 2) * DVector::from_vec(vec![1.0, -0.4]);
        let c = s.filter_matrix(&h.map(|v| v * v));
        let cfg = LearnerConfig { k: 1, q: 2, mu1: 1e-3, ..Default::default() };
        let out = learn_lsgp(&gr, &c, &cfg).unwrap();
        let learned = out.model.model_covariance();
        let comm = &learned * &s.laplacian - &s.laplacian * &learned;
        assert!(comm.norm() < 1e-6 * learned.norm(), "commutator {}", comm.norm());
    }

    #[test]
    fn b_step_beats_rank1_grid() {
        let gr = graph(5, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let c = &a * a.transpose();
        let obj = Objective::new(&c, gr.spectrum(), 1, 2).unwrap();
        let g = DVector::from_fn(5, |_, _| rng.random_range(0.5..1.5));
        let gamma = &g * g.transpose();
        let cfg = LearnerConfig { k: 1, q: 2, mu2: 1e-2, inner_iters: 20000, inner_tol: 1e-14, ..Default::default() };
        let state = LearnerState::new(gamma.clone(), DMatrix::identity(2, 2));
        let out = solve_b_step(&state, &obj, &cfg).unwrap();
        let value = |b: &DMatrix<f64>| obj.f1(&gamma, b) + cfg.mu2 * b.trace();
        let mut best = f64::INFINITY;
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let b = DVector::from_vec(vec![-4.0 + 8.0 * i as f64 / steps as f64, -4.0 + 8.0 * j as f64 / steps as f64]);
                best = best.min(value(&(&b * b.transpose())));
            }
        }
        let got = value(&out.iterate);
        assert!(got <= best * (1.0 + 1e-4), "{got} vs grid {best}");
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gamma_step_matches_rank1_grid() {
        let gr = graph(4, 14);
        let s = gr.spectrum();
        let g0 = DVector::from_vec(vec![1.0, 0.6, 0.8, 1.2]);
        let b0 = DVector::from_vec(vec![1.0, -0.3]);
        let model = LsgpModel::from_polynomial(gr.clone(), DMatrix::from_column_slice(4, 1, g0.as_slice()), DMatrix::from_column_slice(2, 1, b0.as_slice())).unwrap();
        let c = model.model_covariance();
        let obj = Objective::new(&c, s, 1, 2).unwrap();
        let bmat = &b0 * b0.transpose();
        let cfg = LearnerConfig { k: 1, q: 2, mu1: 1e-2, mu3: 1e-2, inner_iters: 20000, inner_tol: 1e-14, ..Default::default() };
        let state = LearnerState::new(DMatrix::identity(4, 4), bmat.clone());
        let out = solve_gamma_step(&state, &obj, &cfg).unwrap();
        let value = |gm: &DMatrix<f64>| obj.f1(gm, &bmat) + cfg.mu1 * obj.f2(gm) + cfg.mu3 * gm.trace();
        let mut best = f64::INFINITY;
        let steps = 20;
        let grid = |i: usize| 2.0 * i as f64 / steps as f64;
        for a in 0..=steps {
            for b in 0..=steps {
                for c in 0..=steps {
                    for d in 0..=steps {
                        let g = DVector::from_vec(vec![grid(a), grid(b), grid(c), grid(d)]);
                        best = best.min(value(&(&g * g.transpose())));
                    }
                }
            }
        }
        let got = value(&out.iterate);
        assert!(got <= best + 1e-3 * best.max(1.0), "{got} vs grid {best}");
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
