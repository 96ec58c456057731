//! Stackelberg gradient dynamics for two-player zero-sum games.
//!
//! Player 1 (the leader) ascends `J`, player 2 (the follower) descends it.
//! The leader follows the regularized total derivative
//!
//! ```text
//! ∇^λ J = ∇₁J − ∇₁₂J · (∇²₂J + λI)⁻¹ ∇₂J
//! ```
//!
//! with the inverse-Hessian-vector product obtained by conjugate gradient
//! on Hessian-vector products, so no Hessian is ever formed.

use nalgebra::{DMatrix, SymmetricEigen};

/// A scalar objective `J(θ1, θ2)` with the first- and second-order
/// products the Stackelberg update needs.
pub trait DifferentiableGame {
    fn leader_dim(&self) -> usize;
    fn follower_dim(&self) -> usize;
    fn value(&self, x1: &[f64], x2: &[f64]) -> f64;
    /// `∇_{θ1} J`
    fn grad1(&self, x1: &[f64], x2: &[f64]) -> Vec<f64>;
    /// `∇_{θ2} J`
    fn grad2(&self, x1: &[f64], x2: &[f64]) -> Vec<f64>;
    /// `∇²_{θ2} J · v`, `v ∈ R^{d2}`.
    fn hvp2(&self, x1: &[f64], x2: &[f64], v: &[f64]) -> Vec<f64>;
    /// `∇_{θ1θ2} J · v`, `v ∈ R^{d2}`, result in `R^{d1}`.
    fn mixed12(&self, x1: &[f64], x2: &[f64], v: &[f64]) -> Vec<f64>;
}

impl<G: DifferentiableGame + ?Sized> DifferentiableGame for &G {
    fn leader_dim(&self) -> usize {
        (**self).leader_dim()
    }
    fn follower_dim(&self) -> usize {
        (**self).follower_dim()
    }
    fn value(&self, x1: &[f64], x2: &[f64]) -> f64 {
        (**self).value(x1, x2)
    }
    fn grad1(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        (**self).grad1(x1, x2)
    }
    fn grad2(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        (**self).grad2(x1, x2)
    }
    fn hvp2(&self, x1: &[f64], x2: &[f64], v: &[f64]) -> Vec<f64> {
        (**self).hvp2(x1, x2, v)
    }
    fn mixed12(&self, x1: &[f64], x2: &[f64], v: &[f64]) -> Vec<f64> {
        (**self).mixed12(x1, x2, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub iters: usize,
    pub tol: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self { iters: 5, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackelbergConfig {
    pub leader_lr: f64,
    pub follower_lr: f64,
    pub regularization: f64,
    pub cg: CgSettings,
}

impl StackelbergConfig {
    pub fn new(leader_lr: f64, follower_lr: f64, regularization: f64) -> Self {
        Self {
            leader_lr,
            follower_lr,
            regularization,
            cg: CgSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StackelbergError {
    #[error("conjugate gradient produced a non-finite value at iteration {iteration} ({detail})")]
    CgNonFinite { iteration: usize, detail: String },
    #[error("conjugate gradient diverged: residual {residual:e} exceeds initial {initial:e}")]
    Divergence { residual: f64, initial: f64 },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("regularization must be non-negative, got {0}")]
    NegativeRegularization(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    /// Norm of the recursively updated residual `b − A x`.
    pub residual: f64,
    pub iterations: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unpreconditioned conjugate gradient from `x = 0`.
///
/// Stops once the residual norm is at most `tol` or after `iters`
/// iterations. The operator is assumed symmetric positive definite; a zero
/// or non-finite curvature `pᵀAp` aborts.
pub fn conjugate_gradient<F>(mut matvec: F, b: &[f64], iters: usize, tol: f64) -> Result<CgSolution, StackelbergError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    if !rs.is_finite() {
        return Err(StackelbergError::CgNonFinite {
            iteration: 0,
            detail: "right-hand side".into(),
        });
    }
    if rs.sqrt() <= tol {
        return Ok(CgSolution { x, residual: rs.sqrt(), iterations: 0 });
    }
    for k in 0..iters {
        let ap = matvec(&p);
        if ap.len() != n {
            return Err(StackelbergError::Dimension {
                what: "operator output",
                expected: n,
                got: ap.len(),
            });
        }
        let curvature = dot(&p, &ap);
        if !curvature.is_finite() || curvature == 0.0 {
            return Err(StackelbergError::CgNonFinite {
                iteration: k,
                detail: format!("curvature pᵀAp = {curvature:e}"),
            });
        }
        let alpha = rs / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() || !alpha.is_finite() {
            return Err(StackelbergError::CgNonFinite {
                iteration: k,
                detail: format!("step {alpha:e}, residual² {rs_new:e}"),
            });
        }
        if rs_new.sqrt() <= tol {
            return Ok(CgSolution { x, residual: rs_new.sqrt(), iterations: k + 1 });
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(CgSolution { x, residual: rs.sqrt(), iterations: iters })
}

/// Leader direction together with the implicit-map solve that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalDerivative {
    pub direction: Vec<f64>,
    /// Solution of `(∇²₂J + λI) w = ∇₂J`.
    pub solve: CgSolution,
    pub partial: Vec<f64>,
    pub follower_grad: Vec<f64>,
}

fn check_point<G: DifferentiableGame + ?Sized>(game: &G, x1: &[f64], x2: &[f64]) -> Result<(), StackelbergError> {
    if x1.len() != game.leader_dim() {
        return Err(StackelbergError::Dimension {
            what: "leader parameters",
            expected: game.leader_dim(),
            got: x1.len(),
        });
    }
    if x2.len() != game.follower_dim() {
        return Err(StackelbergError::Dimension {
            what: "follower parameters",
            expected: game.follower_dim(),
            got: x2.len(),
        });
    }
    if !x1.iter().chain(x2).all(|v| v.is_finite()) {
        return Err(StackelbergError::NonFinite("parameters"));
    }
    Ok(())
}

/// Regularized total derivative with diagnostics.
pub fn total_derivative_report<G: DifferentiableGame + ?Sized>(
    game: &G,
    x1: &[f64],
    x2: &[f64],
    regularization: f64,
    cg: CgSettings,
) -> Result<TotalDerivative, StackelbergError> {
    check_point(game, x1, x2)?;
    if !(regularization >= 0.0) {
        return Err(StackelbergError::NegativeRegularization(regularization));
    }
    let partial = game.grad1(x1, x2);
    let follower_grad = game.grad2(x1, x2);
    let solve = conjugate_gradient(
        |v| {
            let mut hv = game.hvp2(x1, x2, v);
            for (h, vi) in hv.iter_mut().zip(v) {
                *h += regularization * vi;
            }
            hv
        },
        &follower_grad,
        cg.iters,
        cg.tol,
    )?;
    let initial = norm(&follower_grad);
    if solve.residual > initial {
        return Err(StackelbergError::Divergence {
            residual: solve.residual,
            initial,
        });
    }
    let direction = if solve.x.iter().all(|&v| v == 0.0) {
        partial.clone()
    } else {
        let correction = game.mixed12(x1, x2, &solve.x);
        partial.iter().zip(&correction).map(|(g, c)| g - c).collect()
    };
    if !direction.iter().all(|v| v.is_finite()) {
        return Err(StackelbergError::NonFinite("total derivative"));
    }
    Ok(TotalDerivative {
        direction,
        solve,
        partial,
        follower_grad,
    })
}

/// `∇_{θ1}J − ∇_{θ1θ2}J · (∇²_{θ2}J + λI)⁻¹ ∇_{θ2}J`.
pub fn total_derivative<G: DifferentiableGame + ?Sized>(
    game: &G,
    x1: &[f64],
    x2: &[f64],
    regularization: f64,
    cg: CgSettings,
) -> Result<Vec<f64>, StackelbergError> {
    total_derivative_report(game, x1, x2, regularization, cg).map(|t| t.direction)
}

/// One leader-ascent / follower-descent step, both evaluated at the
/// pre-update point.
pub fn stackelberg_step<G: DifferentiableGame + ?Sized>(
    game: &G,
    x1: &[f64],
    x2: &[f64],
    config: &StackelbergConfig,
) -> Result<(Vec<f64>, Vec<f64>), StackelbergError> {
    let t = total_derivative_report(game, x1, x2, config.regularization, config.cg)?;
    let next1 = x1
        .iter()
        .zip(&t.direction)
        .map(|(x, g)| x + config.leader_lr * g)
        .collect();
    let next2 = x2
        .iter()
        .zip(&t.follower_grad)
        .map(|(x, g)| x - config.follower_lr * g)
        .collect();
    Ok((next1, next2))
}

/// Simultaneous gradient ascent (player 1) and descent (player 2).
pub fn simultaneous_step<G: DifferentiableGame + ?Sized>(
    game: &G,
    x1: &[f64],
    x2: &[f64],
    leader_lr: f64,
    follower_lr: f64,
) -> Result<(Vec<f64>, Vec<f64>), StackelbergError> {
    check_point(game, x1, x2)?;
    let g1 = game.grad1(x1, x2);
    let g2 = game.grad2(x1, x2);
    let next1: Vec<f64> = x1.iter().zip(&g1).map(|(x, g)| x + leader_lr * g).collect();
    let next2: Vec<f64> = x2.iter().zip(&g2).map(|(x, g)| x - follower_lr * g).collect();
    if !next1.iter().chain(&next2).all(|v| v.is_finite()) {
        return Err(StackelbergError::NonFinite("simultaneous update"));
    }
    Ok((next1, next2))
}

/// Which update rule [`iterate`] applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    Stackelberg(StackelbergConfig),
    Simultaneous { leader_lr: f64, follower_lr: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateOutcome {
    pub leader: Vec<f64>,
    pub follower: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

/// Runs the dynamics until the joint step norm drops to `step_tol` or
/// `max_steps` is reached.
pub fn iterate<G: DifferentiableGame + ?Sized>(
    game: &G,
    x1: &[f64],
    x2: &[f64],
    dynamics: Dynamics,
    max_steps: usize,
    step_tol: f64,
) -> Result<IterateOutcome, StackelbergError> {
    let (mut a, mut b) = (x1.to_vec(), x2.to_vec());
    for k in 0..max_steps {
        let (na, nb) = match dynamics {
            Dynamics::Stackelberg(cfg) => stackelberg_step(game, &a, &b, &cfg)?,
            Dynamics::Simultaneous { leader_lr, follower_lr } => {
                simultaneous_step(game, &a, &b, leader_lr, follower_lr)?
            }
        };
        let delta: f64 = a
            .iter()
            .zip(&na)
            .chain(b.iter().zip(&nb))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        a = na;
        b = nb;
        if delta <= step_tol {
            return Ok(IterateOutcome { leader: a, follower: b, steps: k + 1, converged: true });
        }
    }
    Ok(IterateOutcome { leader: a, follower: b, steps: max_steps, converged: false })
}

/// Outcome of checking the differential Stackelberg equilibrium conditions.
///
/// Curvature convention: the leader maximizes `J`, so its curvature check
/// requires the symmetrized Jacobian of the total derivative to be negative
/// definite. Reading the leader as minimizing `J1 = J` instead corresponds to
/// [`DseReport::leader_curvature_ok_as_minimizer`]. The follower minimizes
/// `J`, so `∇²_{θ2}J ≻ 0` is required.
#[derive(Debug, Clone, PartialEq)]
pub struct DseReport {
    pub leader_total_grad_norm: f64,
    pub follower_grad_norm: f64,
    pub leader_curvature_ok: bool,
    pub follower_curvature_ok: bool,
    pub is_dse: bool,
    /// Eigenvalues (ascending) of the symmetrized finite-difference Jacobian
    /// of the total derivative in `θ1`; empty when the total derivative is
    /// undefined.
    pub leader_curvature_eigenvalues: Vec<f64>,
    /// Eigenvalues (ascending) of the probed follower Hessian.
    pub follower_hessian_eigenvalues: Vec<f64>,
}

impl DseReport {
    pub fn leader_curvature_ok_as_minimizer(&self) -> bool {
        !self.leader_curvature_eigenvalues.is_empty()
            && self.leader_curvature_eigenvalues.iter().all(|&e| e > 0.0)
    }
}

fn sym_eigenvalues(mut m: DMatrix<f64>) -> Vec<f64> {
    let t = m.transpose();
    m = (m + t) * 0.5;
    let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

/// Checks first-order stationarity (total derivative and follower gradient
/// within `tol`) and the curvature signs at `(x1, x2)`.
pub fn check_dse<G: DifferentiableGame + ?Sized>(game: &G, x1: &[f64], x2: &[f64], tol: f64, fd_step: f64) -> DseReport {
    let (d1, d2) = (game.leader_dim(), game.follower_dim());
    let cg = CgSettings {
        iters: 4 * d2 + 10,
        tol: 1e-14,
    };

    let follower_grad_norm = norm(&game.grad2(x1, x2));
    let mut h = DMatrix::zeros(d2, d2);
    let mut e = vec![0.0; d2];
    for j in 0..d2 {
        e[j] = 1.0;
        let col = game.hvp2(x1, x2, &e);
        e[j] = 0.0;
        for i in 0..d2 {
            h[(i, j)] = col[i];
        }
    }
    let follower_hessian_eigenvalues = sym_eigenvalues(h);
    let follower_curvature_ok = follower_hessian_eigenvalues.first().is_some_and(|&m| m > 0.0);

    let (leader_total_grad_norm, leader_curvature_eigenvalues) = match total_derivative(game, x1, x2, 0.0, cg) {
        Ok(t) => {
            let mut jac = DMatrix::zeros(d1, d1);
            let mut ok = true;
            let mut probe = x1.to_vec();
            for i in 0..d1 {
                probe[i] = x1[i] + fd_step;
                let plus = total_derivative(game, &probe, x2, 0.0, cg);
                probe[i] = x1[i] - fd_step;
                let minus = total_derivative(game, &probe, x2, 0.0, cg);
                probe[i] = x1[i];
                match (plus, minus) {
                    (Ok(p), Ok(m)) => {
                        for r in 0..d1 {
                            jac[(r, i)] = (p[r] - m[r]) / (2.0 * fd_step);
                        }
                    }
                    _ => ok = false,
                }
            }
            let eig = if ok { sym_eigenvalues(jac) } else { Vec::new() };
            (norm(&t), eig)
        }
        Err(_) => (f64::INFINITY, Vec::new()),
    };
    let leader_curvature_ok =
        !leader_curvature_eigenvalues.is_empty() && leader_curvature_eigenvalues.iter().all(|&e| e < 0.0);
    let is_dse = leader_total_grad_norm <= tol
        && follower_grad_norm <= tol
        && leader_curvature_ok
        && follower_curvature_ok;
    DseReport {
        leader_total_grad_norm,
        follower_grad_norm,
        leader_curvature_ok,
        follower_curvature_ok,
        is_dse,
        leader_curvature_eigenvalues,
        follower_hessian_eigenvalues,
    }
}

/// Angle in radians between two vectors.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b) / (norm(a) * norm(b));
    c.clamp(-1.0, 1.0).acos()
}
