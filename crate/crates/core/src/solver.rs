//! Geometric modified Polak-Ribière-Polyak conjugate gradient with a
//! backtracking line search and the optional forward "additional step".

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kernel::{self, KernelError, Matrix};
use crate::manifold::{Point, ProductManifold, RetractionMode, Tangent, TransportMode};
use crate::model::{recover_stochastic, residual, EvalCache, ModelError, ModelKind, Problem};
use crate::spectra::{sample_stochastic, Mask, Spectrum};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("direction is not a descent direction (<g, d> = {0:e})")]
    NotDescent(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStepMode {
    /// `|⟨d, g⟩ / ⟨d, H d⟩|` with a finite-difference Hessian.
    #[default]
    NewtonApprox,
    /// `|⟨d, g⟩| / ‖Df(x)[d]‖²`.
    GaussNewton,
}

/// Which norm the fallback floors of the initial step are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloorNorm {
    #[default]
    Metric,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaRule {
    #[default]
    ModifiedPrp,
    /// Fletcher-Reeves without the θ correction; kept for comparison tests.
    FletcherReeves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ResidualMet,
    GradVanished,
    MaxIter,
    LineSearchStall,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::ResidualMet => "residual_met",
            Status::GradVanished => "grad_vanished",
            Status::MaxIter => "max_iter",
            Status::LineSearchStall => "line_search_stall",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub delta: f64,
    pub tau: f64,
    pub alpha_star: f64,
    pub hess_dir_floor: f64,
    pub curvature_floor: f64,
    pub floor_norm: FloorNorm,
    pub residual_tol: f64,
    /// Whether `residual < residual_tol` terminates the run.
    pub residual_stop: bool,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_ls_updates: usize,
    pub max_growth: usize,
    pub retraction: RetractionMode,
    pub transport: TransportMode,
    pub init_step: InitStepMode,
    pub additional_step: bool,
    pub model: ModelKind,
    /// Run the Model II path but keep `(a, b)` at their start values.
    pub freeze_ab: bool,
    pub beta_rule: BetaRule,
    pub check_descent: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_model(ModelKind::Isospectral)
    }
}

impl SolverConfig {
    pub fn for_model(model: ModelKind) -> Self {
        let (alpha_star, curvature_floor) = match model {
            ModelKind::Isospectral => (1.4, 1e-12),
            ModelKind::Sl2Extended => (1.6, 1e-10),
        };
        Self {
            delta: 1e-4,
            tau: 0.5,
            alpha_star,
            hess_dir_floor: 1e-5,
            curvature_floor,
            floor_norm: FloorNorm::Metric,
            residual_tol: 1e-12,
            residual_stop: true,
            grad_tol: 1e-14,
            max_iter: 10_000,
            max_ls_updates: 60,
            max_growth: 60,
            retraction: RetractionMode::QrNormalize,
            transport: TransportMode::Projection,
            init_step: InitStepMode::NewtonApprox,
            additional_step: true,
            model,
            freeze_ab: false,
            beta_rule: BetaRule::ModifiedPrp,
            check_descent: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.into()));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.alpha_star > 0.0) {
            return bad("alpha_star must be positive");
        }
        if self.max_ls_updates == 0 {
            return bad("max_ls_updates must be at least 1");
        }
        Ok(())
    }
}

/// One row of the iteration trace. Row 0 describes the start point; row `k`
/// the iterate after the `k`-th accepted step, with the step data that led there.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub value: f64,
    pub residual: f64,
    pub grad_norm: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub ls_updates: usize,
    pub additional_used: bool,
    /// `‖d‖_x` of the direction that produced this iterate.
    pub dir_norm: f64,
    /// `α² ‖d‖²_x` of that step.
    pub step_energy: f64,
    /// Descent-identity defect of the next direction at this iterate.
    pub descent_check: f64,
}

/// Running maxima of the quantities that stay bounded on a sublevel set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BoundDiagnostics {
    pub max_a: f64,
    pub max_abs_b: f64,
    pub max_inv_a: f64,
    pub max_v_norm: f64,
}

impl BoundDiagnostics {
    fn observe(&mut self, x: &Point) {
        for &a in x.a.iter() {
            self.max_a = self.max_a.max(a);
            self.max_inv_a = self.max_inv_a.max(1.0 / a);
        }
        for &b in x.b.iter() {
            self.max_abs_b = self.max_abs_b.max(b.abs());
        }
        self.max_v_norm = self.max_v_norm.max(x.v.norm());
    }

    pub fn is_finite(&self) -> bool {
        [self.max_a, self.max_abs_b, self.max_inv_a, self.max_v_norm].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub status: Status,
    pub bounds: BoundDiagnostics,
}

pub const TRACE_HEADER: &str = "k,F,residual,grad_norm,alpha,beta,theta,ls_updates,additional_used";

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace holds the start point")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                r.k,
                r.value,
                r.residual,
                r.grad_norm,
                r.alpha,
                r.beta,
                r.theta,
                r.ls_updates,
                u8::from(r.additional_used)
            );
        }
        out
    }
}

/// Terminal summary of one solve.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub status: Status,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub final_residual: f64,
    pub eig_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub point: Point,
    pub trace: IterationTrace,
    /// `S ∘ S` at the final point.
    pub matrix: Matrix,
    pub wall_time_s: f64,
}

impl SolveOutcome {
    pub fn status(&self) -> Status {
        self.trace.status
    }

    pub fn final_residual(&self) -> f64 {
        self.trace.last().residual
    }

    pub fn summary(&self, eig_distance: Option<f64>) -> Summary {
        Summary {
            status: self.trace.status,
            iterations: self.trace.iterations(),
            wall_time_s: self.wall_time_s,
            final_residual: self.final_residual(),
            eig_distance,
        }
    }
}

/// Start point: `S` is the entrywise root of a random stochastic matrix,
/// `(Q, V̂)` its real Schur pair, `V` the masked `V̂`, `a = 1`, `b = 0`.
pub fn init_point<R: Rng + ?Sized>(spectrum: &Spectrum, rng: &mut R) -> Result<Point> {
    let n = spectrum.n();
    let t = spectrum.t();
    let a = sample_stochastic(n, rng);
    let s = a.map(f64::sqrt);
    let schur = kernel::real_schur(&s.component_mul(&s))?;
    let mask = Mask::for_spectrum(spectrum);
    Ok(Point { s, q: schur.q, v: mask.apply(&schur.t), a: DVector::from_element(t, 1.0), b: DVector::zeros(t) })
}

/// `|⟨g, d⟩ + ‖g‖²| / (1 + ‖g‖²)`, zero when `d` satisfies the descent identity.
pub fn descent_identity_check(manifold: &ProductManifold, x: &Point, g: &Tangent, d: &Tangent) -> f64 {
    let gg = manifold.inner(x, g, g);
    (manifold.inner(x, g, d) + gg).abs() / (1.0 + gg)
}

/// Trial step for the line search.
pub fn initial_stepsize(problem: &Problem, x: &Point, d: &Tangent, g: &Tangent, config: &SolverConfig) -> Result<f64> {
    let m = problem.manifold();
    let dg = m.inner(x, d, g);
    if !(dg < 0.0) {
        return Err(SolverError::NotDescent(dg));
    }
    let dnorm = match config.floor_norm {
        FloorNorm::Metric => m.norm(x, d),
        FloorNorm::Euclidean => d.ambient_norm(),
    };
    if dnorm < config.hess_dir_floor {
        return Ok(config.alpha_star);
    }
    match config.init_step {
        InitStepMode::NewtonApprox => {
            let h = Problem::hessian_step(x);
            let hd = problem.hess_vec_approx_with_grad(x, g, d, h, config.retraction, config.transport)?;
            let curvature = match config.floor_norm {
                FloorNorm::Metric => m.inner(x, d, &hd),
                FloorNorm::Euclidean => d.ambient_dot(&hd),
            };
            if !(curvature >= config.curvature_floor) {
                return Ok(config.alpha_star);
            }
            Ok((dg / curvature).abs())
        }
        InitStepMode::GaussNewton => {
            let denom = problem.gauss_newton_denominator(x, d, config.retraction)?;
            if !(denom > 0.0) {
                return Ok(config.alpha_star);
            }
            Ok(dg.abs() / denom)
        }
    }
}

/// Result of one line search.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub updates: usize,
    pub additional_used: bool,
    /// Accepted point with its evaluation; `None` on stall.
    pub accepted: Option<(Point, f64, EvalCache)>,
}

/// Backtracks from `alpha0` until `F(R(αd)) − F(x) < −δ α² ‖d‖²`; when the
/// first trial already passes and the additional step is enabled, keeps
/// growing by `1/τ` while the condition holds.
pub fn line_search(
    problem: &Problem,
    x: &Point,
    fx: f64,
    d: &Tangent,
    alpha0: f64,
    config: &SolverConfig,
) -> LineSearchOutcome {
    let m = problem.manifold();
    let dd = m.inner(x, d, d);
    let trial = |alpha: f64| -> Option<(Point, f64, EvalCache)> {
        let z = m.retract(x, &d.scaled(alpha), config.retraction).ok()?;
        let e = problem.eval(&z);
        (e.value.is_finite() && e.value - fx < -config.delta * alpha * alpha * dd).then_some((z, e.value, e.cache))
    };

    let mut alpha = alpha0;
    let mut updates = 0;
    let mut accepted = trial(alpha);
    while accepted.is_none() {
        if updates >= config.max_ls_updates {
            return LineSearchOutcome { alpha, updates, additional_used: false, accepted: None };
        }
        alpha *= config.tau;
        updates += 1;
        accepted = trial(alpha);
    }

    let mut additional_used = false;
    if updates == 0 && config.additional_step {
        additional_used = true;
        for _ in 0..config.max_growth {
            let grown = alpha / config.tau;
            updates += 1;
            match trial(grown) {
                Some(better) => {
                    alpha = grown;
                    accepted = Some(better);
                }
                None => break,
            }
        }
    }
    LineSearchOutcome { alpha, updates, additional_used, accepted }
}

/// Runs GMPRP from `x0`.
pub fn solve(problem: &Problem, x0: Point, config: &SolverConfig) -> Result<SolveOutcome> {
    solve_observed(problem, x0, config, |_, _, _| {})
}

/// As [`solve`], calling `observer(k, x_k, F(x_k))` on the start point and every accepted iterate.
pub fn solve_observed<O>(problem: &Problem, x0: Point, config: &SolverConfig, mut observer: O) -> Result<SolveOutcome>
where
    O: FnMut(usize, &Point, f64),
{
    config.validate()?;
    let start = Instant::now();
    let m = problem.manifold();
    let freeze = config.freeze_ab || problem.kind() == ModelKind::Isospectral;

    let gradient = |x: &Point, cache: &EvalCache| {
        let mut g = problem.gradient(x, cache);
        if freeze {
            g.a.fill(0.0);
            g.b.fill(0.0);
        }
        g
    };

    let mut x = x0;
    let e = problem.eval(&x);
    let mut fx = e.value;
    let mut g = gradient(&x, &e.cache);
    let mut gg = m.inner(&x, &g, &g);
    let mut d = g.scaled(-1.0);

    let mut bounds = BoundDiagnostics::default();
    bounds.observe(&x);
    observer(0, &x, fx);
    let mut records = vec![IterationRecord {
        k: 0,
        value: fx,
        residual: residual(fx),
        grad_norm: gg.sqrt(),
        alpha: 0.0,
        beta: 0.0,
        theta: 0.0,
        ls_updates: 0,
        additional_used: false,
        dir_norm: 0.0,
        step_energy: 0.0,
        descent_check: descent_identity_check(m, &x, &g, &d),
    }];

    let status = loop {
        let k = records.len() - 1;
        if config.residual_stop && residual(fx) < config.residual_tol {
            break Status::ResidualMet;
        }
        if gg.sqrt() < config.grad_tol {
            break Status::GradVanished;
        }
        if k >= config.max_iter {
            break Status::MaxIter;
        }

        // A non-descent direction cannot occur for the modified PRP update
        // beyond rounding; it leaves the search without a usable step.
        let alpha0 = match initial_stepsize(problem, &x, &d, &g, config) {
            Ok(a) => a,
            Err(SolverError::NotDescent(_)) => break Status::LineSearchStall,
            Err(SolverError::Model(ModelError::ZeroDirection)) => break Status::GradVanished,
            Err(SolverError::Model(ModelError::Manifold(_))) => config.alpha_star,
            Err(other) => return Err(other),
        };
        let ls = line_search(problem, &x, fx, &d, alpha0, config);
        let Some((x_new, f_new, cache_new)) = ls.accepted else {
            break Status::LineSearchStall;
        };

        let dnorm2 = m.inner(&x, &d, &d);
        let step = d.scaled(ls.alpha);
        let g_new = gradient(&x_new, &cache_new);
        let tg = m.transport_to(&x, &x_new, &step, &g, config.retraction, config.transport);
        let td = m.transport_to(&x, &x_new, &step, &d, config.retraction, config.transport);
        let y = g_new.sub(&tg);
        let gg_new = m.inner(&x_new, &g_new, &g_new);
        let (beta, theta) = match config.beta_rule {
            BetaRule::ModifiedPrp => (m.inner(&x_new, &g_new, &y) / gg, m.inner(&x_new, &g_new, &td) / gg),
            BetaRule::FletcherReeves => (gg_new / gg, 0.0),
        };
        let d_new = g_new.scaled(-1.0).axpy(beta, &td).axpy(-theta, &y);
        let check = descent_identity_check(m, &x_new, &g_new, &d_new);
        if config.check_descent && config.beta_rule == BetaRule::ModifiedPrp {
            debug_assert!(check <= 1e-10, "descent identity violated: {check:e}");
        }

        x = x_new;
        fx = f_new;
        g = g_new;
        gg = gg_new;
        d = d_new;
        bounds.observe(&x);
        observer(k + 1, &x, fx);
        records.push(IterationRecord {
            k: k + 1,
            value: fx,
            residual: residual(fx),
            grad_norm: gg.sqrt(),
            alpha: ls.alpha,
            beta,
            theta,
            ls_updates: ls.updates,
            additional_used: ls.additional_used,
            dir_norm: dnorm2.sqrt(),
            step_energy: ls.alpha * ls.alpha * dnorm2,
            descent_check: check,
        });
    };

    let matrix = recover_stochastic(&x);
    Ok(SolveOutcome {
        point: x,
        trace: IterationTrace { records, status, bounds },
        matrix,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
