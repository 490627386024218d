//! Log-Laplace duals.
//!
//! * [`fkpp_solve`]: mild solution of `∂_t U = ℋ U - (κ/2) U²`, the dual of
//!   the scaling limit.
//! * [`exact_log_laplace`]: the finite-`n` dual. For one initial particle at
//!   `x`, `h(t, x) = E[Π_i e^{-φ(X_i(t))}]` solves
//!   `∂_t h = Δ h + (ξ_e)₊(h² - h) + (ξ_e)₋(1 - h) [+ n^ϱ(Ψ(h) - h)]`,
//!   `h(0) = e^{-φ}`, and the particle system started from `N` particles at
//!   the origin has `E[e^{-(u(t), φ)}] = h(t, 0)^N`.
//!
//! The duality gap study compares `-N log h(t, 0)` computed with the
//! observable `φ/N` (so that `(u, φ/N) = ⟨μ, φ⟩`) against `U_t φ(0)`.

use rayon::prelude::*;

use crate::environment::{sample_environment, Environment, EnvironmentSpec, PotentialLaw};
use crate::error::{Error, Result};
use crate::lattice::{Field, LatticeBox, TestFunction};
use crate::pam::{Semigroup, SemigroupBackend};
use crate::particle::BranchingSpec;
use crate::stats::median;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualSpec {
    /// Branching parameter `κ ≥ 0`; `κ = 0` removes the nonlinearity.
    pub kappa: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Uniform time steps of the Duhamel quadrature.
    pub time_steps: usize,
}

impl DualSpec {
    pub fn new(kappa: f64) -> Result<Self> {
        let spec = Self {
            kappa,
            picard_tol: 1e-10,
            picard_max: 50,
            time_steps: 256,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa {} must be >= 0", self.kappa)));
        }
        if !(self.picard_tol > 0.0) || self.picard_max == 0 || self.time_steps == 0 {
            return Err(Error::InvalidParameter(
                "picard_tol, picard_max and time_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FkppSolution {
    /// `U_t φ₀`.
    pub value: Field,
    /// Sup-norm change of each Picard iterate over the whole time grid.
    pub deltas: Vec<f64>,
    /// `max(-U, U - T_t φ₀)`; non-positive up to roundoff when the bounds
    /// `0 ≤ U ≤ T_t φ₀` hold.
    pub bound_violation: f64,
}

fn check_nonnegative(phi: &Field, what: &str) -> Result<()> {
    if phi.min() < 0.0 {
        return Err(Error::InvalidParameter(format!("{what} must be nonnegative")));
    }
    Ok(())
}

/// Picard iteration `U ↦ T_t φ₀ - (κ/2) ∫₀ᵗ T_{t-s}(U(s)²) ds` on a uniform
/// grid, with the time integral advanced by the trapezoidal recursion.
pub fn fkpp_solve(semigroup: &Semigroup, phi0: &Field, t: f64, spec: &DualSpec) -> Result<FkppSolution> {
    spec.validate()?;
    check_nonnegative(phi0, "phi0")?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter("t must be >= 0".into()));
    }
    let linear = semigroup.apply(phi0, t)?;
    if spec.kappa == 0.0 || t == 0.0 {
        return Ok(FkppSolution {
            value: linear,
            deltas: vec![0.0],
            bound_violation: 0.0,
        });
    }
    let lat = *semigroup.lattice();
    let steps = spec.time_steps;
    let h = t / steps as f64;
    let mut base = Vec::with_capacity(steps + 1);
    base.push(phi0.clone());
    for k in 0..steps {
        base.push(semigroup.apply(&base[k], h)?);
    }
    let half_kappa = 0.5 * spec.kappa;
    let mut current = base.clone();
    let mut deltas = Vec::new();
    loop {
        let squares: Vec<Field> = current.iter().map(|u| u.map(|v| v * v)).collect();
        let mut integral = Field::zeros(lat);
        let mut next = Vec::with_capacity(steps + 1);
        next.push(base[0].clone());
        for k in 0..steps {
            integral = semigroup
                .apply(&integral.add(&squares[k].scale(0.5 * h))?, h)?
                .add(&squares[k + 1].scale(0.5 * h))?;
            next.push(base[k + 1].sub(&integral.scale(half_kappa))?);
        }
        let delta = next
            .iter()
            .zip(&current)
            .map(|(a, b)| a.max_abs_diff(b))
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))?;
        deltas.push(delta);
        current = next;
        if !delta.is_finite() {
            return Err(Error::NonFinite("Picard iterate".into()));
        }
        if delta < spec.picard_tol {
            break;
        }
        if deltas.len() >= spec.picard_max {
            return Err(Error::NoConvergence {
                solver: "FKPP Picard iteration",
                iterations: deltas.len(),
                residual: delta,
            });
        }
    }
    let value = current.pop().expect("non-empty path");
    let bound_violation = value
        .values()
        .iter()
        .zip(linear.values())
        .map(|(u, l)| (-u).max(u - l))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(FkppSolution {
        value,
        deltas,
        bound_violation,
    })
}

/// Time stepping of [`exact_log_laplace`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualStepping {
    /// Initial step satisfies `dt · (2d n² + max|ξ_e| + n^ϱ) ≤ safety`.
    pub safety: f64,
    /// Maximal number of step halvings after an invariance violation.
    pub max_halvings: u32,
    pub backend: SemigroupBackend,
}

impl Default for DualStepping {
    fn default() -> Self {
        Self {
            safety: 0.05,
            max_halvings: 10,
            backend: SemigroupBackend::dense(),
        }
    }
}

/// Solution `h(t)` of the exact dual, stored as `1 - h` for precision.
#[derive(Clone, Debug)]
pub struct LogLaplace {
    complement: Field,
    pub steps: usize,
    pub dt: f64,
}

impl LogLaplace {
    pub fn h(&self) -> Field {
        self.complement.map(|g| 1.0 - g)
    }

    /// `1 - h`.
    pub fn complement(&self) -> &Field {
        &self.complement
    }

    /// `log h(t, 0)`.
    pub fn log_h_origin(&self) -> f64 {
        (-self.complement.at_origin()).ln_1p()
    }

    /// `E[e^{-(u(t), φ)}] = h(t, 0)^N` for `N` particles at the origin.
    pub fn laplace_functional(&self, particles: u64) -> f64 {
        (particles as f64 * self.log_h_origin()).exp()
    }
}

const INVARIANCE_SLACK: f64 = 1e-10;

/// Reaction part written for `g = 1 - h`:
/// `g' = b g (1 - g) - d g - o (Ψ(1 - g) - (1 - g))`.
struct Reaction<'a> {
    birth: Vec<f64>,
    death: Vec<f64>,
    offspring: f64,
    branching: &'a BranchingSpec,
}

impl Reaction<'_> {
    fn rate(&self, x: usize, g: f64) -> f64 {
        let mut r = self.birth[x] * g * (1.0 - g) - self.death[x] * g;
        if self.offspring > 0.0 {
            let h = 1.0 - g;
            r -= self.offspring * (self.branching.generating_function(h) - h);
        }
        r
    }

    /// One RK4 step of length `dt` at every site; `Err(excess)` when the
    /// result leaves `[0, 1]` by more than the slack.
    fn advance(&self, g: &mut [f64], dt: f64) -> std::result::Result<(), f64> {
        for (x, v) in g.iter_mut().enumerate() {
            let k1 = self.rate(x, *v);
            let k2 = self.rate(x, *v + 0.5 * dt * k1);
            let k3 = self.rate(x, *v + 0.5 * dt * k2);
            let k4 = self.rate(x, *v + dt * k3);
            let next = *v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let excess = (-next).max(next - 1.0);
            if excess > INVARIANCE_SLACK || !next.is_finite() {
                return Err(excess);
            }
            *v = next.clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// Strang splitting: half reaction step (RK4), exact diffusion step
/// `e^{dt Δ}` on `1 - h` (zero exterior realizes killing at a Dirichlet
/// boundary), half reaction step. The step is halved and the run restarted
/// whenever `h` leaves `[0, 1]`.
pub fn exact_log_laplace(
    env: &Environment,
    phi: &Field,
    t: f64,
    branching: &BranchingSpec,
    stepping: &DualStepping,
) -> Result<LogLaplace> {
    branching.validate()?;
    check_nonnegative(phi, "phi")?;
    let lat = *env.lattice();
    lat.check_same(phi.lattice())?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter("t must be finite and >= 0".into()));
    }
    let g0 = phi.map(|v| -(-v).exp_m1());
    if t == 0.0 {
        return Ok(LogLaplace {
            complement: g0,
            steps: 0,
            dt: 0.0,
        });
    }
    let n = lat.scale();
    let reaction = Reaction {
        birth: env.birth_rates().into_values(),
        death: env.death_rates().into_values(),
        offspring: branching.offspring_rate(n),
        branching,
    };
    let max_xi = env.xi_eff().sup_norm();
    let stiffness = (2 * lat.num_directions() * n * n) as f64 / 2.0 + max_xi + reaction.offspring;
    let mut steps = (t * stiffness / stepping.safety).ceil().max(1.0) as usize;
    let heat = Semigroup::free(lat, stepping.backend)?;
    let mut last_excess = 0.0;
    for _ in 0..=stepping.max_halvings {
        let dt = t / steps as f64;
        match strang_run(&reaction, &heat, &g0, dt, steps)? {
            Ok(g) => {
                return Ok(LogLaplace {
                    complement: Field::new(lat, g)?,
                    steps,
                    dt,
                })
            }
            Err(excess) => {
                last_excess = excess;
                steps *= 2;
            }
        }
    }
    Err(Error::InvarianceViolated {
        excess: last_excess,
        time: t,
    })
}

fn strang_run(
    reaction: &Reaction<'_>,
    heat: &Semigroup,
    g0: &Field,
    dt: f64,
    steps: usize,
) -> Result<std::result::Result<Vec<f64>, f64>> {
    let lat = *g0.lattice();
    let mut g = g0.values().to_vec();
    for _ in 0..steps {
        if let Err(e) = reaction.advance(&mut g, 0.5 * dt) {
            return Ok(Err(e));
        }
        let diffused = heat.apply(&Field::new(lat, g)?, dt)?;
        g = diffused.into_values();
        for v in &mut g {
            let excess = (-*v).max(*v - 1.0);
            if excess > INVARIANCE_SLACK {
                return Ok(Err(excess));
            }
            *v = v.clamp(0.0, 1.0);
        }
        if let Err(e) = reaction.advance(&mut g, 0.5 * dt) {
            return Ok(Err(e));
        }
    }
    Ok(Ok(g))
}

/// Parameters of [`duality_gap_study`].
#[derive(Clone, Debug, PartialEq)]
pub struct GapStudy {
    pub law: PotentialLaw,
    pub dim: usize,
    pub side: usize,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub t: f64,
    pub phi: TestFunction,
    /// `false` sets `(ξ_e)₊ = 0` in both duals and `κ = 0`.
    pub births: bool,
    pub dual: DualSpec,
    pub stepping: DualStepping,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapRow {
    pub n: usize,
    pub seed: u64,
    pub delta: f64,
    /// `h_n(t, 0)` for the observable `φ / N`.
    pub h0: f64,
    pub u0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// `(n, median Δ(n))` in grid order.
    pub medians: Vec<(usize, f64)>,
}

fn gap_row(study: &GapStudy, n: usize, seed: u64) -> Result<GapRow> {
    let lattice = LatticeBox::periodic(study.dim, n, study.side)?;
    let sampled = sample_environment(&EnvironmentSpec {
        law: study.law,
        lattice,
        seed,
    })?;
    let (env, kappa) = if study.births {
        let kappa = 2.0 * sampled.nu();
        (sampled, kappa)
    } else {
        (sampled.without_births(), 0.0)
    };
    let rho = study.dim as f64 / 2.0;
    let branching = BranchingSpec::binary(rho);
    let particles = branching.initial_count(n);
    let phi = study.phi.sample(lattice);
    let scaled = phi.scale(1.0 / particles as f64);
    let exact = exact_log_laplace(&env, &scaled, study.t, &branching, &study.stepping)?;
    let semigroup = Semigroup::new(&env, study.stepping.backend)?;
    let fkpp = fkpp_solve(&semigroup, &phi, study.t, &DualSpec { kappa, ..study.dual })?;
    let log_h = exact.log_h_origin();
    let u0 = fkpp.value.at_origin();
    Ok(GapRow {
        n,
        seed,
        delta: (-(particles as f64) * log_h - u0).abs(),
        h0: log_h.exp(),
        u0,
    })
}

/// `Δ(n) = |-N log h_n(t, 0) - U_t φ(0)|` with `ϱ = d/2`, `N = ⌊n^{d/2}⌋`
/// and `κ = 2ν`, for every `n` in the grid and every environment seed.
pub fn duality_gap_study(study: &GapStudy) -> Result<GapReport> {
    let jobs: Vec<(usize, u64)> = study
        .n_grid
        .iter()
        .flat_map(|&n| study.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, seed)| gap_row(study, n, seed))
        .collect::<Result<Vec<_>>>()?;
    let medians = study
        .n_grid
        .iter()
        .map(|&n| {
            let deltas: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.delta).collect();
            (n, median(&deltas))
        })
        .collect();
    Ok(GapReport { rows, medians })
}
