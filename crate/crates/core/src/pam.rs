//! Discrete parabolic Anderson model: the semigroup `T^n_t = e^{t ℋ^n}` of
//! `ℋ^n = Δ^n + ξ^n_e`, forced solutions by Duhamel's formula, the
//! second-moment (quadratic variation) functional of the particle system,
//! and the hierarchy of moment equations for a single initial particle.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{neighbor_energy, Field, LatticeBox};
use crate::linalg::{conjugate_gradient, expm};
use crate::particle::BranchingSpec;
use crate::quadrature::simpson;

/// Largest lattice (in sites) accepted by the dense backend.
pub const DENSE_SITE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    DenseExpm,
    CrankNicolson,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemigroupBackend {
    pub kind: BackendKind,
    /// Crank–Nicolson step `dt = dt_factor / (4d n² + max|ξ_e|)`.
    pub dt_factor: f64,
    pub tolerance: f64,
}

impl SemigroupBackend {
    pub fn dense() -> Self {
        Self {
            kind: BackendKind::DenseExpm,
            dt_factor: 0.25,
            tolerance: 1e-8,
        }
    }

    pub fn crank_nicolson(dt_factor: f64) -> Self {
        Self {
            kind: BackendKind::CrankNicolson,
            dt_factor,
            tolerance: 1e-8,
        }
    }
}

impl Default for SemigroupBackend {
    fn default() -> Self {
        Self::dense()
    }
}

/// Strictly increasing observation times starting at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::InvalidParameter("time grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(
                "time grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_end > 0.0) {
            return Err(Error::InvalidParameter("uniform grid needs t_end > 0 and steps > 0".into()));
        }
        Self::new((0..=steps).map(|k| t_end * k as f64 / steps as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("grid is non-empty")
    }

    /// Same grid with every interval split in two.
    pub fn refined(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.times.len());
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.end());
        Self { times }
    }
}

/// `T^n_t` for one potential, with cached dense propagators.
pub struct Semigroup {
    lattice: LatticeBox,
    potential: Vec<f64>,
    backend: SemigroupBackend,
    cache: Mutex<HashMap<u64, Arc<DMatrix<f64>>>>,
}

impl std::fmt::Debug for Semigroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Semigroup")
            .field("lattice", &self.lattice)
            .field("backend", &self.backend)
            .finish()
    }
}

impl Semigroup {
    /// Semigroup of `Δ^n + ξ^n_e` for the environment.
    pub fn new(env: &Environment, backend: SemigroupBackend) -> Result<Self> {
        Self::with_potential(env.xi_eff(), backend)
    }

    /// Semigroup of `Δ^n + V` for an arbitrary potential `V`.
    pub fn with_potential(potential: &Field, backend: SemigroupBackend) -> Result<Self> {
        let lattice = *potential.lattice();
        if backend.kind == BackendKind::DenseExpm && lattice.num_sites() > DENSE_SITE_LIMIT {
            return Err(Error::BackendSize {
                sites: lattice.num_sites(),
                limit: DENSE_SITE_LIMIT,
            });
        }
        if !(backend.dt_factor > 0.0) || !(backend.tolerance > 0.0) {
            return Err(Error::InvalidParameter("backend dt_factor and tolerance must be positive".into()));
        }
        Ok(Self {
            lattice,
            potential: potential.values().to_vec(),
            backend,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Heat semigroup `e^{tΔ^n}`.
    pub fn free(lattice: LatticeBox, backend: SemigroupBackend) -> Result<Self> {
        Self::with_potential(&Field::zeros(lattice), backend)
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn backend(&self) -> &SemigroupBackend {
        &self.backend
    }

    /// `out = ℋ v`.
    pub fn hamiltonian_apply(&self, v: &[f64], out: &mut [f64]) {
        let lat = &self.lattice;
        let n2 = (lat.scale() * lat.scale()) as f64;
        for i in 0..lat.num_sites() {
            let mut acc = 0.0;
            for d in 0..lat.num_directions() {
                if let Some(j) = lat.neighbor(i, d) {
                    acc += v[j];
                }
                acc -= v[i];
            }
            out[i] = n2 * acc + self.potential[i] * v[i];
        }
    }

    pub fn dense_hamiltonian(&self) -> DMatrix<f64> {
        let lat = &self.lattice;
        let size = lat.num_sites();
        let n2 = (lat.scale() * lat.scale()) as f64;
        let mut h = DMatrix::zeros(size, size);
        for i in 0..size {
            h[(i, i)] = self.potential[i] - n2 * lat.num_directions() as f64;
            for d in 0..lat.num_directions() {
                if let Some(j) = lat.neighbor(i, d) {
                    h[(i, j)] += n2;
                }
            }
        }
        h
    }

    /// Upper bound on the spectral radius of `ℋ`.
    pub fn stiffness(&self) -> f64 {
        let lat = &self.lattice;
        let max_v = self.potential.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (2 * lat.num_directions() * lat.scale() * lat.scale()) as f64 + max_v
    }

    fn propagator(&self, t: f64) -> Result<Arc<DMatrix<f64>>> {
        let key = t.to_bits();
        if let Some(m) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(expm(&(self.dense_hamiltonian() * t))?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&m));
        Ok(m)
    }

    fn trapezoidal(&self, v: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
        let h = t / steps as f64;
        let size = v.len();
        let inner_tol = self.backend.tolerance / steps as f64;
        let mut x = v.to_vec();
        let mut hx = vec![0.0; size];
        for _ in 0..steps {
            self.hamiltonian_apply(&x, &mut hx);
            let rhs: Vec<f64> = x.iter().zip(&hx).map(|(a, b)| a + 0.5 * h * b).collect();
            let op = |u: &[f64], out: &mut [f64]| {
                self.hamiltonian_apply(u, out);
                for i in 0..size {
                    out[i] = u[i] - 0.5 * h * out[i];
                }
            };
            x = conjugate_gradient(op, &rhs, &x, inner_tol, 10 * size + 100)?;
        }
        Ok(x)
    }

    /// Crank–Nicolson at step `dt` and `dt/2`, combined by one Richardson
    /// extrapolation.
    fn crank_nicolson(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        let dt_max = self.backend.dt_factor / self.stiffness();
        let steps = (t / dt_max).ceil().max(1.0) as usize;
        let coarse = self.trapezoidal(v, t, steps)?;
        let fine = self.trapezoidal(v, t, 2 * steps)?;
        Ok(fine
            .iter()
            .zip(&coarse)
            .map(|(f, c)| (4.0 * f - c) / 3.0)
            .collect())
    }

    /// `T^n_t f`.
    pub fn apply(&self, f: &Field, t: f64) -> Result<Field> {
        self.lattice.check_same(f.lattice())?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("time {t} must be finite and >= 0")));
        }
        if t == 0.0 {
            return Ok(f.clone());
        }
        let values = match self.backend.kind {
            BackendKind::DenseExpm => {
                let m = self.propagator(t)?;
                let v = DVector::from_column_slice(f.values());
                (&*m * v).as_slice().to_vec()
            }
            BackendKind::CrankNicolson => self.crank_nicolson(f.values(), t)?,
        };
        Field::new(self.lattice, values).map_err(|_| Error::NonFinite("semigroup".into()))
    }
}

pub fn semigroup_apply(env: &Environment, f0: &Field, t: f64, backend: SemigroupBackend) -> Result<Field> {
    Semigroup::new(env, backend)?.apply(f0, t)
}

/// Solution of `∂_t w = ℋ w + f(t)`, `w(0) = w0`, at every grid time.
///
/// `w(t_k) = T_{t_k} w0 + D_k` with the Duhamel part advanced by
/// `D_{k+1} = T_h D_k + h T_{h/2} f(t_k + h/2)` (midpoint rule).
pub fn pam_solve(
    semigroup: &Semigroup,
    w0: &Field,
    forcing: Option<&dyn Fn(f64) -> Field>,
    grid: &TimeGrid,
) -> Result<Vec<Field>> {
    let lat = *semigroup.lattice();
    let mut duhamel = Field::zeros(lat);
    let mut out = Vec::with_capacity(grid.times().len());
    out.push(semigroup.apply(w0, 0.0)?);
    for w in grid.times().windows(2) {
        let h = w[1] - w[0];
        if let Some(f) = forcing {
            let mid = f(w[0] + 0.5 * h);
            lat.check_same(mid.lattice())?;
            duhamel = semigroup
                .apply(&duhamel, h)?
                .add(&semigroup.apply(&mid, 0.5 * h)?.scale(h))?;
        }
        let homogeneous = semigroup.apply(w0, w[1])?;
        out.push(if forcing.is_some() {
            homogeneous.add(&duhamel)?
        } else {
            homogeneous
        });
    }
    Ok(out)
}

/// Largest sup-norm change of [`pam_solve`] under one grid refinement.
pub fn duhamel_refinement_gap(
    semigroup: &Semigroup,
    w0: &Field,
    forcing: &dyn Fn(f64) -> Field,
    grid: &TimeGrid,
) -> Result<f64> {
    let coarse = pam_solve(semigroup, w0, Some(forcing), grid)?;
    let fine = pam_solve(semigroup, w0, Some(forcing), &grid.refined())?;
    coarse
        .iter()
        .enumerate()
        .map(|(k, c)| c.max_abs_diff(&fine[2 * k]))
        .try_fold(0.0f64, |m, d| Ok(m.max(d?)))
}

/// Number of Simpson intervals used by [`variance_functional`].
pub const VARIANCE_INTERVALS: usize = 64;

/// Exact variance of `⟨μ^n_t, φ⟩` under the quenched law:
/// `∫₀ᵗ T_r( N^{-1} [ Γ(T_{t-r}φ) + (|ξ_e| + n^ϱ σ² 1_{offspring}) (T_{t-r}φ)² ] )(0) dr`
/// with `N = ⌊n^ϱ⌋` and `Γ(ψ) = n² Σ_{y~x}(ψ(y) - ψ(x))²`.
pub fn variance_functional(
    semigroup: &Semigroup,
    phi: &Field,
    t: f64,
    branching: &BranchingSpec,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter("variance functional needs t > 0".into()));
    }
    let lat = *semigroup.lattice();
    let n = lat.scale();
    let norm = branching.initial_count(n) as f64;
    let extra = branching.offspring_rate(n) * branching.offspring_variance();
    let abs_v: Vec<f64> = semigroup.potential().iter().map(|v| v.abs() + extra).collect();
    let origin = lat.origin();
    let h = t / VARIANCE_INTERVALS as f64;
    let samples = (0..=VARIANCE_INTERVALS)
        .map(|i| {
            let r = i as f64 * h;
            let psi = semigroup.apply(phi, t - r)?;
            let energy = neighbor_energy(&psi);
            let integrand: Vec<f64> = energy
                .values()
                .iter()
                .zip(psi.values())
                .zip(&abs_v)
                .map(|((g, p), v)| (g + v * p * p) / norm)
                .collect();
            let integrand = Field::new(lat, integrand)?;
            Ok(semigroup.apply(&integrand, r)?.at(origin))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(simpson(&samples, h))
}

/// Moments `m^p(t, x) = n^{ϱ(1-p)} E_{1_x}[(u₁(t), φ)^p]` for `p = 1..=p_max`.
#[derive(Clone, Debug)]
pub struct MomentHierarchy {
    pub times: Vec<f64>,
    /// `levels[p - 1][k]` is `m^p(t_k)`.
    pub levels: Vec<Vec<Field>>,
}

impl MomentHierarchy {
    pub fn level(&self, p: usize) -> &[Field] {
        &self.levels[p - 1]
    }

    pub fn final_level(&self, p: usize) -> &Field {
        self.levels[p - 1].last().expect("non-empty grid")
    }
}

fn binomial(p: usize, i: usize) -> f64 {
    (0..i).fold(1.0, |acc, k| acc * (p - k) as f64 / (k + 1) as f64)
}

/// Solves the triangular system
/// `∂_t m^p = ℋ m^p + n^{-ϱ}(ξ_e)₊ Σ_{i=1}^{p-1} C(p,i) m^i m^{p-i}`,
/// `m^p(0) = n^{ϱ(1-p)} φ^p`, level by level. `m¹(t_k) = T_{t_k} φ`
/// exactly; higher levels use the trapezoidal Duhamel recursion.
pub fn moment_hierarchy(
    semigroup: &Semigroup,
    phi: &Field,
    p_max: usize,
    rho: f64,
    grid: &TimeGrid,
) -> Result<MomentHierarchy> {
    if !(1..=4).contains(&p_max) {
        return Err(Error::InvalidParameter(format!("p_max {p_max} not in 1..=4")));
    }
    let lat = *semigroup.lattice();
    let n_rho = (lat.scale() as f64).powf(rho);
    let births: Vec<f64> = semigroup.potential().iter().map(|v| v.max(0.0) / n_rho).collect();
    let times = grid.times().to_vec();
    let mut levels: Vec<Vec<Field>> = Vec::with_capacity(p_max);
    levels.push(
        times
            .iter()
            .map(|&t| semigroup.apply(phi, t))
            .collect::<Result<_>>()?,
    );
    for p in 2..=p_max {
        let source = |k: usize| -> Field {
            let mut acc = vec![0.0; lat.num_sites()];
            for i in 1..p {
                let c = binomial(p, i);
                let a = levels[i - 1][k].values();
                let b = levels[p - i - 1][k].values();
                for x in 0..acc.len() {
                    acc[x] += c * a[x] * b[x];
                }
            }
            let values = acc.iter().zip(&births).map(|(s, b)| s * b).collect();
            Field::from_vec_unchecked(lat, values)
        };
        let init = phi.map(|v| n_rho.powi(1 - p as i32) * v.powi(p as i32));
        let mut path = Vec::with_capacity(times.len());
        path.push(init);
        for k in 0..times.len() - 1 {
            let h = times[k + 1] - times[k];
            let prev = &path[k];
            let next = semigroup
                .apply(prev, h)?
                .add(&semigroup.apply(&source(k), h)?.scale(0.5 * h))?
                .add(&source(k + 1).scale(0.5 * h))?;
            path.push(next);
        }
        levels.push(path);
    }
    Ok(MomentHierarchy { times, levels })
}
