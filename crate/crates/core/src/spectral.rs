//! Dirichlet Anderson Hamiltonian on `(-L/2, L/2)^d`, its principal
//! eigenpair, the growth of the principal eigenvalue in `L`, and the
//! martingale `E(t) = e^{-λ₁ t} ⟨μ^L_t, e₁⟩` of the killed process.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::environment::{sample_environment, Environment, EnvironmentSpec, PotentialLaw};
use crate::error::{Error, Result};
use crate::lattice::{lattice_pair, Field, LatticeBox};
use crate::particle::{init_state, killed_simulate, BranchingSpec};
use crate::rng::Ensemble;
use crate::stats::{median, relative_spread, z_score, SampleStats};

/// Largest dimension handled by the dense symmetric eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 4096;
pub const POWER_MAX_ITERATIONS: usize = 10_000;

/// `Δ^n + ξ^n_e` restricted to the sites strictly inside `(-L/2, L/2)^d`
/// with zero exterior values.
#[derive(Clone, Debug)]
pub struct DirichletHamiltonian {
    lattice: LatticeBox,
    side: usize,
    /// Environment-lattice index of every interior site.
    sites: Vec<usize>,
    diagonal: Vec<f64>,
    /// Interior neighbours of every interior site (local indices).
    neighbors: Vec<Vec<usize>>,
    hopping: f64,
}

pub fn assemble(env: &Environment, side: usize) -> Result<DirichletHamiltonian> {
    let lattice = *env.lattice();
    if side == 0 || !side.is_multiple_of(2) || side > lattice.side() {
        return Err(Error::InvalidParameter(format!(
            "box side {side} must be even, positive and at most {}",
            lattice.side()
        )));
    }
    let sites: Vec<usize> = (0..lattice.num_sites())
        .filter(|&i| lattice.strictly_inside(i, side))
        .collect();
    let mut local = vec![usize::MAX; lattice.num_sites()];
    for (k, &i) in sites.iter().enumerate() {
        local[i] = k;
    }
    let n2 = (lattice.scale() * lattice.scale()) as f64;
    let xi = env.xi_eff();
    let diagonal = sites
        .iter()
        .map(|&i| xi.at(i) - n2 * lattice.num_directions() as f64)
        .collect();
    let neighbors = sites
        .iter()
        .map(|&i| {
            (0..lattice.num_directions())
                .filter_map(|d| lattice.neighbor(i, d))
                .filter(|&j| local[j] != usize::MAX)
                .map(|j| local[j])
                .collect()
        })
        .collect();
    Ok(DirichletHamiltonian {
        lattice,
        side,
        sites,
        diagonal,
        neighbors,
        hopping: n2,
    })
}

impl DirichletHamiltonian {
    pub fn dim(&self) -> usize {
        self.sites.len()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            let hop: f64 = self.neighbors[k].iter().map(|&j| v[j]).sum();
            out[k] = self.diagonal[k] * v[k] + self.hopping * hop;
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            m[(k, k)] = self.diagonal[k];
            for &j in &self.neighbors[k] {
                m[(k, j)] += self.hopping;
            }
        }
        m
    }

    /// Embeds interior values into a field on the environment lattice.
    pub fn to_field(&self, v: &[f64]) -> Field {
        let mut values = vec![0.0; self.lattice.num_sites()];
        for (k, &i) in self.sites.iter().enumerate() {
            values[i] = v[k];
        }
        Field::new(self.lattice, values).expect("finite values")
    }

    /// Interior values of a field.
    pub fn restrict(&self, f: &Field) -> Vec<f64> {
        self.sites.iter().map(|&i| f.at(i)).collect()
    }

    /// `⟨f, ℋ f⟩ / ⟨f, f⟩` over interior sites.
    pub fn rayleigh_quotient(&self, v: &[f64]) -> f64 {
        let mut hv = vec![0.0; v.len()];
        self.apply(v, &mut hv);
        let num: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let den: f64 = v.iter().map(|a| a * a).sum();
        num / den
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda1: f64,
    /// Principal eigenfunction on the environment lattice (zero outside the
    /// box), `⟨e₁, e₁⟩_n = 1`, strictly positive inside.
    pub e1: Field,
    /// `‖ℋ e₁ - λ₁ e₁‖` in the lattice `L²` norm.
    pub residual: f64,
}

fn finish(h: &DirichletHamiltonian, mut v: Vec<f64>) -> Result<EigenPair> {
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let lambda1 = h.rayleigh_quotient(&v);
    let mut e1 = h.to_field(&v);
    let norm = lattice_pair(&e1, &e1)?.sqrt();
    e1 = e1.scale(1.0 / norm);
    let v = h.restrict(&e1);
    let mut hv = vec![0.0; v.len()];
    h.apply(&v, &mut hv);
    let r: Vec<f64> = hv.iter().zip(&v).map(|(a, b)| a - lambda1 * b).collect();
    let residual = lattice_pair(&h.to_field(&r), &h.to_field(&r))?.sqrt();
    if v.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::NoConvergence {
            solver: "principal eigenvector positivity",
            iterations: 0,
            residual,
        });
    }
    Ok(EigenPair {
        lambda1,
        e1,
        residual,
    })
}

fn residual_ok(residual: f64, lambda1: f64) -> bool {
    residual <= 1e-8 * lambda1.abs() + 1e-10
}

/// Principal eigenpair: dense symmetric solve polished by shifted inverse
/// iteration for `dim ≤ 4096`, shifted power iteration otherwise.
pub fn top_eigenpair(h: &DirichletHamiltonian) -> Result<EigenPair> {
    if h.dim() == 0 {
        return Err(Error::InvalidParameter("empty Dirichlet box".into()));
    }
    if h.dim() > DENSE_EIGEN_LIMIT {
        return top_eigenpair_power(h);
    }
    let dense = h.dense();
    let eig = dense.clone().symmetric_eigen();
    let (top, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let dim = h.dim();
    // (σ - ℋ) is a nonsingular M-matrix for σ > λ₁, so its inverse is
    // entrywise positive and the polished vector is strictly positive.
    let sigma = lambda + 1e-6 * (1.0 + lambda.abs());
    let shifted = DMatrix::from_diagonal_element(dim, dim, sigma) - &dense;
    let chol = shifted.cholesky().ok_or(Error::NoConvergence {
        solver: "inverse iteration factorization",
        iterations: 0,
        residual: f64::NAN,
    })?;
    let mut v = DVector::from_iterator(dim, eig.eigenvectors.column(top).iter().map(|x| x.abs()));
    for _ in 0..4 {
        v = chol.solve(&v);
        let norm = v.norm();
        v /= norm;
    }
    let pair = finish(h, v.as_slice().to_vec())?;
    if !residual_ok(pair.residual, pair.lambda1) {
        return Err(Error::NoConvergence {
            solver: "dense eigen solve",
            iterations: 4,
            residual: pair.residual,
        });
    }
    Ok(pair)
}

/// Power iteration on `ℋ + s` with `s = 4d n² + max|ξ_e|`, which makes the
/// shifted operator positive semidefinite.
pub fn top_eigenpair_power(h: &DirichletHamiltonian) -> Result<EigenPair> {
    let dim = h.dim();
    let max_abs = h
        .diagonal
        .iter()
        .map(|d| (d + h.hopping * h.lattice.num_directions() as f64).abs())
        .fold(0.0, f64::max);
    let shift = 2.0 * h.lattice.num_directions() as f64 * h.hopping + max_abs;
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut hv = vec![0.0; dim];
    let mut lambda = f64::NAN;
    for iteration in 1..=POWER_MAX_ITERATIONS {
        h.apply(&v, &mut hv);
        lambda = v.iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>();
        let res: f64 = hv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        // for a unit vector this equals the lattice residual of the normalized field
        if iteration > 1 && residual_ok(res, lambda) {
            return finish(h, v);
        }
        for k in 0..dim {
            hv[k] += shift * v[k];
        }
        let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in 0..dim {
            v[k] = hv[k] / norm;
        }
    }
    Err(Error::NoConvergence {
        solver: "shifted power iteration",
        iterations: POWER_MAX_ITERATIONS,
        residual: lambda,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthRow {
    pub seed: u64,
    pub side: usize,
    pub lambda1: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    /// `(L, median normalized λ₁)`.
    pub medians: Vec<(usize, f64)>,
    /// `(max - min) / min` of the medians.
    pub spread: f64,
    /// `λ₁` non-decreasing in `L` for every seed.
    pub monotone: bool,
}

/// `λ₁ / (log L)^{2/3}` in `d = 1`, `λ₁ / log L` in `d = 2`.
pub fn normalized_eigenvalue(dim: usize, side: usize, lambda1: f64) -> f64 {
    let log = (side as f64).ln();
    match dim {
        1 => lambda1 / log.powf(2.0 / 3.0),
        _ => lambda1 / log,
    }
}

/// For every seed samples one environment on the largest box and computes
/// `λ₁` on the nested boxes of `sides`.
pub fn growth_study(
    law: PotentialLaw,
    dim: usize,
    n: usize,
    sides: &[usize],
    seeds: &[u64],
) -> Result<GrowthReport> {
    if sides.is_empty() || sides.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("box sides must be increasing".into()));
    }
    let largest = *sides.last().expect("non-empty");
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let env = sample_environment(&EnvironmentSpec {
                law,
                lattice: LatticeBox::periodic(dim, n, largest)?,
                seed,
            })?;
            sides
                .iter()
                .map(|&side| {
                    let lambda1 = top_eigenpair(&assemble(&env, side)?)?.lambda1;
                    Ok(GrowthRow {
                        seed,
                        side,
                        lambda1,
                        normalized: normalized_eigenvalue(dim, side, lambda1),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = per_seed
        .iter()
        .all(|rows| rows.windows(2).all(|w| w[1].lambda1 >= w[0].lambda1 - 1e-12));
    let rows: Vec<GrowthRow> = per_seed.into_iter().flatten().collect();
    let medians: Vec<(usize, f64)> = sides
        .iter()
        .map(|&side| {
            let v: Vec<f64> = rows.iter().filter(|r| r.side == side).map(|r| r.normalized).collect();
            (side, median(&v))
        })
        .collect();
    let spread = relative_spread(&medians.iter().map(|m| m.1).collect::<Vec<_>>());
    Ok(GrowthReport {
        rows,
        medians,
        spread,
        monotone,
    })
}

/// First seed in `start..start + tries` whose box of side `side` has `λ₁ > 0`.
pub fn seed_with_positive_eigenvalue(
    law: PotentialLaw,
    lattice: LatticeBox,
    side: usize,
    start: u64,
    tries: u64,
) -> Result<Option<(u64, Environment)>> {
    for seed in start..start + tries {
        let env = sample_environment(&EnvironmentSpec { law, lattice, seed })?;
        if top_eigenpair(&assemble(&env, side)?)?.lambda1 > 0.0 {
            return Ok(Some((seed, env)));
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistenceRow {
    pub replica: u64,
    pub t: f64,
    pub value: f64,
    pub population: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceReport {
    pub lambda1: f64,
    pub e1_origin: f64,
    pub times: Vec<f64>,
    pub rows: Vec<PersistenceRow>,
    /// Sample statistics of `E(t)` per time.
    pub stats: Vec<SampleStats>,
    /// Largest pairwise `|mean_i - mean_j| / √(se_i² + se_j²)`.
    pub max_pair_z: f64,
    /// Fraction of replicas with `E(t_end) > threshold · e₁(0)` and its SE.
    pub persistence_fraction: f64,
    pub persistence_se: f64,
    /// `Var E(t_end) / Var E(t_mid)` where `t_mid` is the time closest to `t_end/2`.
    pub variance_ratio: f64,
    /// Mean of `e^{-λ t_end} ⟨μ^L_{t_end}, e₁⟩` for the requested `λ < λ₁`.
    pub growth_proxy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceConfig {
    pub side: usize,
    pub branching: BranchingSpec,
    pub times: Vec<f64>,
    pub ensemble: Ensemble,
    pub threshold: f64,
    pub proxy_rate: Option<f64>,
}

/// Monte Carlo ensemble of `E(t) = e^{-λ₁ t} ⟨μ^L_t, e₁⟩` for the killed process.
pub fn persistence_experiment(env: &Environment, config: &PersistenceConfig) -> Result<PersistenceReport> {
    let pair = top_eigenpair(&assemble(env, config.side)?)?;
    let lattice = *env.lattice();
    let state = init_state(lattice, config.branching.rho);
    let fields = [pair.e1.clone()];
    let paths = config.ensemble.run(|_, rng| {
        killed_simulate(&state, env, &config.branching, config.side, &config.times, &fields, rng)
    })?;
    let mut rows = Vec::with_capacity(paths.len() * config.times.len());
    let mut finals = Vec::with_capacity(paths.len());
    for (r, path) in paths.into_iter().enumerate() {
        let path = path?;
        for (k, &t) in config.times.iter().enumerate() {
            rows.push(PersistenceRow {
                replica: r as u64,
                t,
                value: (-pair.lambda1 * t).exp() * path.measure(k, 0),
                population: path.populations[k],
            });
        }
        finals.push(path.final_measure(0));
    }
    let stats: Vec<SampleStats> = (0..config.times.len())
        .map(|k| {
            let v: Vec<f64> = rows
                .iter()
                .skip(k)
                .step_by(config.times.len())
                .map(|r| r.value)
                .collect();
            SampleStats::from_samples(&v)
        })
        .collect();
    let mut max_pair_z = 0.0f64;
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            let se = (stats[i].se_mean.powi(2) + stats[j].se_mean.powi(2)).sqrt();
            max_pair_z = max_pair_z.max(z_score(stats[i].mean - stats[j].mean, se));
        }
    }
    let e1_origin = pair.e1.at_origin();
    let last = config.times.len() - 1;
    let t_end = config.times[last];
    let above: Vec<f64> = rows
        .iter()
        .skip(last)
        .step_by(config.times.len())
        .map(|r| (r.value > config.threshold * e1_origin) as u8 as f64)
        .collect();
    let fraction = SampleStats::from_samples(&above);
    let mid = config
        .times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.5 * t_end).abs().total_cmp(&(b.1 - 0.5 * t_end).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let growth_proxy = config.proxy_rate.map(|rate| {
        finals.iter().map(|m| (-rate * t_end).exp() * m).sum::<f64>() / finals.len() as f64
    });
    Ok(PersistenceReport {
        lambda1: pair.lambda1,
        e1_origin,
        times: config.times.clone(),
        variance_ratio: stats[last].variance / stats[mid].variance,
        stats,
        max_pair_z,
        persistence_fraction: fraction.mean,
        persistence_se: fraction.se_mean,
        rows,
        growth_proxy,
    })
}
