//! Euler–Maruyama scheme for the one-dimensional density equation
//! `∂_t μ = Δ μ + ξ_e μ + √(κ μ) Ẇ` on the lattice, with negative values
//! clipped to zero after every step.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{discrete_laplacian, lattice_pair, Field, LatticeBox};
use crate::particle::MeasurePath;
use crate::rng::Ensemble;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdeConfig {
    /// Noise intensity `κ ≥ 0`.
    pub kappa: f64,
    /// Time step, at most `dx²/4`.
    pub dt: f64,
    pub noise_seed: u64,
}

impl SpdeConfig {
    pub fn validate(&self, lattice: &LatticeBox) -> Result<()> {
        if lattice.dim() != 1 {
            return Err(Error::Dimension {
                required: 1,
                actual: lattice.dim(),
            });
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa {} must be >= 0", self.kappa)));
        }
        let dx = 1.0 / lattice.scale() as f64;
        if !(self.dt > 0.0) || self.dt > 0.25 * dx * dx {
            return Err(Error::InvalidParameter(format!(
                "dt {} must lie in (0, dx²/4 = {}]",
                self.dt,
                0.25 * dx * dx
            )));
        }
        Ok(())
    }
}

/// Lattice Dirac mass `n · 1_{0}`, so that `⟨δ, 1⟩_n = 1`.
pub fn dirac(lattice: LatticeBox) -> Field {
    Field::indicator(lattice, lattice.origin()).scale(1.0 / lattice.cell_volume())
}

/// One step of length `dt`; returns the new density and the mass removed
/// by clipping (in the lattice pairing).
pub fn spde_step<R: Rng + ?Sized>(
    mu: &Field,
    env: &Environment,
    kappa: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(Field, f64)> {
    let lat = *env.lattice();
    lat.check_same(mu.lattice())?;
    if mu.min() < 0.0 {
        return Err(Error::InvalidParameter("density must be nonnegative".into()));
    }
    let dx = lat.cell_volume();
    let lap = discrete_laplacian(mu);
    let xi = env.xi_eff();
    let mut clipped = 0.0;
    let values = mu
        .values()
        .iter()
        .zip(lap.values())
        .zip(xi.values())
        .map(|((&m, &l), &v)| {
            let noise: f64 = rng.sample(StandardNormal);
            let next = m + dt * (l + v * m) + (kappa * m.max(0.0) * dt / dx).sqrt() * noise;
            if next < 0.0 {
                clipped -= next * dx;
                0.0
            } else {
                next
            }
        })
        .collect();
    Ok((Field::new(lat, values)?, clipped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpdePath {
    /// `pairings[k][j] = ⟨μ_{t_k}, φ_j⟩_n`; the population column is unused (0).
    pub path: MeasurePath,
    pub clipped_mass: f64,
}

/// Runs the scheme from the Dirac mass and records `⟨μ_t, φ_j⟩_n`.
/// Steps are shortened to hit every observation time exactly.
pub fn simulate<R: Rng + ?Sized>(
    env: &Environment,
    config: &SpdeConfig,
    obs_times: &[f64],
    fields: &[Field],
    rng: &mut R,
) -> Result<SpdePath> {
    let lat = *env.lattice();
    config.validate(&lat)?;
    if obs_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || obs_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("observation times must be sorted and >= 0".into()));
    }
    for f in fields {
        lat.check_same(f.lattice())?;
    }
    let mut mu = dirac(lat);
    let mut time = 0.0;
    let mut clipped_mass = 0.0;
    let mut pairings = Vec::with_capacity(obs_times.len());
    for &target in obs_times {
        while time < target {
            let dt = config.dt.min(target - time);
            let (next, clipped) = spde_step(&mu, env, config.kappa, dt, rng)?;
            mu = next;
            clipped_mass += clipped;
            time = if target - time <= config.dt { target } else { time + dt };
        }
        pairings.push(
            fields
                .iter()
                .map(|f| lattice_pair(&mu, f))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(SpdePath {
        path: MeasurePath {
            replica: 0,
            normalization: 1.0,
            times: obs_times.to_vec(),
            populations: vec![0; obs_times.len()],
            pairings,
        },
        clipped_mass,
    })
}

/// Independent paths; replica `r` uses stream `(noise_seed, r)`.
pub fn simulate_ensemble(
    env: &Environment,
    config: &SpdeConfig,
    obs_times: &[f64],
    fields: &[Field],
    replicas: usize,
    max_threads: Option<usize>,
) -> Result<Vec<SpdePath>> {
    Ensemble::new(replicas, config.noise_seed)
        .with_threads(max_threads)
        .run(|r, rng| {
            simulate(env, config, obs_times, fields, rng).map(|mut p| {
                p.path.replica = r;
                p
            })
        })?
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentSpec, PotentialLaw};
    use crate::lattice::TestFunction;
    use crate::pam::{Semigroup, SemigroupBackend};
    use crate::rng::replica_rng;
    use crate::stats::SampleStats;

    #[test]
    fn validation() {
        let lat = LatticeBox::periodic(1, 4, 4).unwrap();
        let ok = SpdeConfig { kappa: 1.0, dt: 1.0 / 64.0, noise_seed: 0 };
        assert!(ok.validate(&lat).is_ok());
        assert!(SpdeConfig { dt: 0.02, ..ok }.validate(&lat).is_err());
        assert!(SpdeConfig { kappa: -1.0, ..ok }.validate(&lat).is_err());
        assert!(ok.validate(&LatticeBox::periodic(2, 4, 4).unwrap()).is_err());
    }

    #[test]
    fn dirac_has_unit_mass() {
        let lat = LatticeBox::periodic(1, 8, 4).unwrap();
        assert!((lattice_pair(&dirac(lat), &Field::constant(lat, 1.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_scheme_tracks_semigroup() {
        let env = sample_environment(&EnvironmentSpec {
            law: PotentialLaw::Rademacher,
            lattice: LatticeBox::periodic(1, 4, 4).unwrap(),
            seed: 2,
        })
        .unwrap();
        let lat = *env.lattice();
        let phi = TestFunction::gaussian(1.0, 0.5).sample(lat);
        let config = SpdeConfig { kappa: 0.0, dt: 1e-4, noise_seed: 0 };
        let path = simulate(&env, &config, &[0.25], std::slice::from_ref(&phi), &mut replica_rng(0, 0)).unwrap();
        let exact = lattice_pair(
            &Semigroup::new(&env, SemigroupBackend::dense()).unwrap().apply(&dirac(lat), 0.25).unwrap(),
            &phi,
        )
        .unwrap();
        assert!((path.path.pairings[0][0] - exact).abs() < 1e-3 * exact.abs());
        assert_eq!(path.clipped_mass, 0.0);
    }

    #[test]
    fn steps_stay_nonnegative_and_mean_is_preserved() {
        let lat = LatticeBox::periodic(1, 4, 4).unwrap();
        let env = Environment::zero(lat);
        let config = SpdeConfig { kappa: 1.0, dt: 1.0 / 256.0, noise_seed: 4 };
        let one = Field::constant(lat, 1.0);
        let paths = simulate_ensemble(&env, &config, &[0.05], &[one], 4000, None).unwrap();
        let masses: Vec<f64> = paths.iter().map(|p| p.path.pairings[0][0]).collect();
        // clipping adds mass; it is rare at this horizon
        let clipped: f64 = paths.iter().map(|p| p.clipped_mass).sum::<f64>() / paths.len() as f64;
        let stats = SampleStats::from_samples(&masses);
        assert!(stats.mean_z(1.0 + clipped) < 3.0);
        let mut rng = replica_rng(1, 1);
        let mut mu = dirac(lat);
        for _ in 0..50 {
            mu = spde_step(&mu, &env, 1.0, 1.0 / 64.0, &mut rng).unwrap().0;
            assert!(mu.min() >= 0.0);
        }
    }
}
