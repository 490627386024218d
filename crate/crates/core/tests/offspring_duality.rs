//! End-to-end checks of the critical-offspring mode in two dimensions:
//! Monte Carlo against the exact dual and the mean identity.

use rsbm_core::dual::{exact_log_laplace, DualStepping};
use rsbm_core::environment::{sample_environment, EnvironmentSpec, PotentialLaw};
use rsbm_core::pam::{Semigroup, SemigroupBackend};
use rsbm_core::particle::{init_state, simulate_ensemble, BranchingSpec, RunOptions};
use rsbm_core::rng::Ensemble;
use rsbm_core::stats::SampleStats;
use rsbm_core::{LatticeBox, TestFunction};

#[test]
fn offspring_mode_matches_exact_dual_and_mean() {
    let env = sample_environment(&EnvironmentSpec {
        law: PotentialLaw::CenteredUniform,
        lattice: LatticeBox::periodic(2, 2, 2).unwrap(),
        seed: 5,
    })
    .unwrap();
    let lat = *env.lattice();
    let spec = BranchingSpec::offspring(1.0, vec![0.25, 0.5, 0.25]).unwrap();
    let phi = TestFunction::gaussian(1.0, 0.5).sample(lat);
    let t = 0.25;
    let paths = simulate_ensemble(
        &init_state(lat, 1.0),
        &env,
        &spec,
        RunOptions::default(),
        &[t],
        std::slice::from_ref(&phi),
        &Ensemble::new(8000, 77),
    )
    .unwrap();
    let paths: Vec<_> = paths.into_iter().map(|p| p.unwrap()).collect();

    let laplace: Vec<f64> = paths.iter().map(|p| (-p.pairings[0][0]).exp()).collect();
    let dual = exact_log_laplace(&env, &phi, t, &spec, &DualStepping::default()).unwrap();
    let z = SampleStats::from_samples(&laplace).mean_z(dual.laplace_functional(spec.initial_count(2)));
    assert!(z < 3.0, "Laplace functional z = {z}");

    let means: Vec<f64> = paths.iter().map(|p| p.measure(0, 0)).collect();
    let target = Semigroup::new(&env, SemigroupBackend::dense())
        .unwrap()
        .apply(&phi, t)
        .unwrap()
        .at_origin();
    let z = SampleStats::from_samples(&means).mean_z(target);
    assert!(z < 3.0, "mean z = {z}");
}
