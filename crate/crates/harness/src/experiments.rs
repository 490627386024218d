//! Experiment runners. Each writes CSV data into the output directory and
//! returns its checks; [`run_experiment`] adds the summary and provenance.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rsbm_core::besov::{pam_enhancement, BesovParams, LittlewoodPaley};
use rsbm_core::dual::{duality_gap_study, exact_log_laplace, fkpp_solve, DualStepping, GapStudy};
use rsbm_core::io::{write_measure_paths, write_norm_probes, NormProbe};
use rsbm_core::pam::{moment_hierarchy, variance_functional, Semigroup, TimeGrid};
use rsbm_core::particle::{init_state, simulate_ensemble, MeasurePath, ParticleState, RunOptions};
use rsbm_core::rng::Ensemble;
use rsbm_core::spde1d::{self, SpdeConfig};
use rsbm_core::spectral::{growth_study, persistence_experiment, seed_with_positive_eigenvalue, PersistenceConfig};
use rsbm_core::stats::{median, z_score, SampleStats};
use rsbm_core::{Field, WeightSpec};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, HarnessResult};
use crate::report::{write_json, Check, Provenance, Summary};

/// Gate for Monte Carlo comparisons, in standard errors.
pub const Z_GATE: f64 = 3.0;
/// Largest tolerated fraction of aborted replicas.
pub const MAX_ABORT_FRACTION: f64 = 0.01;
/// Seeds tried when looking for an environment with `λ₁ > 0`.
const EIGEN_SEARCH_TRIES: u64 = 1000;
const MOMENT_GRID_STEPS: usize = 1024;
const PERSISTENCE_THRESHOLD: f64 = 0.1;
/// Hölder regularity below the critical exponent used by the norm probes.
const NORM_EPSILON: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Files written by one run, plus per-replica failures.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    aborts: Vec<(String, u64, String)>,
}

impl Outputs {
    fn csv(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> HarnessResult<()>) -> HarnessResult<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Keeps the successful replicas; fails when more than 1% aborted.
    fn replicas(&mut self, label: &str, results: Vec<rsbm_core::Result<MeasurePath>>) -> HarnessResult<Vec<MeasurePath>> {
        let total = results.len();
        let mut ok = Vec::with_capacity(total);
        for (r, result) in results.into_iter().enumerate() {
            match result {
                Ok(path) => ok.push(path),
                Err(e) => self.aborts.push((label.to_string(), r as u64, e.to_string())),
            }
        }
        let aborted = total - ok.len();
        if aborted as f64 > MAX_ABORT_FRACTION * total as f64 {
            return Err(HarnessError::Experiment(format!(
                "{aborted} of {total} replicas aborted in {label} (limit 1%)"
            )));
        }
        if ok.len() < 2 {
            return Err(HarnessError::Experiment(format!("fewer than two replicas completed in {label}")));
        }
        Ok(ok)
    }

    fn write_aborts(&mut self) -> HarnessResult<()> {
        if self.aborts.is_empty() {
            return Ok(());
        }
        let aborts = std::mem::take(&mut self.aborts);
        self.csv("aborts.csv", |w| {
            writeln!(w, "ensemble,replica,error")?;
            for (label, r, e) in &aborts {
                writeln!(w, "{label},{r},\"{}\"", e.replace('"', "'"))?;
            }
            Ok(())
        })
    }
}

/// Runs the configured experiment and writes `summary.json`,
/// `provenance.json` and the effective `config.toml` next to the data.
pub fn run_experiment(config: &ExperimentConfig) -> HarnessResult<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir)?;
    let mut out = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
        aborts: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads().unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Experiment(format!("thread pool: {e}")))?;
    let result = pool.install(|| dispatch(config, &mut out));
    out.write_aborts()?;
    let checks = result?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    let summary = Summary {
        experiment: config.experiment.name().to_string(),
        config_hash: config.hash(),
        checks,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("provenance.json"), &Provenance::new(config, out.files.clone()))?;
    Ok(RunOutcome { dir, summary })
}

fn dispatch(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    match config.experiment {
        ExperimentKind::Lln => lln(config, out),
        ExperimentKind::Duality => duality(config, out),
        ExperimentKind::Moments => moments(config, out),
        ExperimentKind::Variance => variance(config, out),
        ExperimentKind::Persistence => persistence(config, out),
        ExperimentKind::EigenGrowth => eigen_growth(config, out),
        ExperimentKind::AssumptionNorms => assumption_norms(config, out),
        ExperimentKind::SpdeCompare => spde_compare(config, out),
    }
}

fn ensemble(config: &ExperimentConfig) -> Ensemble {
    // the surrounding pool already carries the thread limit
    Ensemble::new(config.mc.replicas, config.mc.base_seed)
}

fn particle_paths(
    config: &ExperimentConfig,
    out: &mut Outputs,
    label: &str,
    state: &ParticleState,
    env: &rsbm_core::environment::Environment,
    phi: &Field,
) -> HarnessResult<Vec<MeasurePath>> {
    let spec = config.branching()?;
    let results = simulate_ensemble(
        state,
        env,
        &spec,
        RunOptions::default(),
        &config.obs_times(),
        std::slice::from_ref(phi),
        &ensemble(config),
    )?;
    out.replicas(label, results)
}

fn write_paths(out: &mut Outputs, name: &str, paths: &[MeasurePath]) -> HarnessResult<()> {
    out.csv(name, |w| Ok(write_measure_paths(paths, w)?))
}

/// Per-n error of the mean against the PAM solution and the sample variance.
fn lln(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let side = config.side()?;
    let spec = config.branching()?;
    let times = config.obs_times();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut final_variances = Vec::new();
    for n in config.scales() {
        let env = config.environment_at(n, side, config.environment.seed)?;
        let lat = *env.lattice();
        let phi = config.test_function().sample(lat);
        let paths = particle_paths(config, out, &format!("n={n}"), &init_state(lat, spec.rho), &env, &phi)?;
        write_paths(out, &format!("paths_n{n}.csv"), &paths)?;
        let semigroup = Semigroup::new(&env, config.backend()?)?;
        for (k, &t) in times.iter().enumerate() {
            let values: Vec<f64> = paths.iter().map(|p| p.measure(k, 0)).collect();
            let stats = SampleStats::from_samples(&values);
            let target = semigroup.apply(&phi, t)?.at_origin();
            let functional = if t > 0.0 { variance_functional(&semigroup, &phi, t, &spec)? } else { 0.0 };
            rows.push((n, t, stats, target, functional));
            if k + 1 == times.len() {
                checks.push(Check::below(format!("mean_z_n{n}"), stats.mean_z(target), Z_GATE));
                final_variances.push(stats.variance);
            }
        }
    }
    out.csv("lln.csv", |w| {
        writeln!(w, "n,time,mean,se_mean,target,error,variance,se_variance,variance_functional")?;
        for (n, t, s, target, functional) in &rows {
            writeln!(
                w,
                "{n},{t},{},{},{target},{},{},{},{functional}",
                s.mean,
                s.se_mean,
                (s.mean - target).abs(),
                s.variance,
                s.se_variance
            )?;
        }
        Ok(())
    })?;
    checks.push(Check::holds(
        "variance_decreasing_in_n",
        final_variances.windows(2).all(|w| w[1] < w[0]),
    ));
    Ok(checks)
}

/// Duality gap between the exact finite-n dual and the FKPP dual.
fn duality(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let study = GapStudy {
        law: config.law()?,
        dim: config.lattice.d,
        side: config.side()?,
        n_grid: config.scales(),
        seeds: config.env_seeds(),
        t: config.time.t_end,
        phi: config.test_function(),
        births: true,
        dual: config.dual_spec(1.0)?,
        stepping: DualStepping {
            backend: config.backend()?,
            ..DualStepping::default()
        },
    };
    let report = duality_gap_study(&study)?;
    out.csv("gap.csv", |w| {
        writeln!(w, "n,seed,delta,h0,u0")?;
        for r in &report.rows {
            writeln!(w, "{},{},{},{},{}", r.n, r.seed, r.delta, r.h0, r.u0)?;
        }
        Ok(())
    })?;
    out.csv("gap_medians.csv", |w| {
        writeln!(w, "n,median_delta")?;
        for (n, m) in &report.medians {
            writeln!(w, "{n},{m}")?;
        }
        Ok(())
    })?;
    let first = report.medians.first().expect("grid has two points").1;
    let last = report.medians.last().expect("grid has two points").1;
    Ok(vec![Check::below("median_gap_last_over_first", last / first, 1.0)])
}

/// Single-particle moments `E[(u₁, φ)^p]` against `n^{ϱ(p-1)} m^p(t, 0)`.
fn moments(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let n = config.scale()?;
    let spec = config.branching()?;
    let t = config.time.t_end;
    let env = config.environment_at(n, config.side()?, config.environment.seed)?;
    let lat = *env.lattice();
    let phi = config.test_function().sample(lat);
    let single = ParticleState::concentrated(lat, lat.origin(), 1)?;
    let paths = particle_paths(config, out, "single", &single, &env, &phi)?;
    let last = config.obs_times().len() - 1;
    let semigroup = Semigroup::new(&env, config.backend()?)?;
    let hierarchy = moment_hierarchy(&semigroup, &phi, 2, spec.rho, &TimeGrid::uniform(t, MOMENT_GRID_STEPS)?)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for p in 1..=2usize {
        let samples: Vec<f64> = paths.iter().map(|q| q.pairings[last][0].powi(p as i32)).collect();
        let stats = SampleStats::from_samples(&samples);
        let target = (n as f64).powf(spec.rho * (p as f64 - 1.0)) * hierarchy.final_level(p).at_origin();
        let z = stats.mean_z(target);
        checks.push(Check::below(format!("moment_z_p{p}"), z, Z_GATE));
        rows.push((p, stats, target, z));
    }
    out.csv("moments.csv", |w| {
        writeln!(w, "p,time,mc_mean,se_mean,target,z")?;
        for (p, s, target, z) in &rows {
            writeln!(w, "{p},{t},{},{},{target},{z}", s.mean, s.se_mean)?;
        }
        Ok(())
    })?;
    Ok(checks)
}

/// Sample variance of `⟨μ_t, φ⟩` against the variance functional.
fn variance(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let n = config.scale()?;
    let spec = config.branching()?;
    let env = config.environment_at(n, config.side()?, config.environment.seed)?;
    let lat = *env.lattice();
    let phi = config.test_function().sample(lat);
    let paths = particle_paths(config, out, "variance", &init_state(lat, spec.rho), &env, &phi)?;
    write_paths(out, "paths.csv", &paths)?;
    let semigroup = Semigroup::new(&env, config.backend()?)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (k, &t) in config.obs_times().iter().enumerate() {
        let values: Vec<f64> = paths.iter().map(|p| p.measure(k, 0)).collect();
        let stats = SampleStats::from_samples(&values);
        let functional = if t > 0.0 { variance_functional(&semigroup, &phi, t, &spec)? } else { 0.0 };
        let z = stats.variance_z(functional);
        if t > 0.0 {
            checks.push(Check::below(format!("variance_z_t{t}"), z, Z_GATE));
        }
        rows.push((t, stats, functional, z));
    }
    out.csv("variance.csv", |w| {
        writeln!(w, "time,mean,mc_variance,se_variance,functional,z")?;
        for (t, s, f, z) in &rows {
            writeln!(w, "{t},{},{},{},{f},{z}", s.mean, s.variance, s.se_variance)?;
        }
        Ok(())
    })?;
    Ok(checks)
}

/// `E(t) = e^{-λ₁ t} ⟨μ^L_t, e₁⟩` for the killed system in the first
/// environment (from the configured seed on) with `λ₁ > 0`.
fn persistence(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let n = config.scale()?;
    let side = config.side()?;
    let lattice = config.lattice_at(n, side)?;
    let (seed, env) = seed_with_positive_eigenvalue(config.law()?, lattice, side, config.environment.seed, EIGEN_SEARCH_TRIES)?
        .ok_or_else(|| {
            HarnessError::Experiment(format!(
                "no environment with positive principal eigenvalue in seeds {}..{}",
                config.environment.seed,
                config.environment.seed + EIGEN_SEARCH_TRIES
            ))
        })?;
    let report = persistence_experiment(
        &env,
        &PersistenceConfig {
            side,
            branching: config.branching()?,
            times: config.obs_times(),
            ensemble: ensemble(config),
            threshold: PERSISTENCE_THRESHOLD,
            proxy_rate: None,
        },
    )?;
    out.csv("persistence.csv", |w| {
        writeln!(w, "replica,time,value,population")?;
        for r in &report.rows {
            writeln!(w, "{},{},{},{}", r.replica, r.t, r.value, r.population)?;
        }
        Ok(())
    })?;
    out.csv("persistence_stats.csv", |w| {
        writeln!(w, "seed,lambda1,e1_origin,time,mean,se_mean")?;
        for (t, s) in report.times.iter().zip(&report.stats) {
            writeln!(w, "{seed},{},{},{t},{},{}", report.lambda1, report.e1_origin, s.mean, s.se_mean)?;
        }
        Ok(())
    })?;
    Ok(vec![
        Check::below("max_pairwise_mean_z", report.max_pair_z, Z_GATE),
        Check::above(
            "persistence_fraction_z",
            z_score(report.persistence_fraction, report.persistence_se),
            Z_GATE,
        ),
    ])
}

/// Normalized principal eigenvalue over nested boxes.
fn eigen_growth(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let sides = config.lattice.side_grid.clone().expect("validated");
    let report = growth_study(config.law()?, config.lattice.d, config.scale()?, &sides, &config.env_seeds())?;
    out.csv("growth.csv", |w| {
        writeln!(w, "seed,M,lambda1,normalized")?;
        for r in &report.rows {
            writeln!(w, "{},{},{},{}", r.seed, r.side, r.lambda1, r.normalized)?;
        }
        Ok(())
    })?;
    out.csv("growth_medians.csv", |w| {
        writeln!(w, "M,median_normalized")?;
        for (side, m) in &report.medians {
            writeln!(w, "{side},{m}")?;
        }
        Ok(())
    })?;
    Ok(vec![
        Check::below("normalized_median_spread", report.spread, 0.15),
        Check::holds("lambda1_monotone_in_M", report.monotone),
    ])
}

/// Hölder norms of the potential and its enhancement across scales, and
/// the spatial mean of the resonant product against `c_n`.
fn assumption_norms(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let side = config.side()?;
    let d = config.lattice.d as f64;
    let weight = WeightSpec::unit();
    let xi_params = BesovParams::holder(-d / 2.0 - NORM_EPSILON, weight);
    let x_params = BesovParams::holder(2.0 - d / 2.0 - NORM_EPSILON, weight);
    let product_params = BesovParams::holder(-2.0 * NORM_EPSILON, weight);
    let mut probes = Vec::new();
    for n in config.scales() {
        for seed in config.env_seeds() {
            let env = config.environment_at(n, side, seed)?;
            let lp = LittlewoodPaley::new(*env.lattice())?;
            let e = pam_enhancement(&env)?;
            let mean = e.resonant.values().iter().sum::<f64>() / e.resonant.values().len() as f64;
            let mut probe = |quantity: &str, value: f64| {
                probes.push(NormProbe {
                    quantity: quantity.to_string(),
                    dim: config.lattice.d,
                    n,
                    side,
                    seed,
                    value,
                })
            };
            probe("xi_holder", lp.besov_norm(env.xi(), &xi_params)?);
            probe("x_holder", lp.besov_norm(&e.x, &x_params)?);
            probe("renormalized_product_holder", lp.besov_norm(&e.renormalized, &product_params)?);
            probe("resonant_mean_over_cn", mean / env.renormalization());
        }
    }
    out.csv("norms.csv", |w| Ok(write_norm_probes(&probes, w)?))?;
    let scales = config.scales();
    let median_of = |quantity: &str, n: usize| {
        let v: Vec<f64> = probes
            .iter()
            .filter(|p| p.quantity == quantity && p.n == n)
            .map(|p| p.value)
            .collect();
        median(&v)
    };
    let (lo, hi) = (scales[0], *scales.last().expect("non-empty"));
    let mut checks = vec![Check::below(
        format!("resonant_mean_rel_error_n{hi}"),
        (median_of("resonant_mean_over_cn", hi) - 1.0).abs(),
        0.10,
    )];
    if hi > lo {
        for quantity in ["xi_holder", "x_holder", "renormalized_product_holder"] {
            checks.push(Check::below(
                format!("{quantity}_growth_n{lo}_to_n{hi}"),
                median_of(quantity, hi) / median_of(quantity, lo),
                2.0,
            ));
        }
    }
    Ok(checks)
}

/// Laplace functional of the particle system against the d = 1 SPDE at
/// matched environment, with both exact duals for reference.
fn spde_compare(config: &ExperimentConfig, out: &mut Outputs) -> HarnessResult<Vec<Check>> {
    let n = config.scale()?;
    let t = config.time.t_end;
    let spec = config.branching()?;
    let env = config.environment_at(n, config.side()?, config.environment.seed)?;
    let lat = *env.lattice();
    let phi = config.test_function().sample(lat);
    let last = config.obs_times().len() - 1;
    let paths = particle_paths(config, out, "particles", &init_state(lat, spec.rho), &env, &phi)?;
    let particle: Vec<f64> = paths.iter().map(|p| (-p.measure(last, 0)).exp()).collect();
    let dx = 1.0 / n as f64;
    let spde_config = SpdeConfig {
        kappa: 2.0 * env.nu(),
        dt: config.solver.dt_factor * dx * dx,
        noise_seed: config.mc.base_seed.wrapping_add(1),
    };
    let spde_paths = spde1d::simulate_ensemble(&env, &spde_config, &config.obs_times(), std::slice::from_ref(&phi), config.mc.replicas, None)?;
    let spde: Vec<f64> = spde_paths.iter().map(|p| (-p.path.pairings[last][0]).exp()).collect();
    let clipped = spde_paths.iter().map(|p| p.clipped_mass).sum::<f64>() / spde_paths.len() as f64;
    let a = SampleStats::from_samples(&particle);
    let b = SampleStats::from_samples(&spde);
    let z = z_score(a.mean - b.mean, (a.se_mean.powi(2) + b.se_mean.powi(2)).sqrt());

    let count = spec.initial_count(n);
    let stepping = DualStepping {
        backend: config.backend()?,
        ..DualStepping::default()
    };
    let exact = exact_log_laplace(&env, &phi.scale(1.0 / count as f64), t, &spec, &stepping)?.laplace_functional(count);
    let semigroup = Semigroup::new(&env, config.backend()?)?;
    let limit = (-fkpp_solve(&semigroup, &phi, t, &config.dual_spec(spde_config.kappa)?)?.value.at_origin()).exp();
    out.csv("spde_compare.csv", |w| {
        writeln!(w, "source,time,mean,se_mean,replicas,reference")?;
        writeln!(w, "particle,{t},{},{},{},{exact}", a.mean, a.se_mean, a.count)?;
        writeln!(w, "spde,{t},{},{},{},{limit}", b.mean, b.se_mean, b.count)?;
        Ok(())
    })?;
    out.csv("spde_clipping.csv", |w| {
        writeln!(w, "dt,mean_clipped_mass")?;
        writeln!(w, "{},{clipped}", spde_config.dt)?;
        Ok(())
    })?;
    Ok(vec![
        Check::below("laplace_functional_z", z, Z_GATE),
        Check::below("particle_vs_exact_dual_z", a.mean_z(exact), Z_GATE),
        Check::below("spde_vs_fkpp_dual_z", b.mean_z(limit), Z_GATE),
    ])
}
