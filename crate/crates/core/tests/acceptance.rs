//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances and scales are pinned below.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use levy_hjm::fields::{JumpField, TimeField};
use levy_hjm::girsanov::{density_path, q_compensator, reciprocal_density, transform_representation, GeneratingPair};
use levy_hjm::hedging::{replication_equations_residual, solve_replication_at, ClaimContext, ClaimRepresentation, Portfolio};
use levy_hjm::hjm::{
    discounted_martingale_test, discounted_price_sde_check, hjm_alpha, DriftMode, InitialCurve, MarketModel,
    MartingaleMeasureSpec, VolatilitySpec,
};
use levy_hjm::incompleteness::incompleteness_experiment;
use levy_hjm::jump_calculus::{estimate_covariation_q, estimate_isometry, GeneralIntegrand, IntegrandClass, MeasureTag};
use levy_hjm::levy::{jump_counting, CadlagPath, EventKind, History, LevyMeasure, LevyPath, LevyTriplet, TimeGrid};
use levy_hjm::mc::{try_map_indices, variance_estimate, Estimate, McConfig};
use levy_hjm::runner::{run, Command};
use levy_hjm::scenario::Scenario;
use levy_hjm::sets::JumpSet;
use levy_hjm::Result;

const PATHS: usize = 100_000;
const K_SE: f64 = 4.0;
const DENSITY_TOL: f64 = 1e-10;
const RECIPROCAL_TOL: f64 = 1e-8;
const RECONSTRUCTION_TOL: f64 = 1e-8;
const ALPHA_TOL: f64 = 1e-12;
const REPLICATION_EQ2_TOL: f64 = 1e-10;
const REPLICATION_EQ3_FLOOR: f64 = 0.1;
const DRIFT_SHIFT: f64 = 0.05;
/// Allowed band for the error ratio under step halving.
const HALVING_BAND: (f64, f64) = (1.6, 2.4);
const CERTIFICATE_GROWTH: f64 = 1e3;
/// Residual floor for the counterexample claim, pinned from a 1000-path pilot
/// of the default scenario (finest residual 0.67) at about a third of it.
const TAU_STAR: f64 = 0.25;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn grid(steps: usize) -> Arc<TimeGrid> {
    Arc::new(TimeGrid::uniform(1.0, steps).unwrap())
}

fn triplet(a: f64, q: f64, nu: LevyMeasure) -> LevyTriplet {
    LevyTriplet::new(a, q, nu).unwrap()
}

fn z(e: &Estimate, target: f64) -> f64 {
    e.z_score(target)
}

fn poisson_law() -> Result<Outcome> {
    let t = triplet(0.0, 0.0, LevyMeasure::atomic(&[(1.0, 2.0)])?);
    let mc = McConfig::new(PATHS, 101, grid(1));
    let counts = mc.run(&t, |p| Ok(jump_counting(p, 1.0, &JumpSet::point(1.0))? as f64))?;
    let (mean, var) = (Estimate::from_samples(&counts), variance_estimate(&counts));
    outcome(
        mean.within(2.0, K_SE) && var.within(2.0, K_SE),
        format!("mean {:.5} (z {:.2}), variance {:.5} (z {:.2})", mean.mean, z(&mean, 2.0), var.mean, z(&var, 2.0)),
    )
}

fn isometry_under_p() -> Result<Outcome> {
    let two_atoms = JumpField::homogeneous("1{1} + 2*1{-0.5}", |y| {
        if y == 1.0 {
            1.0
        } else if y == -0.5 {
            2.0
        } else {
            0.0
        }
    });
    let battery = vec![
        ("3*1{1}, atomic", LevyMeasure::atomic(&[(1.0, 2.0)])?, JumpField::indicator(JumpSet::point(1.0), 3.0), Some(18.0)),
        ("two atoms", LevyMeasure::atomic(&[(1.0, 1.0), (-0.5, 3.0)])?, two_atoms, Some(13.0)),
        (
            "1[0.5, 2], double exp",
            LevyMeasure::double_exponential(2.0, 0.6, 2.0, 3.0)?,
            JumpField::indicator(JumpSet::closed(0.5, 2.0), 1.0),
            None,
        ),
        ("y, double exp", LevyMeasure::double_exponential(2.0, 0.6, 2.0, 3.0)?, JumpField::linear(1.0), None),
        (
            "y^2, uniform",
            LevyMeasure::truncated_uniform(-1.0, 2.0, 0.1, 3.0)?,
            JumpField::homogeneous("y^2", |y| y * y),
            None,
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (label, nu, g, exact)) in battery.into_iter().enumerate() {
        let t = triplet(0.0, 0.0, nu);
        let mc = McConfig::new(PATHS, 200 + k as u64, grid(1));
        let r = estimate_isometry(&GeneralIntegrand::new(g, IntegrandClass::Psi2), &t, MeasureTag::P, &mc)?;
        let exact_ok = exact.is_none_or(|v| (r.rhs - v).abs() <= 1e-12 * v);
        pass &= r.agrees(K_SE) && exact_ok;
        parts.push(format!("{label}: {:.4}/{:.4} z {:.2}", r.lhs, r.rhs, (r.lhs - r.rhs) / r.se));
    }
    outcome(pass, parts.join("; "))
}

fn girsanov_tilt() -> Result<Outcome> {
    let (theta, lambda) = (0.5, 2.0);
    let t = triplet(0.0, 0.0, LevyMeasure::atomic(&[(1.0, lambda)])?);
    let pair = GeneratingPair::tilt(theta);
    let mc = McConfig::new(PATHS, 301, grid(16));
    let rows = mc.run(&t, |p| {
        let d = density_path(&pair, &t, p)?;
        let mut worst: f64 = 0.0;
        for (k, &time) in d.rho.times.iter().enumerate() {
            let after = p.jumps().iter().filter(|j| j.time <= time).count() as f64;
            let before = p.jumps().iter().filter(|j| j.time < time).count() as f64;
            let exact = |n: f64| (theta * n - lambda * time * theta.exp_m1()).exp();
            worst = worst.max((d.rho.right[k] - exact(after)).abs()).max((d.rho.left[k] - exact(before)).abs());
        }
        Ok((worst, d.rho.terminal()))
    })?;
    let worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let mean = Estimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    outcome(
        worst <= DENSITY_TOL && mean.within(1.0, K_SE),
        format!("pathwise max gap {worst:.2e}, E[rho_1] {:.5} (z {:.2})", mean.mean, z(&mean, 1.0)),
    )
}

fn reciprocal_identity() -> Result<Outcome> {
    let t = triplet(0.05, 0.0, LevyMeasure::double_exponential(3.0, 0.4, 2.5, 2.0)?);
    let psi = JumpField::homogeneous("0.3 tanh(y)", |y| 0.3 * y.tanh());
    let pair = GeneratingPair::new(TimeField::zero(), psi, 0.3)?;
    let mc = McConfig::new(2000, 401, grid(64));
    let gaps = mc.run(&t, |p| {
        let d = density_path(&pair, &t, p)?;
        let r = reciprocal_density(&pair, &t, p, &d)?;
        Ok((0..r.len())
            .map(|k| (r.right[k] * d.rho.right[k] - 1.0).abs().max((r.left[k] * d.rho.left[k] - 1.0).abs()))
            .fold(0.0, f64::max))
    })?;
    let worst = gaps.into_iter().fold(0.0, f64::max);
    outcome(worst <= RECIPROCAL_TOL, format!("max |rho * (1/rho) - 1| = {worst:.2e} over 2000 paths"))
}

fn covariation_under_q() -> Result<Outcome> {
    let t = triplet(0.0, 0.0, LevyMeasure::double_exponential(2.0, 0.6, 2.0, 3.0)?);
    let psi = JumpField::homogeneous("0.4 * 1{y > 0} - 0.2", |y| if y > 0.0 { 0.4 } else { -0.2 }).with_breaks(vec![0.0]);
    let pair = GeneratingPair::new(TimeField::zero(), psi, 0.4)?;
    let (a, b) = (JumpSet::closed(0.25, 2.0), JumpSet::closed(-2.0, -0.25));
    let mc = McConfig::new(PATHS, 501, grid(8));
    let disjoint = estimate_covariation_q(&a, &b, &t, &pair, 1.0, &mc)?;
    let equal = estimate_covariation_q(&a, &a, &t, &pair, 1.0, &mc)?;
    outcome(
        disjoint.agrees(K_SE) && disjoint.predicted.mean == 0.0 && equal.agrees(K_SE),
        format!(
            "disjoint {:.5} (se {:.5}); equal {:.5} vs {:.5} (se {:.5})",
            disjoint.mc.mean, disjoint.mc.se, equal.mc.mean, equal.predicted.mean, equal.mc.se
        ),
    )
}

/// `pi(t, A) - t ∫_A e^psi nu` on the event timeline.
fn compensated_q_count(p: &LevyPath, set: &JumpSet, rate: f64) -> CadlagPath {
    let mut count = 0.0;
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for e in p.events() {
        left.push(count - rate * e.time);
        if let EventKind::Jump(j) = e.kind {
            if set.contains(p.jumps()[j].size) {
                count += 1.0;
            }
        }
        right.push(count - rate * e.time);
    }
    CadlagPath { times: p.event_times(), left, right, grid_index: p.grid_events().to_vec(), log_linear: false }
}

fn representation_round_trip() -> Result<Outcome> {
    let t = triplet(0.0, 0.0, LevyMeasure::double_exponential(2.0, 0.6, 2.0, 3.0)?);
    let theta = 0.3;
    let pair = GeneratingPair::tilt(theta);
    let set = JumpSet::closed(0.5, 2.0);
    let rate = q_compensator(&pair, t.nu(), 0.0, &set, &History::empty())?;
    let mc = McConfig::new(12, 601, grid(16));
    let errs = mc.run(&t, |p| {
        let d = density_path(&pair, &t, p)?;
        let rho = Arc::new(d.rho.clone());
        let mut worst: f64 = 0.0;

        // M = 1: rho M = rho has integrand rho_- (e^psi - 1)
        let ones = CadlagPath::constant(p, 1.0);
        let r = Arc::clone(&rho);
        let psi_m = JumpField::adapted("rho_-(e^psi - 1)", move |s, _, past| r.before(s, past) * theta.exp_m1());
        worst = worst.max(transform_representation(&pair, &t, p, &d, &ones, &psi_m)?.reconstruction_error);

        // M = compensated Q-count of A
        let m = compensated_q_count(p, &set, rate);
        let (r, mm, a) = (Arc::clone(&rho), Arc::new(m.clone()), set.clone());
        let psi_m = JumpField::adapted("rho_-(M_-(e^psi - 1) + e^psi 1_A)", move |s, y, past| {
            let ind = if a.contains(y) { 1.0 } else { 0.0 };
            r.before(s, past) * (mm.before(s, past) * theta.exp_m1() + theta.exp() * ind)
        })
        .with_breaks(vec![0.5, 2.0]);
        worst = worst.max(transform_representation(&pair, &t, p, &d, &m, &psi_m)?.reconstruction_error);

        // M = 1/rho: rho M = 1 has integrand 0
        let inv = reciprocal_density(&pair, &t, p, &d)?;
        worst = worst.max(transform_representation(&pair, &t, p, &d, &inv, &JumpField::zero())?.reconstruction_error);
        Ok(worst)
    });
    match errs {
        Ok(e) => {
            let worst = e.into_iter().fold(0.0, f64::max);
            outcome(worst <= RECONSTRUCTION_TOL, format!("max reconstruction error {worst:.2e} over 3 cases x 12 paths"))
        }
        Err(e) => outcome(false, format!("transform failed: {e}")),
    }
}

fn drift_model(steps: usize, shift: f64) -> MarketModel {
    let t = triplet(0.02, 0.25, LevyMeasure::double_exponential(2.0, 0.6, 2.0, 3.0).unwrap());
    let spec = MartingaleMeasureSpec::new(t, GeneratingPair::tilt(0.1), VolatilitySpec::Exponential { sigma: 0.2, kappa: 0.5 })
        .unwrap();
    let mats = vec![0.125, 0.25, 0.5, 0.75, 1.0];
    MarketModel::new(spec, InitialCurve::Flat { rate: 0.03 }, mats, grid(steps), DriftMode::Hjm { shift }).unwrap()
}

fn hjm_drift() -> Result<Outcome> {
    let n = 20_000;
    let exact = drift_model(512, 0.0);
    let mc = McConfig::new(n, 701, Arc::clone(exact.grid()));
    let holds = discounted_martingale_test(&exact, &mc)?;
    let shifted = discounted_martingale_test(&drift_model(512, DRIFT_SHIFT), &mc)?;

    let (sigma, kappa) = (0.15, 0.8);
    let vol = VolatilitySpec::Exponential { sigma, kappa };
    let wiener = MartingaleMeasureSpec::new(triplet(0.0, 1.0, LevyMeasure::zero()), GeneratingPair::identity(), vol)?;
    let mut alpha_err: f64 = 0.0;
    for s in [0.0, 0.1, 0.35, 0.6] {
        for mat in [0.7, 1.0, 2.5] {
            let expected = vol.sigma(s, mat) * vol.big_sigma(s, mat);
            alpha_err = alpha_err.max((hjm_alpha(&wiener, s, mat)? - expected).abs());
        }
    }
    outcome(
        holds.holds(K_SE) && !holds.drift_detected(K_SE) && shifted.drift_detected(K_SE) && alpha_err <= ALPHA_TOL,
        format!(
            "max |z| {:.2} (hjm), {:.1} (shift {DRIFT_SHIFT}, detected {}); Wiener alpha error {alpha_err:.1e}; {n} paths x 512 steps",
            holds.max_abs_z(),
            shifted.max_abs_z(),
            shifted.drift_detected(K_SE)
        ),
    )
}

fn sde_consistency() -> Result<Outcome> {
    // Pure jump: the Euler factor for the compensator drift is first order.
    let t = triplet(0.0, 0.0, LevyMeasure::double_exponential(3.0, 0.5, 2.0, 2.0)?);
    let spec = MartingaleMeasureSpec::new(t, GeneratingPair::tilt(0.2), VolatilitySpec::Exponential { sigma: 0.3, kappa: 0.5 })?;
    let steps = [64usize, 128, 256, 512];
    let models: Vec<MarketModel> = steps
        .iter()
        .map(|&n| {
            MarketModel::new(spec.clone(), InitialCurve::Flat { rate: 0.03 }, vec![0.5, 1.0], grid(n), DriftMode::Hjm { shift: 0.0 })
        })
        .collect::<Result<_>>()?;
    let fine = McConfig::new(64, 801, grid(512));
    let errs = try_map_indices(fine.n_paths, |i| -> Result<Vec<f64>> {
        let path = fine.path(&spec.triplet, i);
        steps
            .iter()
            .zip(&models)
            .map(|(&n, m)| {
                let p = path.coarsen(512 / n)?;
                discounted_price_sde_check(&m.evolve(&p)?, m, &p)
            })
            .collect()
    })?;
    let mean: Vec<f64> = (0..steps.len()).map(|l| errs.iter().map(|e| e[l]).sum::<f64>() / errs.len() as f64).collect();
    let ratios: Vec<f64> = mean.windows(2).map(|w| w[0] / w[1]).collect();
    outcome(
        ratios.iter().all(|r| (HALVING_BAND.0..=HALVING_BAND.1).contains(r)),
        format!("mean discrepancy {:?}, ratios {:?}", mean.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(), ratios.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()),
    )
}

fn replication_split() -> Result<Outcome> {
    let make = |nu: LevyMeasure, q: f64, steps: usize| -> Result<MarketModel> {
        let pair = if nu.is_zero() { GeneratingPair::identity() } else { GeneratingPair::tilt(0.1) };
        let spec = MartingaleMeasureSpec::new(triplet(0.01, q, nu), pair, VolatilitySpec::Constant { sigma: 0.2 })?;
        MarketModel::new(spec, InitialCurve::Flat { rate: 0.02 }, vec![0.5, 1.0], grid(steps), DriftMode::Hjm { shift: 0.0 })
    };
    let wiener = make(LevyMeasure::zero(), 1.0, 64)?;
    let path = McConfig::new(1, 901, Arc::clone(wiener.grid())).path(&wiener.spec().triplet, 0);
    let surface = wiener.evolve(&path)?;
    let ctx = ClaimContext { path: &path, surface: &surface, model: &wiener, stop: 1.0 };
    let claim = ClaimRepresentation::new("0.3 + s", 0.0, |s, _| 0.3 + s, |_, _, _| 0.0, |_| Ok(0.0));
    let mut eq2: f64 = 0.0;
    for s in [0.1, 0.37, 0.8] {
        let c = solve_replication_at(&[1], &ctx, &claim, s, &[])?;
        let portfolio = Portfolio::new(vec![1], vec![TimeField::constant(c[0])], vec![c[0].abs()])?;
        eq2 = eq2.max(replication_equations_residual(&portfolio, &ctx, &claim, s, &[])?.eq2);
    }

    let atoms = make(LevyMeasure::atomic(&[(1.0, 1.0), (-1.0, 1.0)])?, 0.0, 16)?;
    let path = McConfig::new(1, 902, Arc::clone(atoms.grid())).path(&atoms.spec().triplet, 0);
    let surface = atoms.evolve(&path)?;
    let ctx = ClaimContext { path: &path, surface: &surface, model: &atoms, stop: 1.0 };
    let claim = ClaimRepresentation::jump_integral(&atoms, JumpSet::point(1.0), 1.0)?;
    let c = solve_replication_at(&[1], &ctx, &claim, 0.3, &[1.0, -1.0])?;
    let portfolio = Portfolio::new(vec![1], vec![TimeField::constant(c[0])], vec![c[0].abs()])?;
    let eq3 = replication_equations_residual(&portfolio, &ctx, &claim, 0.3, &[1.0, -1.0])?.max_eq3();
    outcome(
        eq2 <= REPLICATION_EQ2_TOL && eq3 >= REPLICATION_EQ3_FLOOR,
        format!("Wiener eq2 residual {eq2:.2e}; two atoms / one bond eq3 residual {eq3:.4}"),
    )
}

fn default_scenario() -> Scenario {
    Scenario::from_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml")).unwrap()
}

fn incompleteness_witness() -> Result<Outcome> {
    let s = default_scenario();
    let built = s.build()?;
    let inc = s.incompleteness.as_ref().expect("default scenario has an incompleteness section");
    let mc = McConfig::new(inc.n_paths.unwrap_or(s.n_paths), s.master_seed, Arc::clone(&built.grid));
    let r = incompleteness_experiment(&built.model, &inc.config, &mc)?;
    let growth = r.ratio.last().unwrap() / r.ratio[0];
    let tail = r.ratio[r.k_min.min(r.ratio.len() - 1)..].windows(2).all(|w| w[1] > w[0]);
    let (counter, control) = (*r.residuals_by_level.counterexample.last().unwrap(), *r.residuals_by_level.control.last().unwrap());
    outcome(
        growth > CERTIFICATE_GROWTH && tail && counter >= TAU_STAR && control <= TAU_STAR / 10.0,
        format!(
            "certificate growth {growth:.3e}, tail increasing from pair {} {tail}; finest residual {counter:.4} vs tau* {TAU_STAR}, control {control:.2e}",
            r.k_min + 1
        ),
    )
}

fn determinism() -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("levy-hjm-acceptance-{}", std::process::id()));
    let mut hashes = Vec::new();
    for threads in [1, 4] {
        let mut s = default_scenario();
        s.output_dir = Some(dir.join(format!("t{threads}")));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let manifest = pool.install(|| run(Command::All, &s))?;
        hashes.push(manifest.outputs);
    }
    let _ = std::fs::remove_dir_all(&dir);
    let same = hashes[0] == hashes[1];
    outcome(same && !hashes[0].is_empty(), format!("{} output files, identical hashes with 1 and 4 threads: {same}", hashes[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 11] = [
        ("poisson law of the jump measure", poisson_law),
        ("isometry under P", isometry_under_p),
        ("girsanov tilt", girsanov_tilt),
        ("reciprocal identity", reciprocal_identity),
        ("covariation under Q", covariation_under_q),
        ("representation round trip", representation_round_trip),
        ("hjm drift", hjm_drift),
        ("sde vs exponential consistency", sde_consistency),
        ("replication solvability split", replication_split),
        ("incompleteness witness", incompleteness_witness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
