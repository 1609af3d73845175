use std::sync::Arc;

use proptest::prelude::*;

use levy_hjm::fields::{JumpField, TimeField};
use levy_hjm::girsanov::{density_path, reciprocal_density, DensityEngine, GeneratingPair};
use levy_hjm::hjm::{DriftMode, InitialCurve, MarketModel, MartingaleMeasureSpec, VolatilitySpec};
use levy_hjm::jump_calculus::{Compensator, GeneralIntegrand, IntegrandClass, JumpIntegrator};
use levy_hjm::levy::{jump_counting, simulate_path, LevyMeasure, LevyTriplet, TimeGrid};
use levy_hjm::mc::{Estimate, Moments};
use levy_hjm::quadrature::{integrate, QuadConfig};
use levy_hjm::rng::RngStream;
use levy_hjm::runner::fmt_f64;
use levy_hjm::scenario::Scenario;
use levy_hjm::sets::JumpSet;

fn grid(steps: usize) -> Arc<TimeGrid> {
    Arc::new(TimeGrid::uniform(1.0, steps).unwrap())
}

fn jump_triplet(q: f64) -> LevyTriplet {
    LevyTriplet::new(0.03, q, LevyMeasure::double_exponential(2.5, 0.55, 2.0, 3.0).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_is_exact_on_cubics(c in prop::array::uniform4(-5.0f64..5.0), a in -3.0f64..0.0, b in 0.1f64..3.0) {
        let f = |x: f64| c[0] + x * (c[1] + x * (c[2] + x * c[3]));
        let prim = |x: f64| x * (c[0] + x * (c[1] / 2.0 + x * (c[2] / 3.0 + x * c[3] / 4.0)));
        let got = integrate(f, a, b, &QuadConfig::default()).unwrap();
        let exact = prim(b) - prim(a);
        prop_assert!((got - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), index in 0u64..1000) {
        let t = jump_triplet(0.5);
        let a = simulate_path(&t, grid(8), RngStream::new(seed, index));
        let b = simulate_path(&t, grid(8), RngStream::new(seed, index));
        let c = simulate_path(&t, grid(8), RngStream::new(seed, index + 1));
        prop_assert_eq!(a.z_values(), b.z_values());
        prop_assert_ne!(a.z_values(), c.z_values());
    }

    #[test]
    fn set_algebra_matches_membership(lo in -3.0f64..3.0, w in 0.0f64..2.0, lo2 in -3.0f64..3.0, w2 in 0.0f64..2.0, y in -4.0f64..4.0) {
        let (a, b) = (JumpSet::closed(lo, lo + w), JumpSet::open(lo2, lo2 + w2));
        prop_assert_eq!(a.union(&b).contains(y), a.contains(y) || b.contains(y));
        prop_assert_eq!(a.intersect(&b).contains(y), a.contains(y) && b.contains(y));
        if a.is_disjoint(&b) {
            prop_assert!(!(a.contains(y) && b.contains(y)));
        }
    }

    #[test]
    fn density_matches_its_sde(theta in -1.0f64..1.0, phi in -1.0f64..1.0, seed in any::<u64>()) {
        let t = jump_triplet(0.4);
        let pair = GeneratingPair::tilt(theta).with_phi(TimeField::constant(phi));
        let path = simulate_path(&t, grid(32), RngStream::new(seed, 0));
        let engine = DensityEngine::new(&pair, &t).unwrap();
        let rho = engine.density(&path).unwrap().rho;
        let sde = engine.density_sde(&path).unwrap();
        for k in 0..rho.len() {
            prop_assert!((rho.right[k] - sde.right[k]).abs() <= 1e-10 * rho.right[k]);
        }
    }

    #[test]
    fn reciprocal_inverts_density(theta in -1.5f64..1.5, seed in any::<u64>()) {
        let t = jump_triplet(0.0);
        let pair = GeneratingPair::tilt(theta);
        let path = simulate_path(&t, grid(16), RngStream::new(seed, 3));
        let d = density_path(&pair, &t, &path).unwrap();
        let r = reciprocal_density(&pair, &t, &path, &d).unwrap();
        for k in 0..r.len() {
            prop_assert!((r.right[k] * d.rho.right[k] - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn indicator_integral_is_count_minus_compensator(c in -3.0f64..3.0, lo in 0.2f64..1.0, w in 0.1f64..2.0, seed in any::<u64>()) {
        let t = jump_triplet(0.0);
        let set = JumpSet::closed(lo, lo + w);
        let g = GeneralIntegrand::new(JumpField::indicator(set.clone(), c), IntegrandClass::Psi1);
        let path = simulate_path(&t, grid(8), RngStream::new(seed, 7));
        let i = JumpIntegrator::new(&g, t.nu(), Compensator::Physical).unwrap().integrate(&path).unwrap();
        let count = jump_counting(&path, 1.0, &set).unwrap() as f64;
        let expected = c * (count - t.nu().mass(&set).unwrap());
        prop_assert!((i.terminal() - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn still_market_keeps_discounted_prices(rate in -0.02f64..0.08, seed in any::<u64>()) {
        let spec = MartingaleMeasureSpec::new(jump_triplet(0.3), GeneratingPair::tilt(0.2), VolatilitySpec::Zero).unwrap();
        let model = MarketModel::new(spec, InitialCurve::Flat { rate }, vec![0.5, 1.0], grid(16), DriftMode::Hjm { shift: 0.0 }).unwrap();
        let path = simulate_path(&model.spec().triplet, Arc::clone(model.grid()), RngStream::new(seed, 0));
        let s = model.evolve(&path).unwrap();
        for m in 0..2 {
            for i in 0..model.grid().len() {
                prop_assert!((s.discounted_at_grid(i, m) - model.initial_discounted(m)).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn chunked_moments_do_not_depend_on_split(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut whole = Moments::new(1);
        let (mut a, mut b) = (Moments::new(1), Moments::new(1));
        for (i, &x) in xs.iter().enumerate() {
            whole.push(&[x]);
            if i < cut { a.push(&[x]) } else { b.push(&[x]) }
        }
        a.merge(&b);
        let (e1, e2) = (whole.estimate(0), a.estimate(0));
        prop_assert_eq!(e1.n, e2.n);
        prop_assert!((e1.mean - e2.mean).abs() <= 1e-9 * (1.0 + e1.mean.abs()));
        let direct = Estimate::from_samples(&xs);
        prop_assert!((direct.se - e1.se).abs() <= 1e-6 * (1.0 + direct.se));
    }

    #[test]
    fn csv_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn scenario_survives_toml_round_trip(q in 0.0f64..2.0, seed in 0..=i64::MAX as u64, steps in 1usize..64, rate in -0.05f64..0.1) {
        let text = format!(r#"
n_paths = 10
master_seed = {seed}
[grid]
horizon = 1.0
steps = {steps}
[levy]
a = 0.0
q = {q:?}
[levy.measure]
kind = "atomic"
atoms = [{{ location = 1.0, rate = 2.0 }}]
[market]
maturities = [1.0]
curve = {{ kind = "flat", rate = {rate:?} }}
vol = {{ kind = "constant", sigma = 0.1 }}
"#);
        let s = Scenario::from_toml_str(&text).unwrap();
        let back = Scenario::from_toml_str(&toml::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(&s, &back);
        prop_assert!(s.build().is_ok());
    }
}
