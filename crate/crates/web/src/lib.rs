//! Browser demo. Each export takes a JSON request and returns a JSON reply;
//! the plain functions underneath are what the native tests exercise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use levy_hjm::girsanov::GeneratingPair;
use levy_hjm::hjm::{discounted_martingale_test, DriftMode, InitialCurve, MarketModel, MartingaleMeasureSpec, VolatilitySpec};
use levy_hjm::incompleteness::{find_concentration_witness, moment_certificate, CounterexampleG, SurfaceSnapshot};
use levy_hjm::levy::{LevyMeasure, LevyTriplet, TimeGrid};
use levy_hjm::mc::McConfig;
use levy_hjm::{Error, Result};

const MAX_PATHS: usize = 20_000;
const MAX_STEPS: usize = 1024;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jumps {
    pub rate: f64,
    pub p: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
}

impl Default for Jumps {
    fn default() -> Self {
        Self { rate: 2.0, p: 0.6, eta_plus: 2.0, eta_minus: 3.0 }
    }
}

impl Jumps {
    fn measure(&self) -> Result<LevyMeasure> {
        LevyMeasure::double_exponential(self.rate, self.p, self.eta_plus, self.eta_minus)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsRequest {
    #[serde(default)]
    pub jumps: Jumps,
    pub q: f64,
    #[serde(default)]
    pub a: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathsReply {
    pub times: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub jumps: Vec<usize>,
}

fn check_size(n_paths: usize, steps: usize) -> Result<()> {
    if n_paths == 0 || n_paths > MAX_PATHS {
        return Err(Error::validation("n_paths", format!("must be in 1..={MAX_PATHS}")));
    }
    if steps == 0 || steps > MAX_STEPS {
        return Err(Error::validation("steps", format!("must be in 1..={MAX_STEPS}")));
    }
    Ok(())
}

/// Sample paths of `Z` on a uniform grid over `[0, 1]`.
pub fn sample_paths(req: &PathsRequest) -> Result<PathsReply> {
    check_size(req.n_paths.min(64), req.steps)?;
    let triplet = LevyTriplet::new(req.a, req.q, req.jumps.measure()?)?;
    let grid = Arc::new(TimeGrid::uniform(1.0, req.steps)?);
    let mc = McConfig::new(req.n_paths.min(64), req.seed, Arc::clone(&grid));
    let mut reply = PathsReply { times: grid.times().to_vec(), z: Vec::new(), jumps: Vec::new() };
    for i in 0..mc.n_paths {
        let path = mc.path(&triplet, i);
        reply.z.push(grid.times().iter().map(|&t| path.z_at(t)).collect());
        reply.jumps.push(path.jumps().len());
    }
    Ok(reply)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleRequest {
    #[serde(default)]
    pub jumps: Jumps,
    pub q: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rate: f64,
    /// Added to the martingale drift; zero keeps discounted bonds martingales.
    pub shift: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReply {
    pub times: Vec<f64>,
    pub maturities: Vec<f64>,
    pub initial: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub max_abs_z: f64,
    pub holds: bool,
    pub drift_detected: bool,
}

/// Weighted means of discounted bond prices over time, with standard errors.
pub fn martingale_check(req: &MartingaleRequest) -> Result<MartingaleReply> {
    check_size(req.n_paths, req.steps)?;
    if req.steps % 4 != 0 {
        return Err(Error::validation("steps", "must be a multiple of 4"));
    }
    let triplet = LevyTriplet::new(0.0, req.q, req.jumps.measure()?)?;
    let spec = MartingaleMeasureSpec::new(triplet, GeneratingPair::tilt(req.theta), VolatilitySpec::Constant { sigma: req.sigma })?;
    let grid = Arc::new(TimeGrid::uniform(1.0, req.steps)?);
    let model = MarketModel::new(
        spec,
        InitialCurve::Flat { rate: req.rate },
        vec![0.25, 0.5, 0.75, 1.0],
        Arc::clone(&grid),
        DriftMode::Hjm { shift: req.shift },
    )?;
    let t = discounted_martingale_test(&model, &McConfig::new(req.n_paths, req.seed, grid))?;
    Ok(MartingaleReply {
        max_abs_z: t.max_abs_z(),
        holds: t.holds(4.0),
        drift_detected: t.drift_detected(4.0),
        times: t.times,
        maturities: t.maturities,
        initial: t.initial,
        mean: t.mean,
        se: t.se,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateRequest {
    #[serde(default)]
    pub jumps: Jumps,
    pub y0: f64,
    pub k: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReply {
    pub epsilons: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio: Vec<f64>,
    pub growth: f64,
}

/// Moment certificate of the counterexample integrand on the initial curve.
pub fn certificate(req: &CertificateRequest) -> Result<CertificateReply> {
    if req.k > 16 {
        return Err(Error::validation("k", "must be <= 16"));
    }
    let nu = req.jumps.measure()?;
    let triplet = LevyTriplet::new(0.0, 0.0, nu.clone())?;
    let spec = MartingaleMeasureSpec::new(triplet, GeneratingPair::identity(), VolatilitySpec::Constant { sigma: req.sigma })?;
    let grid = Arc::new(TimeGrid::uniform(1.0, 4)?);
    let model = MarketModel::new(spec, InitialCurve::Flat { rate: 0.02 }, vec![1.0], grid, DriftMode::Hjm { shift: 0.0 })?;
    let witness = find_concentration_witness(&nu, req.y0, req.k, None)?;
    let pairs = witness.pairs();
    let epsilons = witness.epsilons.clone();
    let c = moment_certificate(&CounterexampleG::new(witness), &nu, &SurfaceSnapshot::initial(&model), pairs)?;
    Ok(CertificateReply { growth: c.growth(), epsilons, lhs: c.lhs, rhs: c.rhs, ratio: c.ratio })
}

fn call<Q, R>(request: &str, f: impl Fn(&Q) -> Result<R>) -> std::result::Result<String, String>
where
    Q: for<'de> Deserialize<'de>,
    R: Serialize,
{
    let req: Q = serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))?;
    let reply = f(&req).map_err(|e| e.to_string())?;
    serde_json::to_string(&reply).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = samplePaths)]
pub fn sample_paths_js(request: &str) -> std::result::Result<String, JsError> {
    call(request, sample_paths).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = martingaleCheck)]
pub fn martingale_check_js(request: &str) -> std::result::Result<String, JsError> {
    call(request, martingale_check).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = certificate)]
pub fn certificate_js(request: &str) -> std::result::Result<String, JsError> {
    call(request, certificate).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_reproducible_and_capped() {
        let req: PathsRequest = serde_json::from_str(r#"{"q": 0.5, "n_paths": 500, "steps": 32, "seed": 4}"#).unwrap();
        let a = sample_paths(&req).unwrap();
        assert_eq!(a.z.len(), 64);
        assert_eq!(a.times.len(), 33);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&sample_paths(&req).unwrap()).unwrap());
    }

    #[test]
    fn martingale_check_flags_shift() {
        let base = r#"{"q": 0.25, "theta": 0.1, "sigma": 0.2, "rate": 0.03, "n_paths": 3000, "steps": 32, "seed": 9, "shift": SHIFT}"#;
        let run = |shift: &str| martingale_check(&serde_json::from_str(&base.replace("SHIFT", shift)).unwrap()).unwrap();
        let ok = run("0.0");
        assert!(ok.holds && !ok.drift_detected, "{}", ok.max_abs_z);
        assert!(run("0.3").drift_detected);
    }

    #[test]
    fn certificate_grows() {
        let req: CertificateRequest = serde_json::from_str(r#"{"y0": 1.0, "k": 8, "sigma": 0.1}"#).unwrap();
        let c = certificate(&req).unwrap();
        assert_eq!(c.ratio.len(), 9);
        assert!(c.growth > 1e3);
    }

    #[test]
    fn bad_requests_are_reported() {
        assert!(call("{\"q\": 1}", sample_paths).unwrap_err().starts_with("bad request"));
        let err = call(r#"{"q": -1.0, "n_paths": 1, "steps": 4, "seed": 0}"#, sample_paths).unwrap_err();
        assert!(err.contains("q"), "{err}");
        let err = call(r#"{"y0": 1.0, "k": 40, "sigma": 0.1}"#, certificate).unwrap_err();
        assert!(err.contains("k"));
    }
}
