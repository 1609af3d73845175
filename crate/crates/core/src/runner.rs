//! Experiment orchestration: runs one subcommand of a scenario, writes the
//! CSV/JSON artifacts and a manifest with their hashes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::girsanov::DensityEngine;
use crate::hedging::{collect_hedge_data, least_squares_hedge, HedgeReport};
use crate::hjm::{check_martingale_conditions, discounted_martingale_test, discounted_price_sde_check, ConditionReport};
use crate::incompleteness::{incompleteness_experiment, IncompletenessReport};
use crate::jump_calculus::{estimate_isometry, GeneralIntegrand, IntegrandClass, IsometryReport, MeasureTag};
use crate::mc::{accumulate, map_indices, try_map_indices, Estimate, McConfig};
use crate::scenario::{Built, Scenario};

/// Paths used for pathwise (max-error) diagnostics.
const PATHWISE_PATHS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Isometry,
    Girsanov,
    Drift,
    Hedge,
    Incompleteness,
    All,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Isometry,
        Command::Girsanov,
        Command::Drift,
        Command::Hedge,
        Command::Incompleteness,
        Command::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Isometry => "isometry",
            Command::Girsanov => "girsanov",
            Command::Drift => "drift",
            Command::Hedge => "hedge",
            Command::Incompleteness => "incompleteness",
            Command::All => "all",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation("<command>", format!("unknown subcommand `{s}`")))
    }
}

/// Command-line overrides. `paths` replaces every path count in the scenario.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Scenario {
    pub fn with_overrides(mut self, opts: &RunOptions) -> Self {
        if let Some(seed) = opts.seed {
            self.master_seed = seed;
        }
        if let Some(n) = opts.paths {
            self.n_paths = n;
            if let Some(h) = &mut self.hedge {
                h.n_paths = None;
            }
            if let Some(i) = &mut self.incompleteness {
                i.n_paths = None;
            }
        }
        if let Some(out) = &opts.out {
            self.output_dir = Some(out.clone());
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub version: String,
    pub scenario_sha256: String,
    pub master_seed: u64,
    /// Effective scenario after overrides; feeding it back reproduces the outputs.
    pub scenario: Scenario,
    pub outputs: Vec<OutputFile>,
    /// Wall-clock milliseconds per experiment. Not reproducible.
    pub timings_ms: BTreeMap<String, f64>,
}

/// Process exit code for an error: 2 for invalid input, 3 for numerical
/// failure, 1 for I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation { .. }
        | Error::Domain(_)
        | Error::Maturity(_)
        | Error::Bound(_)
        | Error::NotConcentrated(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Formats a float for CSV with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.files.push((name.to_string(), text.into_bytes()));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: f64,
    pub terminal_z: Estimate,
    pub terminal_z_variance: f64,
    pub jump_count: Estimate,
    pub jump_count_variance: f64,
    /// Simulated jump intensity times the horizon.
    pub expected_jump_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometryEntry {
    pub integrand: String,
    pub measure: String,
    pub report: IsometryReport,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub terminal_rho: Estimate,
    pub terminal_rho_z: f64,
    /// Over the first paths: largest `|rho - rho_sde|`.
    pub max_sde_gap: f64,
    /// Over the first paths: largest `|rho * (1/rho) - 1|`; absent when the
    /// reciprocal recursion does not apply.
    pub max_reciprocal_gap: Option<f64>,
    pub pathwise_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub conditions: ConditionReport,
    pub n_paths: usize,
    pub seed: u64,
    pub max_abs_z: f64,
    pub holds_4se: bool,
    pub drift_detected_4se: bool,
    /// Largest gap between the exact discounted price and its SDE recursion.
    pub max_sde_discrepancy: f64,
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    timings.insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
    out
}

/// Runs `command` on a scenario (overrides already applied) and writes the
/// artifacts and `manifest.json` into the output directory.
pub fn run(command: Command, scenario: &Scenario) -> Result<RunManifest> {
    let built = scenario.build()?;
    let mut artifacts = Artifacts { files: Vec::new() };
    let mut timings = BTreeMap::new();
    let wants = |c: Command| command == c || command == Command::All;

    if wants(Command::Simulate) {
        timed(&mut timings, "simulate", || simulate(scenario, &built, &mut artifacts))?;
    }
    if wants(Command::Isometry) {
        timed(&mut timings, "isometry", || isometry(scenario, &built, &mut artifacts))?;
    }
    if wants(Command::Girsanov) {
        timed(&mut timings, "girsanov", || girsanov(scenario, &built, &mut artifacts))?;
    }
    if wants(Command::Drift) {
        timed(&mut timings, "drift", || drift(scenario, &built, &mut artifacts))?;
    }
    if command == Command::Hedge || (command == Command::All && scenario.hedge.is_some()) {
        timed(&mut timings, "hedge", || hedge(scenario, &built, &mut artifacts).map(|_| ()))?;
    }
    if command == Command::Incompleteness || (command == Command::All && scenario.incompleteness.is_some()) {
        timed(&mut timings, "incompleteness", || incompleteness(scenario, &built, &mut artifacts).map(|_| ()))?;
    }

    let dir = scenario.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    for (name, bytes) in &artifacts.files {
        std::fs::write(dir.join(name), bytes)?;
        outputs.push(OutputFile { file: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() });
    }
    let canonical = serde_json::to_string(scenario).map_err(|e| Error::Io(e.to_string()))?;
    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_sha256: sha256_hex(canonical.as_bytes()),
        master_seed: scenario.master_seed,
        scenario: scenario.clone(),
        outputs,
        timings_ms: timings,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}

/// Loads, overrides and runs in one call.
pub fn run_file(command: Command, path: &Path, opts: &RunOptions) -> Result<RunManifest> {
    let scenario = Scenario::from_file(path)?.with_overrides(opts);
    run(command, &scenario)
}

fn mc_config(scenario: &Scenario, built: &Built, n_paths: usize) -> McConfig {
    McConfig::new(n_paths, scenario.master_seed, built.grid.clone())
}

fn simulate(scenario: &Scenario, built: &Built, out: &mut Artifacts) -> Result<SimulateSummary> {
    let mc = mc_config(scenario, built, scenario.n_paths);
    let triplet = &built.triplet;
    let stats = accumulate(mc.n_paths, 2, |i| {
        let path = mc.path(triplet, i);
        Ok::<_, Error>(vec![*path.z_values().last().unwrap(), path.jumps().len() as f64])
    })?;
    let written = scenario.simulate.paths_written.min(mc.n_paths);
    let paths = map_indices(written, |i| mc.path(triplet, i));
    let mut rows = Vec::new();
    for (p, path) in paths.iter().enumerate() {
        for (g, &t) in path.grid().times().iter().enumerate() {
            rows.push(vec![p.to_string(), fmt_f64(t), fmt_f64(path.brownian()[g]), fmt_f64(path.z_at(t))]);
        }
    }
    out.csv("simulate_paths.csv", &["path", "t", "w", "z"], rows);
    let (z, count) = (stats.estimate(0), stats.estimate(1));
    let summary = SimulateSummary {
        n_paths: mc.n_paths,
        seed: mc.seed,
        horizon: mc.grid.horizon(),
        terminal_z: z,
        terminal_z_variance: z.variance(),
        jump_count: count,
        jump_count_variance: count.variance(),
        expected_jump_count: triplet.nu().simulated_rate() * mc.grid.horizon(),
    };
    out.json("simulate.json", &summary)?;
    Ok(summary)
}

fn isometry(scenario: &Scenario, built: &Built, out: &mut Artifacts) -> Result<Vec<IsometryEntry>> {
    let mc = mc_config(scenario, built, scenario.n_paths);
    let tilted = !scenario.girsanov.psi.is_zero();
    let mut entries = Vec::new();
    for field in &built.integrands {
        let mut tags = vec![("P", MeasureTag::P, IntegrandClass::Psi2)];
        if tilted {
            tags.push(("Q", MeasureTag::Q(&built.pair), IntegrandClass::Psi2Q));
        }
        for (name, tag, class) in tags {
            let g = GeneralIntegrand::new(field.clone(), class);
            let report = estimate_isometry(&g, &built.triplet, tag, &mc)?;
            let z = Estimate { mean: report.lhs, se: report.se, n: report.n_paths }.z_score(report.rhs);
            entries.push(IsometryEntry { integrand: field.label().to_string(), measure: name.to_string(), report, z });
        }
    }
    out.json("isometry.json", &entries)?;
    Ok(entries)
}

fn girsanov(scenario: &Scenario, built: &Built, out: &mut Artifacts) -> Result<GirsanovSummary> {
    let mc = mc_config(scenario, built, scenario.n_paths);
    let engine = DensityEngine::new(&built.pair, &built.triplet)?;
    let nt = built.grid.len();
    let moments = accumulate(mc.n_paths, nt, |i| {
        let rho = engine.density(&mc.path(&built.triplet, i))?.rho;
        Ok::<_, Error>((0..nt).map(|g| rho.at_grid(g)).collect())
    })?;
    let reciprocal_applies = built.triplet.q() == 0.0 || built.pair.phi().is_zero();
    let pathwise = mc.n_paths.min(PATHWISE_PATHS);
    let gaps = try_map_indices(pathwise, |i| -> Result<(f64, f64)> {
        let path = mc.path(&built.triplet, i);
        let d = engine.density(&path)?;
        let sde = d.rho.max_abs_diff(&engine.density_sde(&path)?);
        let recip = if reciprocal_applies {
            let r = engine.reciprocal(&path, &d)?;
            d.rho.left.iter().zip(&r.left).chain(d.rho.right.iter().zip(&r.right)).map(|(a, b)| (a * b - 1.0).abs()).fold(0.0, f64::max)
        } else {
            0.0
        };
        Ok((sde, recip))
    })?;
    let rows = (0..nt).map(|g| {
        let e = moments.estimate(g);
        vec![fmt_f64(built.grid.times()[g]), fmt_f64(e.mean), fmt_f64(e.se)]
    });
    out.csv("girsanov_density.csv", &["t", "mean_rho", "se"], rows);
    let terminal = moments.estimate(nt - 1);
    let summary = GirsanovSummary {
        n_paths: mc.n_paths,
        seed: mc.seed,
        terminal_rho: terminal,
        terminal_rho_z: terminal.z_score(1.0),
        max_sde_gap: gaps.iter().map(|g| g.0).fold(0.0, f64::max),
        max_reciprocal_gap: reciprocal_applies.then(|| gaps.iter().map(|g| g.1).fold(0.0, f64::max)),
        pathwise_paths: pathwise,
    };
    out.json("girsanov.json", &summary)?;
    Ok(summary)
}

fn drift(scenario: &Scenario, built: &Built, out: &mut Artifacts) -> Result<DriftSummary> {
    let model = &built.model;
    let conditions = check_martingale_conditions(model)?.into_result()?;
    let mc = mc_config(scenario, built, scenario.n_paths);
    let test = discounted_martingale_test(model, &mc)?;
    let sde = try_map_indices(mc.n_paths.min(PATHWISE_PATHS), |i| {
        let path = mc.path(&built.triplet, i);
        discounted_price_sde_check(&model.evolve(&path)?, model, &path)
    })?;
    let mut rows = Vec::new();
    for (m, &mat) in test.maturities.iter().enumerate() {
        for (i, &t) in test.times.iter().enumerate() {
            rows.push(vec![fmt_f64(mat), fmt_f64(t), fmt_f64(test.mean[m][i]), fmt_f64(test.se[m][i]), fmt_f64(test.z(m, i))]);
        }
    }
    out.csv("drift_martingale.csv", &["maturity", "t", "mean", "se", "z"], rows);
    let surface = model.evolve(&mc.path(&built.triplet, 0))?;
    let mut rows = Vec::new();
    for (i, &t) in surface.times.iter().enumerate() {
        for (m, &mat) in surface.maturities.iter().enumerate().filter(|&(_, &mat)| mat >= t) {
            rows.push(vec![
                fmt_f64(t),
                fmt_f64(mat),
                fmt_f64(surface.forward[i][m]),
                fmt_f64(surface.bond_price(i, m)),
                fmt_f64(surface.discounted_at_grid(i, m)),
            ]);
        }
    }
    out.csv("drift_surface.csv", &["t", "T", "f", "P", "P_hat"], rows);
    let summary = DriftSummary {
        conditions,
        n_paths: test.n_paths,
        seed: test.seed,
        max_abs_z: test.max_abs_z(),
        holds_4se: test.holds(4.0),
        drift_detected_4se: test.drift_detected(4.0),
        max_sde_discrepancy: sde.into_iter().fold(0.0, f64::max),
    };
    out.json("drift.json", &summary)?;
    Ok(summary)
}

fn hedge(scenario: &Scenario, built: &Built, out: &mut Artifacts) -> Result<HedgeReport> {
    let spec = scenario.hedge.as_ref().ok_or_else(|| Error::validation("hedge", "section missing"))?;
    let basis = scenario.hedge_basis(&built.model)?;
    let claim = scenario.hedge_claim(built)?;
    let mc = mc_config(scenario, built, spec.n_paths.unwrap_or(scenario.n_paths));
    let data = collect_hedge_data(&built.model, &claim, &basis, &mc)?;
    let report = least_squares_hedge(&data, &basis, spec.regularization, &built.model, &claim.label)?;
    out.json("hedge.json", &report)?;
    Ok(report)
}

fn incompleteness(scenario: &Scenario, built: &Built, out: &mut Artifacts) -> Result<IncompletenessReport> {
    let spec = scenario
        .incompleteness
        .as_ref()
        .ok_or_else(|| Error::validation("incompleteness", "section missing"))?;
    let mc = mc_config(scenario, built, spec.n_paths.unwrap_or(scenario.n_paths));
    let report = incompleteness_experiment(&built.model, &spec.config, &mc)?;
    out.json("incompleteness.json", &report)?;
    let rows = (0..report.ratio.len())
        .map(|n| vec![(n + 1).to_string(), fmt_f64(report.lhs[n]), fmt_f64(report.rhs[n]), fmt_f64(report.ratio[n])]);
    out.csv("certificate.csv", &["pair", "lhs", "rhs", "ratio"], rows);
    let r = &report.residuals_by_level;
    let rows = (0..r.counterexample.len()).map(|l| vec![l.to_string(), fmt_f64(r.counterexample[l]), fmt_f64(r.control[l])]);
    out.csv("residuals.csv", &["level", "counterexample_l2", "control_l2"], rows);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!(matches!("nope".parse::<Command>(), Err(Error::Validation { .. })));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::validation("levy.q", "negative")), 2);
        assert_eq!(exit_code(&Error::Divergence("x".into())), 3);
        assert_eq!(exit_code(&Error::Moment("x".into())), 3);
        assert_eq!(exit_code(&Error::Io("x".into())), 1);
    }

    #[test]
    fn csv_float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
