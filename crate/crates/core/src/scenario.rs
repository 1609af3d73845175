//! TOML scenarios: parsing, validation with the offending key path, and
//! construction of the model objects.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{JumpField, TimeField};
use crate::girsanov::GeneratingPair;
use crate::hedging::{ClaimRepresentation, HedgeBasis};
use crate::hjm::{DriftMode, InitialCurve, MarketModel, MartingaleMeasureSpec, VolatilitySpec};
use crate::incompleteness::{build_counterexample_claim, find_concentration_witness, CounterexampleG, IncompletenessConfig};
use crate::levy::{LevyMeasure, LevyTriplet, MeasureKind, TimeGrid};
use crate::sets::JumpSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub grid: GridSpec,
    pub levy: LevySpec,
    #[serde(default)]
    pub girsanov: PairSpec,
    pub market: MarketSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub isometry: IsometrySpec,
    #[serde(default)]
    pub hedge: Option<HedgeSpec>,
    #[serde(default)]
    pub incompleteness: Option<IncompletenessSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySpec {
    pub a: f64,
    pub q: f64,
    #[serde(default)]
    pub eps_trunc: f64,
    pub measure: MeasureKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    /// Constant Brownian drift change.
    #[serde(default)]
    pub phi: f64,
    #[serde(default)]
    pub psi: PsiSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiSpec {
    #[default]
    Zero,
    Constant { theta: f64 },
    /// `theta` on `[lo, hi]`, zero elsewhere.
    Indicator { lo: f64, hi: f64, theta: f64 },
    /// `theta * y`, an exponential tilt of the jump sizes.
    Linear { theta: f64 },
    /// `values[i]` on `[breaks[i], breaks[i + 1])`, zero elsewhere.
    Table { breaks: Vec<f64>, values: Vec<f64> },
}

impl PsiSpec {
    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Constant { theta } | Self::Indicator { theta, .. } | Self::Linear { theta } => *theta == 0.0,
            Self::Table { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub maturities: Vec<f64>,
    pub curve: InitialCurve,
    pub vol: VolatilitySpec,
    #[serde(default = "default_vol_bound")]
    pub vol_bound: f64,
    #[serde(default = "default_drift")]
    pub drift: DriftMode,
}

fn default_vol_bound() -> f64 {
    1.0
}

fn default_drift() -> DriftMode {
    DriftMode::Hjm { shift: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    /// Paths written to the CSV; statistics use all paths.
    #[serde(default = "default_written")]
    pub paths_written: usize,
}

fn default_written() -> usize {
    8
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self { paths_written: default_written() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegrandSpec {
    Indicator { lo: f64, hi: f64, scale: f64 },
    Linear { scale: f64 },
    /// Step function in `y`, as for `psi`.
    Table { breaks: Vec<f64>, values: Vec<f64> },
    /// The alternating function of the `[incompleteness]` section.
    Counterexample,
}

fn check_table(breaks: &[f64], values: &[f64], path: &str) -> Result<()> {
    require(breaks.len() >= 2, &format!("{path}.breaks"), "need at least 2 breaks")?;
    require(values.len() + 1 == breaks.len(), &format!("{path}.values"), "need one value per cell")?;
    require(
        breaks.iter().all(|b| b.is_finite()) && breaks.windows(2).all(|w| w[0] < w[1]),
        &format!("{path}.breaks"),
        "must be finite and strictly increasing",
    )?;
    require(values.iter().all(|v| v.is_finite()), &format!("{path}.values"), "must be finite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsometrySpec {
    pub integrands: Vec<IntegrandSpec>,
}

impl Default for IsometrySpec {
    fn default() -> Self {
        Self {
            integrands: vec![
                IntegrandSpec::Indicator { lo: 0.5, hi: 2.0, scale: 1.0 },
                IntegrandSpec::Indicator { lo: -2.0, hi: -0.25, scale: 3.0 },
                IntegrandSpec::Linear { scale: 1.0 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimSpec {
    Constant { value: f64 },
    BondPayoff { maturity: f64 },
    JumpIntegral { lo: f64, hi: f64, scale: f64 },
    /// Uses the `[incompleteness]` section.
    Counterexample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeSpec {
    pub maturities: Vec<f64>,
    pub buckets: usize,
    #[serde(default = "default_reg")]
    pub regularization: f64,
    pub claim: ClaimSpec,
    /// Overrides the global path count.
    #[serde(default)]
    pub n_paths: Option<usize>,
}

fn default_reg() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncompletenessSpec {
    #[serde(flatten)]
    pub config: IncompletenessConfig,
    #[serde(default)]
    pub n_paths: Option<usize>,
}

/// Model objects built from a validated scenario.
#[derive(Debug, Clone)]
pub struct Built {
    pub grid: Arc<TimeGrid>,
    pub triplet: LevyTriplet,
    pub pair: GeneratingPair,
    pub model: MarketModel,
    /// The isometry battery, in scenario order.
    pub integrands: Vec<JumpField>,
}

fn at(prefix: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Validation { path, message } => Error::validation(format!("{prefix}.{path}"), message),
        other => other,
    }
}

fn require(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(path, message))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::validation("<toml>", e.message().to_string()))?;
        serde_path_to_error::deserialize(table).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message().to_string())
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Checks every field and cross-reference and builds the model.
    pub fn build(&self) -> Result<Built> {
        require(self.n_paths >= 2, "n_paths", "need at least 2 paths")?;
        require(self.grid.horizon > 0.0 && self.grid.horizon.is_finite(), "grid.horizon", "must be finite and > 0")?;
        require(self.grid.steps >= 1, "grid.steps", "must be >= 1")?;
        let grid = Arc::new(TimeGrid::uniform(self.grid.horizon, self.grid.steps).map_err(at("grid"))?);

        let nu = LevyMeasure::new(self.levy.measure.clone(), self.levy.eps_trunc).map_err(|e| match e {
            Error::Validation { path, message } if path == "eps_trunc" => Error::validation("levy.eps_trunc", message),
            e => at("levy.measure")(e),
        })?;
        let triplet = LevyTriplet::new(self.levy.a, self.levy.q, nu).map_err(at("levy"))?;

        require(self.girsanov.phi.is_finite(), "girsanov.phi", "must be finite")?;
        let phi = if self.girsanov.phi == 0.0 { TimeField::zero() } else { TimeField::constant(self.girsanov.phi) };
        let pair = match self.girsanov.psi {
            PsiSpec::Zero => GeneratingPair::identity().with_phi(phi),
            PsiSpec::Constant { theta } => {
                require(theta.is_finite(), "girsanov.psi.theta", "must be finite")?;
                GeneratingPair::tilt(theta).with_phi(phi)
            }
            PsiSpec::Indicator { lo, hi, theta } => {
                require(theta.is_finite(), "girsanov.psi.theta", "must be finite")?;
                require(lo < hi, "girsanov.psi.lo", "need lo < hi")?;
                let psi = JumpField::indicator(JumpSet::closed(lo, hi), theta);
                GeneratingPair::new(phi, psi, theta.max(0.0))?
            }
            PsiSpec::Linear { theta } => {
                require(theta.is_finite(), "girsanov.psi.theta", "must be finite")?;
                GeneratingPair::new(phi, JumpField::linear(theta), theta.abs())?
            }
            PsiSpec::Table { ref breaks, ref values } => {
                check_table(breaks, values, "girsanov.psi")?;
                let bound = values.iter().copied().fold(0.0, f64::max);
                GeneratingPair::new(phi, JumpField::piecewise(breaks.clone(), values.clone()), bound)?
            }
        };

        self.market.vol.validate(self.market.vol_bound).map_err(at("market"))?;
        let spec = MartingaleMeasureSpec::new(triplet.clone(), pair.clone(), self.market.vol)?;
        let model = MarketModel::new(
            spec,
            self.market.curve.clone(),
            self.market.maturities.clone(),
            Arc::clone(&grid),
            self.market.drift,
        )
        .map_err(|e| match e {
            Error::Maturity(m) => Error::validation("market.maturities", m),
            e => at("market")(e),
        })?;

        if let Some(h) = &self.hedge {
            self.hedge_basis(&model)?;
            require(h.regularization >= 0.0 && h.regularization.is_finite(), "hedge.regularization", "must be >= 0")?;
            if let ClaimSpec::BondPayoff { maturity } = h.claim {
                maturity_index(&model, maturity, "hedge.claim.maturity")?;
            }
            if h.claim == ClaimSpec::Counterexample && self.incompleteness.is_none() {
                return Err(Error::validation("hedge.claim", "counterexample claim needs an [incompleteness] section"));
            }
        }
        if let Some(inc) = &self.incompleteness {
            let c = &inc.config;
            require(c.levels >= 1, "incompleteness.levels", "must be >= 1")?;
            require(c.base_buckets >= 1, "incompleteness.base_buckets", "must be >= 1")?;
            require(c.levels <= 8, "incompleteness.levels", "must be <= 8")?;
            require(c.k0.is_none_or(|k| k > 0.0), "incompleteness.k0", "must be > 0")?;
            find_concentration_witness(triplet.nu(), c.y0, c.k, c.eps1)?;
        }
        let integrands = self.isometry_fields(&triplet)?;
        Ok(Built { grid, triplet, pair, model, integrands })
    }

    fn isometry_fields(&self, triplet: &LevyTriplet) -> Result<Vec<JumpField>> {
        let mut out = Vec::new();
        for (i, spec) in self.isometry.integrands.iter().enumerate() {
            let path = format!("isometry.integrands[{i}]");
            let field = match *spec {
                IntegrandSpec::Indicator { lo, hi, scale } => {
                    require(lo < hi, &format!("{path}.lo"), "need lo < hi")?;
                    require(scale.is_finite(), &format!("{path}.scale"), "must be finite")?;
                    JumpField::indicator(JumpSet::closed(lo, hi), scale).with_label(format!("{scale}*1[{lo}, {hi}]"))
                }
                IntegrandSpec::Linear { scale } => {
                    require(scale.is_finite(), &format!("{path}.scale"), "must be finite")?;
                    JumpField::linear(scale)
                }
                IntegrandSpec::Table { ref breaks, ref values } => {
                    check_table(breaks, values, &path)?;
                    JumpField::piecewise(breaks.clone(), values.clone())
                }
                IntegrandSpec::Counterexample => {
                    let c = &self
                        .incompleteness
                        .as_ref()
                        .ok_or_else(|| Error::validation(path, "counterexample integrand needs an [incompleteness] section"))?
                        .config;
                    CounterexampleG::new(find_concentration_witness(triplet.nu(), c.y0, c.k, c.eps1)?).field()
                }
            };
            out.push(field);
        }
        Ok(out)
    }

    pub fn hedge_basis(&self, model: &MarketModel) -> Result<HedgeBasis> {
        let h = self.hedge.as_ref().ok_or_else(|| Error::validation("hedge", "section missing"))?;
        let idx = h
            .maturities
            .iter()
            .map(|&m| maturity_index(model, m, "hedge.maturities"))
            .collect::<Result<Vec<_>>>()?;
        HedgeBasis::new(idx, h.buckets).map_err(|e| match e {
            Error::Validation { path, message } => Error::validation(path, message),
            e => e,
        })
    }

    pub fn hedge_claim(&self, built: &Built) -> Result<ClaimRepresentation> {
        let h = self.hedge.as_ref().ok_or_else(|| Error::validation("hedge", "section missing"))?;
        match h.claim {
            ClaimSpec::Constant { value } => Ok(ClaimRepresentation::constant(value)),
            ClaimSpec::BondPayoff { maturity } => {
                ClaimRepresentation::bond_payoff(&built.model, maturity_index(&built.model, maturity, "hedge.claim.maturity")?)
            }
            ClaimSpec::JumpIntegral { lo, hi, scale } => {
                ClaimRepresentation::jump_integral(&built.model, JumpSet::closed(lo, hi), scale)
            }
            ClaimSpec::Counterexample => {
                let c = &self.incompleteness.as_ref().expect("checked at build").config;
                let g = CounterexampleG::new(find_concentration_witness(built.triplet.nu(), c.y0, c.k, c.eps1)?);
                let k0 = c.k0.ok_or_else(|| Error::validation("incompleteness.k0", "needed by the counterexample claim"))?;
                build_counterexample_claim(&g, &built.model, k0)
            }
        }
    }
}

fn maturity_index(model: &MarketModel, maturity: f64, path: &str) -> Result<usize> {
    model
        .maturities()
        .iter()
        .position(|&m| (m - maturity).abs() <= 1e-12 * m.abs().max(1.0))
        .ok_or_else(|| Error::validation(path, format!("{maturity} is not a market maturity")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
n_paths = 100
master_seed = 1
[grid]
horizon = 1.0
steps = 16
[levy]
a = 0.0
q = 0.5
[levy.measure]
kind = "double_exponential"
rate = 2.0
p = 0.5
eta_plus = 3.0
eta_minus = 3.0
[market]
maturities = [0.5, 1.0]
curve = { kind = "flat", rate = 0.02 }
vol = { kind = "constant", sigma = 0.1 }
"#;

    #[test]
    fn base_scenario_builds() {
        let s = Scenario::from_toml_str(BASE).unwrap();
        let b = s.build().unwrap();
        assert_eq!(b.model.maturities(), &[0.5, 1.0]);
        assert_eq!(s.market.drift, DriftMode::Hjm { shift: 0.0 });
    }

    fn validation_path(text: &str) -> String {
        match Scenario::from_toml_str(text).and_then(|s| s.build().map(|_| ())) {
            Err(Error::Validation { path, .. }) => path,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(validation_path(&BASE.replace("q = 0.5", "q = -1.0")), "levy.q");
        assert_eq!(validation_path(&BASE.replace("steps = 16", "steps = \"x\"")), "grid.steps");
        assert_eq!(validation_path(&BASE.replace("rate = 2.0", "rate = -2.0")), "levy.measure.rate");
        assert_eq!(validation_path(&BASE.replace("[0.5, 1.0]", "[0.3, 1.0]")), "market.maturities");
        assert_eq!(validation_path(&format!("bogus = 1\n{BASE}")), "bogus");
        assert_eq!(validation_path(&format!("{BASE}\nbogus = 1\n")), "market.bogus");
        let hedge = format!("{BASE}\n[hedge]\nmaturities = [0.75]\nbuckets = 2\nclaim = {{ kind = \"constant\", value = 1.0 }}\n");
        assert_eq!(validation_path(&hedge), "hedge.maturities");
    }

    #[test]
    fn table_and_linear_psi_build() {
        let table = format!("{BASE}\n[girsanov]\npsi = {{ kind = \"table\", breaks = [-1.0, 0.0, 1.0], values = [0.2, -0.3] }}\n");
        let b = Scenario::from_toml_str(&table).unwrap().build().unwrap();
        assert_eq!(b.pair.psi_bound(), 0.2);
        let linear = format!("{BASE}\n[girsanov]\npsi = {{ kind = \"linear\", theta = -0.5 }}\n");
        assert_eq!(Scenario::from_toml_str(&linear).unwrap().build().unwrap().pair.psi_bound(), 0.5);
        let bad = table.replace("[0.2, -0.3]", "[0.2]");
        assert_eq!(validation_path(&bad), "girsanov.psi.values");
    }

    #[test]
    fn integrand_registry_is_checked() {
        let iso = |body: &str| format!("{BASE}\n[isometry]\nintegrands = [{body}]\n");
        let ok = iso(r#"{ kind = "table", breaks = [0.0, 1.0, 2.0], values = [1.0, 2.0] }, { kind = "linear", scale = 1.0 }"#);
        assert_eq!(Scenario::from_toml_str(&ok).unwrap().build().unwrap().integrands.len(), 2);
        let bad = iso(r#"{ kind = "linear", scale = 1.0 }, { kind = "table", breaks = [2.0, 1.0], values = [1.0] }"#);
        assert_eq!(validation_path(&bad), "isometry.integrands[1].breaks");
        assert_eq!(validation_path(&iso(r#"{ kind = "counterexample" }"#)), "isometry.integrands[0]");
    }
}
