//! Built-in scenarios behind a name-keyed registry.
//!
//! Each built-in is a [`ScenarioBuilder`] trait object; the CLI looks one up
//! by the name given in its configuration, applies overrides, and receives a
//! fully calibrated [`Scenario`]. Custom builders can be registered to make
//! new named scenarios available without touching the front-end.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimator::assemble_ensemble;
use crate::matrix::Matrix;
use crate::model::{validate_model, Drive, SensorModel, SystemModel};
use crate::privacy::{plan_mechanism, sensitivity_profile, PrivacyBudget};
use crate::sim::{Scenario, SolverOptions};

/// Optional knobs a caller may turn before a scenario is built. Unset fields
/// keep the scenario's documented defaults; fields irrelevant to a given
/// scenario are ignored by its builder.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOverrides {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub q_w: Option<f64>,
    /// Per-sensor measurement-noise variances.
    pub q_v: Option<Vec<f64>>,
    /// Oxygen scenario: fraction of oxygen in inhaled air (FiO2).
    pub inhaled_oxygen_fraction: Option<f64>,
    /// Oxygen scenario: alveolar CO2 partial pressure (mmHg).
    pub alveolar_co2_pressure: Option<f64>,
    /// Tracking scenario: sampling interval (s).
    pub sample_time: Option<f64>,
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub zeta_margin: Option<f64>,
}

/// A named scenario recipe: builds the plant and budget, and (through the
/// provided `build`) validates, calibrates, and packages the Monte Carlo
/// controls into a runnable [`Scenario`].
pub trait ScenarioBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;

    /// Constructs the plant and privacy budget without validating or
    /// calibrating, so validation reports can be produced even for models
    /// that will be rejected.
    fn build_model(&self, overrides: &ScenarioOverrides) -> Result<(SystemModel, PrivacyBudget)>;

    /// Validates, calibrates, and packages the full scenario.
    fn build(&self, overrides: &ScenarioOverrides) -> Result<Scenario> {
        let (model, budget) = self.build_model(overrides)?;
        resolve_scenario(self.name(), model, budget, overrides)
    }
}

/// Name-keyed registry of scenario builders.
pub struct ScenarioRegistry {
    builders: BTreeMap<&'static str, Box<dyn ScenarioBuilder>>,
}

impl ScenarioRegistry {
    pub fn empty() -> Self {
        ScenarioRegistry {
            builders: BTreeMap::new(),
        }
    }

    /// Registry preloaded with the built-in scenarios.
    pub fn with_builtins() -> Self {
        let mut r = ScenarioRegistry::empty();
        r.register(Box::new(OxygenScenario));
        r.register(Box::new(TrackingScenario));
        r
    }

    pub fn register(&mut self, builder: Box<dyn ScenarioBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn get(&self, name: &str) -> Option<&dyn ScenarioBuilder> {
        self.builders.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    /// Builds a named scenario, erroring on unknown names.
    pub fn build(&self, name: &str, overrides: &ScenarioOverrides) -> Result<Scenario> {
        match self.get(name) {
            Some(b) => b.build(overrides),
            None => Err(self.unknown(name)),
        }
    }

    /// Builds only the plant and budget of a named scenario.
    pub fn build_model(
        &self,
        name: &str,
        overrides: &ScenarioOverrides,
    ) -> Result<(SystemModel, PrivacyBudget)> {
        match self.get(name) {
            Some(b) => b.build_model(overrides),
            None => Err(self.unknown(name)),
        }
    }

    fn unknown(&self, name: &str) -> Error {
        Error::invalid(format!(
            "unknown scenario '{name}' (available: {})",
            self.names().join(", ")
        ))
    }
}

impl Default for ScenarioRegistry {
    fn default() -> Self {
        ScenarioRegistry::with_builtins()
    }
}

fn solver_from(overrides: &ScenarioOverrides) -> SolverOptions {
    let d = SolverOptions::default();
    SolverOptions {
        tol: overrides.tol.unwrap_or(d.tol),
        max_iter: overrides.max_iter.unwrap_or(d.max_iter),
        zeta_margin: overrides.zeta_margin.unwrap_or(d.zeta_margin),
    }
}

/// Validates the model, solves the steady statistics, and calibrates the
/// release plan. Shared by every builder and by inline model configs.
pub fn resolve_scenario(
    name: impl Into<String>,
    model: SystemModel,
    budget: PrivacyBudget,
    overrides: &ScenarioOverrides,
) -> Result<Scenario> {
    let report = validate_model(&model)?;
    if !report.accepted {
        return Err(Error::invalid(format!(
            "model rejected by validation (controllability rank {}/{}, observability rank {}/{})",
            report.controllability_rank, report.n_x, report.observability_rank, report.n_x
        )));
    }
    let solver = solver_from(overrides);
    let ensemble = assemble_ensemble(&model, solver.tol, solver.max_iter)?;
    let profile = sensitivity_profile(&ensemble)?;
    let plan = plan_mechanism(&profile, &budget, model.n_x(), solver.zeta_margin)?;
    Ok(Scenario {
        name: name.into(),
        model,
        budget,
        plan,
        horizon: overrides.horizon.unwrap_or(200),
        runs: overrides.runs.unwrap_or(1000),
        master_seed: overrides.seed.unwrap_or(42),
        burn_in: overrides.burn_in.unwrap_or(50),
        solver,
    })
}

/// Blood-oxygen-content monitoring: a scalar plant driven by a constant
/// physiological input, observed by two sensors of slightly different
/// quality. The intrinsic randomness alone meets the default (0.8, 0.2)
/// budget, so the release plan is the pass-through mechanism.
pub struct OxygenScenario;

/// Oxygen scenario physiological constants.
pub mod oxygen_constants {
    /// Fraction of shunted blood (doubles as the state transition factor).
    pub const SHUNT_FRACTION: f64 = 0.2;
    /// Hemoglobin concentration (g/dL).
    pub const HEMOGLOBIN: f64 = 12.0;
    /// Atmospheric pressure (mmHg).
    pub const ATMOSPHERIC_PRESSURE: f64 = 760.0;
    /// Water vapor pressure (mmHg).
    pub const WATER_VAPOR_PRESSURE: f64 = 47.0;
    /// Oxygen consumption offset (mL/dL).
    pub const CONSUMPTION_OFFSET: f64 = 5.0;
    /// Respiratory quotient.
    pub const RESPIRATORY_QUOTIENT: f64 = 0.8;
    /// Default inhaled oxygen fraction (room air).
    pub const DEFAULT_INHALED_O2: f64 = 0.21;
    /// Default alveolar CO2 partial pressure (mmHg).
    pub const DEFAULT_ALVEOLAR_CO2: f64 = 40.0;
}

/// Constant drive term of the oxygen plant. RMSE and privacy outputs are
/// invariant to it (both the plant and every filter apply the same known
/// input), so the inhaled-oxygen and CO2 knobs only shift the operating
/// point of the plotted trajectories.
pub fn oxygen_drive(inhaled_o2: f64, alveolar_co2: f64) -> f64 {
    use oxygen_constants::*;
    let c1 = ATMOSPHERIC_PRESSURE - WATER_VAPOR_PRESSURE;
    let c2 = (1.0 - inhaled_o2 * (1.0 - RESPIRATORY_QUOTIENT)) / RESPIRATORY_QUOTIENT;
    (1.0 - SHUNT_FRACTION)
        * (1.34 * HEMOGLOBIN + 0.003 * (c1 * inhaled_o2) + c2 * alveolar_co2)
        - SHUNT_FRACTION * CONSUMPTION_OFFSET
}

impl ScenarioBuilder for OxygenScenario {
    fn name(&self) -> &'static str {
        "oxygen"
    }

    fn description(&self) -> &'static str {
        "scalar blood-oxygen-content plant, two sensors, intrinsic release at (0.8, 0.2)"
    }

    fn build_model(&self, overrides: &ScenarioOverrides) -> Result<(SystemModel, PrivacyBudget)> {
        use oxygen_constants::*;
        let q_w = overrides.q_w.unwrap_or(0.4);
        let q_v = match &overrides.q_v {
            Some(values) if values.len() == 2 => values.clone(),
            Some(values) => {
                return Err(Error::invalid(format!(
                    "oxygen scenario has 2 sensors, got {} noise overrides",
                    values.len()
                )))
            }
            None => vec![0.6, 0.7],
        };
        let u = overrides
            .inhaled_oxygen_fraction
            .unwrap_or(DEFAULT_INHALED_O2);
        let e = overrides
            .alveolar_co2_pressure
            .unwrap_or(DEFAULT_ALVEOLAR_CO2);
        let sensors = q_v
            .iter()
            .map(|v| SensorModel::new(Matrix::scalar(1.0), Matrix::scalar(1.0), Matrix::scalar(*v)))
            .collect::<Result<Vec<_>>>()?;
        let model = SystemModel::new(
            Matrix::scalar(SHUNT_FRACTION),
            Matrix::scalar(1.0),
            Matrix::scalar(q_w),
            sensors,
            Drive::Constant(vec![oxygen_drive(u, e)]),
        )?;
        let budget = PrivacyBudget::new(
            overrides.epsilon.unwrap_or(0.8),
            overrides.delta.unwrap_or(0.2),
        )?;
        Ok((model, budget))
    }
}

/// Constant-velocity target tracking: position/velocity state, two position
/// sensors. The intrinsic condition fails at the default (0.9, 0.2) budget,
/// so calibration injects isotropic Gaussian noise.
pub struct TrackingScenario;

impl ScenarioBuilder for TrackingScenario {
    fn name(&self) -> &'static str {
        "tracking"
    }

    fn description(&self) -> &'static str {
        "position/velocity tracking plant, two position sensors, Gaussian release at (0.9, 0.2)"
    }

    fn build_model(&self, overrides: &ScenarioOverrides) -> Result<(SystemModel, PrivacyBudget)> {
        let t = overrides.sample_time.unwrap_or(1.0);
        if t <= 0.0 {
            return Err(Error::invalid("sample_time must be positive"));
        }
        let q_w = overrides.q_w.unwrap_or(0.1);
        let q_v = match &overrides.q_v {
            Some(values) if values.len() == 2 => values.clone(),
            Some(values) => {
                return Err(Error::invalid(format!(
                    "tracking scenario has 2 sensors, got {} noise overrides",
                    values.len()
                )))
            }
            None => vec![0.2, 0.1],
        };
        let a = Matrix::from_rows(&[vec![1.0, t], vec![0.0, 1.0]])?;
        let b = Matrix::from_rows(&[vec![0.5 * t * t], vec![t]])?;
        let c = Matrix::from_rows(&[vec![1.0, 0.0]])?;
        let sensors = q_v
            .iter()
            .map(|v| SensorModel::new(c.clone(), Matrix::scalar(1.0), Matrix::scalar(*v)))
            .collect::<Result<Vec<_>>>()?;
        let model = SystemModel::new(a, b, Matrix::scalar(q_w), sensors, Drive::Zero)?;
        let budget = PrivacyBudget::new(
            overrides.epsilon.unwrap_or(0.9),
            overrides.delta.unwrap_or(0.2),
        )?;
        Ok((model, budget))
    }
}

/// Builds the oxygen scenario with the given overrides.
pub fn build_oxygen_scenario(overrides: &ScenarioOverrides) -> Result<Scenario> {
    OxygenScenario.build(overrides)
}

/// Builds the tracking scenario with the given overrides.
pub fn build_tracking_scenario(overrides: &ScenarioOverrides) -> Result<Scenario> {
    TrackingScenario.build(overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::MechanismKind;
    use approx::assert_relative_eq;

    #[test]
    fn registry_lists_builtins() {
        let r = ScenarioRegistry::with_builtins();
        assert_eq!(r.names(), vec!["oxygen", "tracking"]);
        assert!(r.get("oxygen").is_some());
        assert!(r.build("nonsense", &ScenarioOverrides::default()).is_err());
    }

    #[test]
    fn oxygen_defaults_resolve_to_intrinsic_plan() {
        let s = build_oxygen_scenario(&ScenarioOverrides::default()).unwrap();
        assert_eq!(s.plan.kind, MechanismKind::Intrinsic);
        assert_eq!(s.plan.q_a, 0.0);
        assert_eq!(s.horizon, 200);
        assert_eq!(s.runs, 1000);
        assert_eq!(s.burn_in, 50);
    }

    #[test]
    fn oxygen_defaults_reproduce_p_min() {
        let s = build_oxygen_scenario(&ScenarioOverrides::default()).unwrap();
        let ens = assemble_ensemble(&s.model, s.solver.tol, s.solver.max_iter).unwrap();
        let profile = sensitivity_profile(&ens).unwrap();
        assert_relative_eq!(profile.p_min, 0.2435, epsilon = 1e-3);
    }

    #[test]
    fn oxygen_equal_noise_override_zeroes_sensitivity() {
        let overrides = ScenarioOverrides {
            q_v: Some(vec![0.6, 0.6]),
            ..Default::default()
        };
        let s = build_oxygen_scenario(&overrides).unwrap();
        let ens = assemble_ensemble(&s.model, s.solver.tol, s.solver.max_iter).unwrap();
        let profile = sensitivity_profile(&ens).unwrap();
        assert_eq!(profile.delta2, 0.0);
        assert_eq!(s.plan.kind, MechanismKind::Intrinsic);
    }

    #[test]
    fn tracking_defaults_resolve_to_gaussian_plan() {
        let s = build_tracking_scenario(&ScenarioOverrides::default()).unwrap();
        assert_eq!(s.plan.kind, MechanismKind::Gaussian);
        // Derived from the tracking Riccati profile at the exact ζ bound.
        assert_relative_eq!(s.plan.q_a, 0.46739, epsilon = 1e-4);
        assert!(s.plan.zeta > 0.0);
        // Intrinsic condition fails: p_min below threshold.
        let ens = assemble_ensemble(&s.model, s.solver.tol, s.solver.max_iter).unwrap();
        let profile = sensitivity_profile(&ens).unwrap();
        assert!(profile.p_min <= s.plan.threshold);
    }

    #[test]
    fn tracking_equal_noise_override_becomes_intrinsic() {
        let overrides = ScenarioOverrides {
            q_v: Some(vec![0.2, 0.2]),
            ..Default::default()
        };
        let s = build_tracking_scenario(&overrides).unwrap();
        assert_eq!(s.plan.kind, MechanismKind::Intrinsic);
    }

    #[test]
    fn oxygen_drive_is_positive_at_defaults() {
        let u = oxygen_drive(
            oxygen_constants::DEFAULT_INHALED_O2,
            oxygen_constants::DEFAULT_ALVEOLAR_CO2,
        );
        assert!(u > 0.0);
        assert_relative_eq!(u, 50.543352, epsilon = 1e-6);
    }

    #[test]
    fn rmse_is_invariant_to_drive_constants() {
        // The drive only shifts the operating point; error statistics and the
        // release plan are untouched.
        let a = build_oxygen_scenario(&ScenarioOverrides::default()).unwrap();
        let b = build_oxygen_scenario(&ScenarioOverrides {
            inhaled_oxygen_fraction: Some(1.0),
            alveolar_co2_pressure: Some(30.0),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a.plan.kind, b.plan.kind);
        let quick = |mut s: Scenario| {
            s.runs = 20;
            s.horizon = 60;
            s.burn_in = 10;
            crate::sim::run_monte_carlo(&s).unwrap().rmse_fused
        };
        let ra = quick(a);
        let rb = quick(b);
        for (x, y) in ra.iter().zip(&rb) {
            assert_relative_eq!(x, y, epsilon = 1e-9);
        }
    }
}
