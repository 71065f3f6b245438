//! Scenario configuration: JSON with strict key checking, one scenario per
//! file. Parse errors carry line/column from the JSON reader; validation
//! collects every violation before reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use nullot::spacetime::{build_metric, MetricModel, Smoothness, WeightExpr, WeightField};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub metric: MetricConfig,
    pub hypersurface: HypersurfaceConfig,
    #[serde(default)]
    pub weight: WeightConfig,
    /// Effective dimension bound N; defaults to the metric dimension.
    #[serde(default)]
    pub n_effective: Option<f64>,
    pub checks: Vec<CheckName>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Random null-connected pairs per NCe run.
    #[serde(default = "default_nce_pairs")]
    pub nce_pairs: usize,
    #[serde(default)]
    pub stability: Option<StabilityConfig>,
    /// Also dump all generator samples as CSV.
    #[serde(default)]
    pub dump_patch: bool,
}

fn default_seed() -> u64 {
    1
}

fn default_nce_pairs() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HypersurfaceConfig {
    /// Future light cone at a tip point.
    Cone {
        #[serde(default)]
        tip: Option<Vec<f64>>,
        resolution: Vec<usize>,
        s_min: f64,
        s_max: f64,
        #[serde(default)]
        samples_per_unit: Option<usize>,
    },
    /// The canonical horizon of the metric (Schwarzschild-Lemaitre event
    /// horizon or the product-metric null slab).
    Horizon {
        resolution: Vec<usize>,
        t_max: f64,
        /// Graph parameters of the two sections compared by the Hawking
        /// check.
        #[serde(default)]
        section_offsets: Option<(f64, f64)>,
        #[serde(default)]
        t_future: Option<f64>,
        #[serde(default)]
        samples_per_unit: Option<usize>,
    },
    /// Explicit section: embedding and L given componentwise as
    /// expressions over the parameters `u`, `v`, `w`.
    CustomSection {
        embed: Vec<String>,
        l_field: Vec<String>,
        params: Vec<ParamRangeConfig>,
        window: (f64, f64),
        #[serde(default)]
        samples_per_unit: Option<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRangeConfig {
    /// Gauss-Legendre on a range, or uniform-periodic with this period.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
    #[serde(default)]
    pub period: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub expr: String,
    pub smoothness: Smoothness,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            expr: "zero".to_string(),
            smoothness: Smoothness::C2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    Nc1,
    Nce,
    Riccati,
    Lightcone,
    Hawking,
    Rigidity,
    Stability,
}

impl std::fmt::Display for CheckName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CheckName::Nc1 => "nc1",
            CheckName::Nce => "nce",
            CheckName::Riccati => "riccati",
            CheckName::Lightcone => "lightcone",
            CheckName::Hawking => "hawking",
            CheckName::Rigidity => "rigidity",
            CheckName::Stability => "stability",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol_c")]
    pub tol_c: f64,
    /// Multiplies the per-unit ray resolution of the built patch.
    #[serde(default = "default_refinement")]
    pub grid_refinement: usize,
}

fn default_tol_c() -> f64 {
    1e-7
}

fn default_refinement() -> usize {
    1
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_c: default_tol_c(),
            grid_refinement: default_refinement(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    /// Sign of the anisotropic perturbation `h = sigma t^2 dx (x) dx`.
    pub sigma: f64,
    pub epsilons: Vec<f64>,
    /// Constant offset added to `sigma * epsilon` (yields families whose
    /// NEC verdict flips at a threshold).
    #[serde(default)]
    pub sigma_offset: f64,
}

/// Parse failure with position, or a list of semantic violations.
#[derive(Debug)]
pub enum ConfigError {
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    Validation(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse {
                line,
                column,
                message,
            } => {
                write!(f, "parse error at line {line}, column {column}: {message}")
            }
            ConfigError::Validation(violations) => {
                writeln!(
                    f,
                    "invalid configuration ({} violations):",
                    violations.len()
                )?;
                for v in violations {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parse and validate a scenario configuration.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(&config)?;
    Ok(config)
}

fn validate(config: &ScenarioConfig) -> Result<(), ConfigError> {
    let mut violations = Vec::new();
    let metric = match build_metric(&config.metric.name, &config.metric.params) {
        Ok(m) => Some(m),
        Err(e) => {
            violations.push(format!("metric: {e}"));
            None
        }
    };
    if let Some(n_eff) = config.n_effective {
        if !(n_eff > 2.0) {
            violations.push(format!("N must exceed 2 (got {n_eff})"));
        }
        if let Some(m) = &metric {
            if n_eff < m.dim() as f64 {
                violations.push(format!(
                    "N = {n_eff} is below the manifold dimension n = {}",
                    m.dim()
                ));
            }
        }
    }
    if config.checks.is_empty() {
        violations.push("at least one check must be requested".to_string());
    }
    if !(config.tolerances.tol_c > 0.0) {
        violations.push("tol_c must be positive".to_string());
    }
    match &config.hypersurface {
        HypersurfaceConfig::Cone {
            resolution,
            s_min,
            s_max,
            tip,
            ..
        } => {
            for r in resolution {
                if *r < 8 {
                    violations.push(format!("cone resolution {r} below the minimum of 8"));
                }
            }
            if let Some(m) = &metric {
                if resolution.len() != (m.dim() - 2).min(3) {
                    violations.push(format!(
                        "cone resolution needs {} entries for dimension {}",
                        (m.dim() - 2).min(3),
                        m.dim()
                    ));
                }
                if let Some(t) = tip {
                    if t.len() != m.dim() {
                        violations.push("tip dimension mismatch".to_string());
                    }
                }
            }
            if !(0.0 < *s_min && s_min < s_max) {
                violations.push(format!("need 0 < s_min < s_max (got {s_min}, {s_max})"));
            }
        }
        HypersurfaceConfig::Horizon {
            resolution,
            t_max,
            section_offsets,
            t_future,
            ..
        } => {
            for r in resolution {
                if *r < 8 {
                    violations.push(format!("horizon resolution {r} below the minimum of 8"));
                }
            }
            if let Some(m) = &metric {
                let ok = matches!(
                    m.kind(),
                    nullot::spacetime::MetricKind::SchwarzschildLemaitre
                        | nullot::spacetime::MetricKind::ProductSurfaceM2
                );
                if !ok {
                    violations.push(format!(
                        "metric `{}` has no canonical horizon; use kind = cone or custom-section",
                        config.metric.name
                    ));
                }
            }
            if !(*t_max > 0.0) {
                violations.push("t_max must be positive".to_string());
            }
            if let Some((t1, t2)) = section_offsets {
                if t1 > t2 {
                    violations.push(format!(
                        "section offsets must satisfy t1 <= t2 (got {t1} > {t2})"
                    ));
                }
                let horizon_needed = t2 + t_future.unwrap_or(10.0 * (t2 - t1));
                if horizon_needed > *t_max {
                    violations.push(format!(
                        "t_max = {t_max} cannot certify completeness to {horizon_needed}"
                    ));
                }
            }
            if config.checks.contains(&CheckName::Lightcone) {
                violations.push("lightcone check requires kind = cone".to_string());
            }
        }
        HypersurfaceConfig::CustomSection {
            embed,
            l_field,
            params,
            window,
            ..
        } => {
            if let Some(m) = &metric {
                if embed.len() != m.dim() || l_field.len() != m.dim() {
                    violations.push("embed/l_field must have one expression per coordinate".into());
                }
                if params.len() != m.dim() - 2 {
                    violations.push(format!(
                        "custom section needs {} parameters for dimension {}",
                        m.dim() - 2,
                        m.dim()
                    ));
                }
            }
            for (k, p) in params.iter().enumerate() {
                if p.count < 8 {
                    violations.push(format!("parameter {k} count below the minimum of 8"));
                }
                if p.range.is_none() == p.period.is_none() {
                    violations.push(format!(
                        "parameter {k}: give exactly one of range or period"
                    ));
                }
            }
            for (k, e) in embed.iter().chain(l_field.iter()).enumerate() {
                if let Err(err) = WeightExpr::parse(e) {
                    violations.push(format!("expression {k}: {err}"));
                }
            }
            if !(window.0 < window.1) {
                violations.push("window must be increasing".to_string());
            }
            if config.checks.contains(&CheckName::Lightcone) {
                violations.push("lightcone check requires kind = cone".to_string());
            }
        }
    }
    if config.checks.contains(&CheckName::Stability) {
        match (&config.stability, &config.hypersurface) {
            (None, _) => violations.push("stability check requires a stability block".into()),
            (Some(_), HypersurfaceConfig::Cone { .. }) => {}
            (Some(_), _) => {
                violations.push("stability check requires kind = cone".into());
            }
        }
        if let Some(m) = &metric {
            if m.kind() != nullot::spacetime::MetricKind::Minkowski {
                violations
                    .push("stability families perturb Minkowski; use metric = minkowski".into());
            }
        }
    }
    if let Err(e) = WeightField::from_expr(&config.weight.expr, config.weight.smoothness) {
        violations.push(format!("weight: {e}"));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Validation(violations))
    }
}

impl ScenarioConfig {
    pub fn metric_model(&self) -> nullot::Result<MetricModel> {
        build_metric(&self.metric.name, &self.metric.params)
    }

    pub fn weight_field(&self) -> nullot::Result<WeightField> {
        WeightField::from_expr(&self.weight.expr, self.weight.smoothness)
    }

    /// N, filled in from the metric dimension when omitted.
    pub fn effective_dimension(&self, model: &MetricModel) -> f64 {
        self.n_effective.unwrap_or(model.dim() as f64)
    }
}
