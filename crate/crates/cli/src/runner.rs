//! Executes a validated scenario: builds the patch, runs the requested
//! checks in declared order, writes the JSON report and CSV curves.
//! Everything emitted to disk is deterministic given (config, seed);
//! wall-clock timing goes to stderr only.

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use nullot::apps::{
    hawking_area, lightcone_comparison_on, product_horizon_patch, rigidity_diagnostic,
    schwarzschild_horizon_patch, stability_experiment, ConeScenario, HorizonScenario, RigidityMode,
};
use nullot::hypersurface::{
    build_section_patch, NullHypersurfacePatch, ParamQuad, PatchOptions, SectionSpec,
};
use nullot::nec::{nc1_check, nce_check, riccati_diagnostic, CheckConfig, VerdictPolicy};
use nullot::nullgeo::{propagate_ray, RayOptions};
use nullot::numerics::SplitMix64;
use nullot::spacetime::{MetricKind, MetricModel, WeightExpr, WeightField};
use nullot::transport::random_null_connected_pair;
use nullot::Error as CoreError;

use crate::config::{CheckName, HypersurfaceConfig, ScenarioConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status protocol: 0 = all strict checks passed, 1 = a check
/// failed, 2 = numerical abort, 3 = configuration error.
pub struct RunOutcome {
    pub report: Value,
    pub exit_status: i32,
    pub artifacts: Vec<(String, String)>,
}

struct PatchContext {
    patch: Arc<NullHypersurfacePatch>,
    cone: Option<ConeScenario>,
    horizon_offsets: Option<(f64, f64)>,
    t_future: f64,
}

pub fn run(config: &ScenarioConfig, seed: u64, tolerance_scale: f64) -> RunOutcome {
    match run_inner(config, seed, tolerance_scale) {
        Ok(outcome) => outcome,
        Err(err) => {
            let exit_status = classify_error(&err);
            let report = json!({
                "schema_version": SCHEMA_VERSION,
                "config": serde_json::to_value(config).unwrap(),
                "seed": seed,
                "error": err.to_string(),
                "results": {},
                "exit_status": exit_status,
            });
            RunOutcome {
                report,
                exit_status,
                artifacts: Vec::new(),
            }
        }
    }
}

fn classify_error(err: &CoreError) -> i32 {
    match err {
        CoreError::UnknownMetric { .. }
        | CoreError::MissingParameter { .. }
        | CoreError::InvalidConfig(_)
        | CoreError::ExprParse { .. }
        | CoreError::OutOfChart { .. }
        | CoreError::InvalidN { .. } => 3,
        _ => 2,
    }
}

fn run_inner(
    config: &ScenarioConfig,
    seed: u64,
    tolerance_scale: f64,
) -> Result<RunOutcome, CoreError> {
    let model = config.metric_model()?;
    let weight = config.weight_field()?;
    let n_eff = config.effective_dimension(&model);
    let mut check_config =
        CheckConfig::new(n_eff)?.with_tolerance(config.tolerances.tol_c * tolerance_scale);
    check_config.grid_refinement = config.tolerances.grid_refinement.max(1);

    let ctx = build_patch(config, &model, &weight, check_config.grid_refinement)?;
    let mut results = Map::new();
    let mut artifacts = Vec::new();
    let mut all_passed = true;

    for check in &config.checks {
        match check {
            CheckName::Nc1 => {
                let report = nc1_check(&ctx.patch, &check_config)?;
                all_passed &= report.verdict;
                results.insert("nc1".into(), serde_json::to_value(&report).unwrap());
            }
            CheckName::Nce => {
                let mut rng = SplitMix64::new(seed ^ 0x6e_6365);
                let pairs: Result<Vec<_>, _> = (0..config.nce_pairs)
                    .map(|_| random_null_connected_pair(&ctx.patch, &mut rng))
                    .collect();
                let report = nce_check(&ctx.patch, &check_config, &pairs?)?;
                all_passed &= report.verdict;
                for (k, curve) in report.curves.iter().enumerate() {
                    let mut csv = String::from("t,entropy,entropy_power\n");
                    for (t, e, u) in &curve.samples {
                        csv.push_str(&format!("{t:.17e},{e:.17e},{u:.17e}\n"));
                    }
                    artifacts.push((format!("entropy_curve_{k:02}.csv"), csv));
                }
                let slim = json!({
                    "verdict": report.verdict,
                    "worst_chord_margin": report.worst_chord_margin,
                    "worst_concavity_margin": report.worst_concavity_margin,
                    "pairs": report.curves.len(),
                    "tol": report.tol,
                });
                results.insert("nce".into(), slim);
            }
            CheckName::Riccati => {
                let curves = riccati_diagnostic(&ctx.patch, &check_config, 16)?;
                let mut csv = String::from("node,t,defect\n");
                let mut worst = f64::NEG_INFINITY;
                for c in &curves {
                    for (t, d) in c.ts.iter().zip(&c.defect) {
                        worst = worst.max(*d);
                        csv.push_str(&format!("{},{t:.17e},{d:.17e}\n", c.node));
                    }
                }
                artifacts.push(("riccati.csv".into(), csv));
                let pass = worst <= check_config.tol_c.max(1e-5);
                all_passed &= pass;
                results.insert(
                    "riccati".into(),
                    json!({"verdict": pass, "max_defect": worst}),
                );
            }
            CheckName::Lightcone => {
                let scenario = ctx.cone.as_ref().ok_or_else(|| {
                    CoreError::InvalidConfig("lightcone requires a cone patch".into())
                })?;
                let mut cfg = check_config.clone();
                cfg.policy = VerdictPolicy::MarginReport;
                let curve = lightcone_comparison_on(&ctx.patch, scenario, &cfg)?;
                all_passed &= curve.verdict;
                let mut csv = String::from("s,a_raw,a_normalized\n");
                for ((s, r), n) in curve.s.iter().zip(&curve.raw).zip(&curve.normalized) {
                    csv.push_str(&format!("{s:.17e},{r:.17e},{n:.17e}\n"));
                }
                artifacts.push(("lightcone.csv".into(), csv));
                results.insert("lightcone".into(), serde_json::to_value(&curve).unwrap());
            }
            CheckName::Hawking => {
                let (t1, t2) = ctx.horizon_offsets.ok_or_else(|| {
                    CoreError::InvalidConfig("hawking requires section_offsets".into())
                })?;
                let scenario = HorizonScenario {
                    patch: (*ctx.patch).clone(),
                    t1: vec![t1; ctx.patch.len()],
                    t2: vec![t2; ctx.patch.len()],
                    t_future: ctx.t_future,
                    config: check_config.clone(),
                };
                let report = hawking_area(&scenario)?;
                all_passed &= report.verdict;
                results.insert("hawking".into(), serde_json::to_value(&report).unwrap());
            }
            CheckName::Rigidity => {
                let mode = if ctx.cone.is_some() {
                    RigidityMode::Cone
                } else {
                    RigidityMode::Horizon
                };
                let report = rigidity_diagnostic(&ctx.patch, &check_config, mode)?;
                results.insert("rigidity".into(), serde_json::to_value(&report).unwrap());
            }
            CheckName::Stability => {
                let stability = config
                    .stability
                    .as_ref()
                    .ok_or_else(|| CoreError::InvalidConfig("stability block missing".into()))?;
                let scenario = ctx.cone.as_ref().ok_or_else(|| {
                    CoreError::InvalidConfig("stability requires a cone patch".into())
                })?;
                let sigma = stability.sigma;
                let offset = stability.sigma_offset;
                let n = model.dim();
                let family = move |eps: f64| -> nullot::Result<MetricModel> {
                    Ok(MetricModel::perturbed_anisotropic(
                        n,
                        1.0,
                        sigma * eps + offset,
                    ))
                };
                let report = stability_experiment(
                    &family,
                    &stability.epsilons,
                    &[],
                    scenario,
                    &check_config,
                )?;
                all_passed &= report.limit_consistent;
                let mut csv = String::from("epsilon,worst_margin\n");
                for e in &report.entries {
                    csv.push_str(&format!("{:.17e},{:.17e}\n", e.epsilon, e.worst_margin));
                }
                artifacts.push(("stability.csv".into(), csv));
                results.insert("stability".into(), serde_json::to_value(&report).unwrap());
            }
        }
    }

    if config.dump_patch {
        artifacts.push(("patch.csv".into(), ctx.patch.to_csv()));
    }

    let exit_status = if all_passed { 0 } else { 1 };
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "config": serde_json::to_value(config).unwrap(),
        "seed": seed,
        "results": Value::Object(results),
        "integrator": integrator_estimate(&ctx.patch)?,
        "exit_status": exit_status,
    });
    Ok(RunOutcome {
        report,
        exit_status,
        artifacts,
    })
}

/// Deterministic integrator error estimate: re-integrate the first
/// generator at twice the resolution and compare the terminal area factor.
fn integrator_estimate(patch: &NullHypersurfacePatch) -> Result<Value, CoreError> {
    let ray = &patch.rays[0];
    let (_, t_hi) = ray.window();
    if t_hi <= 0.0 {
        return Ok(Value::Null);
    }
    let opts = RayOptions::window(0.0, t_hi).with_resolution(2 * patch.options.samples_per_unit);
    let fine = propagate_ray(&patch.model, ray.reinit(), &opts, |_, _| Ok(0.0))?;
    let coarse_val = ray.samples.last().unwrap().area_factor;
    let fine_val = fine.samples.last().unwrap().area_factor;
    let delta = (coarse_val - fine_val).abs() / fine_val.abs().max(1e-300);
    Ok(json!({ "step_halving_relative_delta": delta }))
}

fn build_patch(
    config: &ScenarioConfig,
    model: &MetricModel,
    weight: &WeightField,
    refinement: usize,
) -> Result<PatchContext, CoreError> {
    let n_eff = config.effective_dimension(model);
    let refine = |spu: usize| spu * refinement;
    match &config.hypersurface {
        HypersurfaceConfig::Cone {
            tip,
            resolution,
            s_min,
            s_max,
            samples_per_unit,
        } => {
            let mut scenario = ConeScenario::new(model.clone(), n_eff);
            if let Some(t) = tip {
                scenario.tip = t.clone();
            }
            scenario.resolution = resolution.clone();
            scenario.s_min = *s_min;
            scenario.s_max = *s_max;
            scenario.weight = weight.clone();
            if let Some(spu) = samples_per_unit {
                scenario.samples_per_unit = *spu;
            }
            scenario.samples_per_unit = refine(scenario.samples_per_unit);
            if !weight.is_zero() {
                scenario.phi_at_tip = None;
            }
            let patch = Arc::new(scenario.build_patch()?);
            Ok(PatchContext {
                patch,
                cone: Some(scenario),
                horizon_offsets: None,
                t_future: 0.0,
            })
        }
        HypersurfaceConfig::Horizon {
            resolution,
            t_max,
            section_offsets,
            t_future,
            samples_per_unit,
        } => {
            let spu = refine(samples_per_unit.unwrap_or(nullot::nullgeo::DEFAULT_SAMPLES_PER_UNIT));
            let res = (
                resolution[0],
                resolution.get(1).copied().unwrap_or(resolution[0]),
            );
            let patch = match model.kind() {
                MetricKind::SchwarzschildLemaitre => {
                    let r_s = config.metric.params.get("r_s").copied().unwrap_or(1.0);
                    schwarzschild_horizon_patch(r_s, res, *t_max, weight, spu)?
                }
                MetricKind::ProductSurfaceM2 => {
                    let c = config
                        .metric
                        .params
                        .get("curvature")
                        .copied()
                        .unwrap_or(0.0);
                    product_horizon_patch(c, res, *t_max, weight, spu)?
                }
                other => {
                    return Err(CoreError::InvalidConfig(format!(
                        "metric kind {other} has no canonical horizon"
                    )))
                }
            };
            let offsets = *section_offsets;
            let t_future =
                t_future.unwrap_or_else(|| offsets.map_or(1.0, |(a, b)| 10.0 * (b - a).max(0.1)));
            Ok(PatchContext {
                patch: Arc::new(patch),
                cone: None,
                horizon_offsets: offsets,
                t_future,
            })
        }
        HypersurfaceConfig::CustomSection {
            embed,
            l_field,
            params,
            window,
            samples_per_unit,
        } => {
            let spu = refine(samples_per_unit.unwrap_or(nullot::nullgeo::DEFAULT_SAMPLES_PER_UNIT));
            let names = ["u", "v", "w"];
            let embed_exprs: Vec<WeightExpr> = embed
                .iter()
                .map(|e| WeightExpr::parse(e))
                .collect::<Result<_, _>>()?;
            let l_exprs: Vec<WeightExpr> = l_field
                .iter()
                .map(|e| WeightExpr::parse(e))
                .collect::<Result<_, _>>()?;
            let eval_all = move |exprs: &[WeightExpr], u: &[f64]| -> nullot::Result<Vec<f64>> {
                exprs
                    .iter()
                    .map(|e| {
                        e.eval(&|name: &str| names.iter().position(|n| *n == name).map(|i| u[i]))
                    })
                    .collect()
            };
            let e2 = embed_exprs.clone();
            let l2 = l_exprs.clone();
            let spec = SectionSpec {
                param_dim: params.len(),
                embed: Arc::new(move |u: &[f64]| eval_all(&e2, u)),
                l_field: Arc::new(move |u: &[f64]| {
                    l2.iter()
                        .map(|e| {
                            e.eval(&|name: &str| {
                                names.iter().position(|n| *n == name).map(|i| u[i])
                            })
                        })
                        .collect()
                }),
                fd_step: 1e-4,
            };
            let mut quad = ParamQuad {
                nodes: vec![Vec::new()],
                weights: vec![1.0],
            };
            for p in params {
                if let Some((a, b)) = p.range {
                    let boxq = ParamQuad::gauss_box(&[(a, b)], &[p.count]);
                    let mut nodes = Vec::new();
                    let mut weights = Vec::new();
                    for (n0, w0) in quad.nodes.iter().zip(&quad.weights) {
                        for (n1, w1) in boxq.nodes.iter().zip(&boxq.weights) {
                            let mut nn = n0.clone();
                            nn.extend_from_slice(n1);
                            nodes.push(nn);
                            weights.push(w0 * w1);
                        }
                    }
                    quad = ParamQuad { nodes, weights };
                } else if let Some(period) = p.period {
                    quad = quad.cross_periodic(period, p.count);
                }
            }
            let opts = PatchOptions::window(window.0, window.1).with_resolution(spu);
            let patch = build_section_patch(model, &spec, &quad, weight, &opts)?;
            Ok(PatchContext {
                patch: Arc::new(patch),
                cone: None,
                horizon_offsets: None,
                t_future: 1.0,
            })
        }
    }
}

/// Validate the shape of an emitted report: required top-level fields and
/// the per-check payloads that must be present.
pub fn validate_report(report: &Value) -> Result<(), String> {
    let obj = report.as_object().ok_or("report is not an object")?;
    for key in ["schema_version", "config", "seed", "results", "exit_status"] {
        if !obj.contains_key(key) {
            return Err(format!("missing field `{key}`"));
        }
    }
    if obj["schema_version"].as_u64() != Some(SCHEMA_VERSION as u64) {
        return Err("unexpected schema version".to_string());
    }
    let results = obj["results"]
        .as_object()
        .ok_or("results is not an object")?;
    for (name, payload) in results {
        let p = payload
            .as_object()
            .ok_or_else(|| format!("{name}: not an object"))?;
        let required: &[&str] = match name.as_str() {
            "nc1" => &["verdict", "worst_margin", "per_generator"],
            "nce" => &["verdict", "worst_chord_margin", "worst_concavity_margin"],
            "riccati" => &["verdict", "max_defect"],
            "lightcone" => &["s", "raw", "normalized", "monotonicity_margin", "verdict"],
            "hawking" => &["area1", "area2", "verdict", "equality", "nc1_passed"],
            "rigidity" => &[
                "mode",
                "area_factor_deviation",
                "isotropy_deviation",
                "weighted_ricci_deviation",
            ],
            "stability" => &["entries", "base_margin", "limit_consistent"],
            other => return Err(format!("unknown result `{other}`")),
        };
        for r in required {
            if !p.contains_key(*r) {
                return Err(format!("{name}: missing `{r}`"));
            }
        }
    }
    Ok(())
}

/// Write the report and artifacts into `out_dir`.
pub fn write_outputs(outcome: &RunOutcome, out_dir: &Path) -> std::io::Result<std::path::PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let report_path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&outcome.report).expect("serializable report");
    text.push('\n');
    std::fs::write(&report_path, text)?;
    for (name, contents) in &outcome.artifacts {
        std::fs::write(out_dir.join(name), contents)?;
    }
    Ok(report_path)
}
