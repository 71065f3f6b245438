//! Executable forms of the geometric applications: the weighted light-cone
//! comparison, the weighted Hawking area theorem, rigidity diagnostics and
//! a metric-perturbation stability experiment, plus the scenario catalog
//! the test suites run against.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypersurface::{
    build_cone_patch, build_section_patch, ConeSpec, NullHypersurfacePatch, ParamQuad,
    PatchOptions, SectionSpec,
};
use crate::nec::{nc1_check, weighted_null_ricci, CheckConfig, VerdictPolicy};
use crate::numerics::unit_sphere_area;
use crate::spacetime::{MetricFn, MetricModel, Smoothness, WeightField};

/// A future light cone scenario.
#[derive(Clone)]
pub struct ConeScenario {
    pub model: MetricModel,
    pub tip: Vec<f64>,
    /// Node counts on the direction sphere.
    pub resolution: Vec<usize>,
    pub s_min: f64,
    pub s_max: f64,
    pub weight: WeightField,
    pub n_eff: f64,
    pub samples_per_unit: usize,
    /// `e^Phi` limit value at the tip when the weight extends continuously;
    /// otherwise the comparison curve is normalized by its first value.
    pub phi_at_tip: Option<f64>,
}

impl ConeScenario {
    pub fn new(model: MetricModel, n_eff: f64) -> Self {
        let n = model.dim();
        let resolution = match n - 2 {
            1 => vec![16],
            2 => vec![12, 24],
            _ => vec![8, 8, 16],
        };
        let tip = vec![0.0; n];
        Self {
            model,
            tip,
            resolution,
            s_min: 0.01,
            s_max: 10.0,
            weight: WeightField::zero(),
            n_eff,
            samples_per_unit: crate::nullgeo::DEFAULT_SAMPLES_PER_UNIT,
            phi_at_tip: Some(1.0),
        }
    }

    /// Reference slice radius: 1 when inside the range, else the midpoint.
    fn s_ref(&self) -> f64 {
        if self.s_min <= 1.0 && 1.0 <= self.s_max {
            1.0
        } else {
            0.5 * (self.s_min + self.s_max)
        }
    }

    pub fn build_patch(&self) -> Result<NullHypersurfacePatch> {
        let s_ref = self.s_ref();
        let spec = ConeSpec {
            tip: self.tip.clone(),
            s_ref,
            resolution: self.resolution.clone(),
        };
        let opts = PatchOptions::window(self.s_min - s_ref, self.s_max - s_ref)
            .with_resolution(self.samples_per_unit);
        build_cone_patch(&self.model, &spec, &self.weight, &opts)
    }
}

/// The normalized area-comparison curve of the light-cone theorem.
#[derive(Debug, Clone, Serialize)]
pub struct LightconeCurve {
    pub s: Vec<f64>,
    /// `A(s) = (1/(omega_{N-2} s^{N-2})) int_{S_s} e^Phi dH^{n-2}`.
    pub raw: Vec<f64>,
    /// `raw / limit`: identically 1 on the flat rigid models.
    pub normalized: Vec<f64>,
    /// `e^{Phi(tip)}` when available, otherwise the first raw value.
    pub limit: f64,
    /// Smallest of `(A_j - A_{j+1}) / limit` over the grid: `>= -tol`
    /// certifies the non-increasing property.
    pub monotonicity_margin: f64,
    /// |A(s_min) - limit| / limit when the tip value is prescribed.
    pub limit_deviation: Option<f64>,
    pub verdict: bool,
}

/// Weighted light-cone comparison: computes the normalized weighted area
/// of the affine slices `S_s` on a log-spaced grid (snapped onto the ray
/// grid) and certifies monotonicity.
pub fn lightcone_comparison(
    scenario: &ConeScenario,
    config: &CheckConfig,
) -> Result<LightconeCurve> {
    let patch = scenario.build_patch()?;
    lightcone_comparison_on(&patch, scenario, config)
}

/// Same, over an already-built patch (so callers can reuse it).
pub fn lightcone_comparison_on(
    patch: &NullHypersurfacePatch,
    scenario: &ConeScenario,
    config: &CheckConfig,
) -> Result<LightconeCurve> {
    for ray in &patch.rays {
        if let Some(t) = ray.focal_backward.or(ray.focal_forward) {
            return Err(Error::FocalPoint {
                t,
                floor: crate::nullgeo::DET_FLOOR,
            });
        }
    }
    let s_ref = patch.affine_origin;
    let omega = unit_sphere_area(scenario.n_eff.round() as usize - 2);
    // log-spaced s grid snapped onto the common ray grid
    let spu = scenario.samples_per_unit as f64;
    // common window across all rays (step snapping makes ends ray-exact)
    let (mut w_lo, mut w_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for ray in &patch.rays {
        let (a, b) = ray.window();
        w_lo = w_lo.max(a);
        w_hi = w_hi.min(b);
    }
    let n_points = 33;
    let mut ts: Vec<f64> = (0..n_points)
        .map(|k| {
            let f = k as f64 / (n_points - 1) as f64;
            let s = scenario.s_min * (scenario.s_max / scenario.s_min).powf(f);
            (((s - s_ref) * spu).round() / spu).clamp(w_lo, w_hi)
        })
        .collect();
    ts.dedup();
    let names = &patch.model.chart().names;

    let mut s_out = Vec::with_capacity(ts.len());
    let mut raw = Vec::with_capacity(ts.len());
    for &t in &ts {
        let mut area = 0.0;
        let mut s = f64::NAN;
        for (i, ray) in patch.rays.iter().enumerate() {
            // nearest stored sample to the requested parameter (rays share
            // the nominal grid up to the window-snapping of the step)
            let grid = ray.grid();
            let j = match crate::numerics::bracket(&grid, t) {
                Some(j) if t - grid[j] > grid[j + 1] - t => j + 1,
                Some(j) => j,
                None => {
                    return Err(Error::OutOfWindow {
                        t,
                        t_min: grid[0],
                        t_max: *grid.last().unwrap(),
                    })
                }
            };
            let sample = &ray.samples[j];
            s = s_ref + sample.t;
            let ephi = patch
                .weight
                .eval(names, &sample.position, Some(patch.affine_of(i, sample.t)))?
                .exp();
            area += patch.node_measure(i) * sample.area_factor * ephi;
        }
        s_out.push(s);
        raw.push(area / (omega * s.powf(scenario.n_eff - 2.0)));
    }

    let limit = scenario.phi_at_tip.unwrap_or(raw[0]);
    let normalized: Vec<f64> = raw.iter().map(|a| a / limit).collect();
    let mut mono = f64::INFINITY;
    for w in raw.windows(2) {
        mono = mono.min((w[0] - w[1]) / limit);
    }
    let limit_deviation = scenario.phi_at_tip.map(|p| (raw[0] - p).abs() / p);
    let verdict = mono >= -config.tol_c;
    if !verdict && config.policy == VerdictPolicy::Strict {
        let j = raw
            .windows(2)
            .position(|w| (w[0] - w[1]) / limit <= mono + 1e-300)
            .unwrap_or(0);
        return Err(Error::MonotonicityViolation {
            s: s_out[j + 1],
            violation: -mono,
        });
    }
    Ok(LightconeCurve {
        s: s_out,
        raw,
        normalized,
        limit,
        monotonicity_margin: mono,
        limit_deviation,
        verdict,
    })
}

/// A horizon-type scenario: a patch over a base section and two graph
/// parameters with `t1 <= t2` (so the first section lies in the causal
/// past of the second), plus the future-completeness certificate window.
pub struct HorizonScenario {
    pub patch: NullHypersurfacePatch,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub t_future: f64,
    pub config: CheckConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct HawkingReport {
    pub area1: f64,
    pub area2: f64,
    pub verdict: bool,
    /// Equality within the rigidity-trigger tolerance (relative 1e-6).
    pub equality: bool,
    pub nc1_passed: bool,
}

/// Weighted Hawking area comparison between two graph sections of the
/// patch, with a numerical future-completeness certificate.
pub fn hawking_area(scenario: &HorizonScenario) -> Result<HawkingReport> {
    let patch = &scenario.patch;
    let nc1 = nc1_check(patch, &scenario.config)?;
    // completeness certificate: every generator must extend to
    // max(t2) + t_future without focal points or chart exit
    let needed = scenario.t2.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) + scenario.t_future;
    for (i, ray) in patch.rays.iter().enumerate() {
        let (_, hi) = ray.window();
        if let Some(t_focal) = ray.focal_forward {
            return Err(Error::NotComplete {
                node: i,
                reason: format!("focal point at t = {t_focal:.6} inside the certificate window"),
            });
        }
        if hi + 1e-9 < needed {
            return Err(Error::NotComplete {
                node: i,
                reason: format!("window ends at {hi}, certificate needs {needed}"),
            });
        }
    }
    let names = &patch.model.chart().names;
    let weighted_area = |t_of: &[f64]| -> Result<f64> {
        let section = patch.graph_section_transfer(t_of)?;
        let mut acc = 0.0;
        for i in 0..section.len() {
            let ephi = patch
                .weight
                .eval(names, &section.points[i], Some(patch.affine_of(i, t_of[i])))?
                .exp();
            acc += section.weights[i] * section.area_elements[i] * ephi;
        }
        Ok(acc)
    };
    let area1 = weighted_area(&scenario.t1)?;
    let area2 = weighted_area(&scenario.t2)?;
    let scale = area1.abs().max(area2.abs()).max(1e-300);
    Ok(HawkingReport {
        area1,
        area2,
        verdict: nc1.verdict && area1 <= area2 + scenario.config.tol_c * scale,
        equality: (area1 - area2).abs() <= 1e-6 * scale,
        nc1_passed: nc1.verdict,
    })
}

/// What shape the rigidity case predicts for the Jacobi matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RigidityMode {
    /// Hawking equality: `det Jbar` constant, `Jbar = Id`.
    Horizon,
    /// Cone equality: `det Jbar` proportional to the affine radius power.
    Cone,
}

#[derive(Debug, Clone, Serialize)]
pub struct RigidityReport {
    pub mode: RigidityMode,
    /// (i) worst deviation of `det Jbar` from the model profile.
    pub area_factor_deviation: f64,
    /// (ii) worst deviation of `Jbar / lambda` from the identity,
    /// `lambda = (det Jbar)^(1/(n-2))`.
    pub isotropy_deviation: f64,
    /// (iii) worst `|Ric^{g,Phi,N}(L,L)|` along the generators.
    pub weighted_ricci_deviation: f64,
}

/// Rigidity diagnostics: run after an equality case to measure how close
/// the patch is to the rigid model (no pass/fail semantics).
pub fn rigidity_diagnostic(
    patch: &NullHypersurfacePatch,
    config: &CheckConfig,
    mode: RigidityMode,
) -> Result<RigidityReport> {
    let m = patch.dim() - 2;
    let s_ref = patch.affine_origin;
    let mut dev_area: f64 = 0.0;
    let mut dev_iso: f64 = 0.0;
    for ray in &patch.rays {
        for s in &ray.samples {
            let expected = match mode {
                RigidityMode::Horizon => 1.0,
                RigidityMode::Cone => ((s_ref + s.t) / s_ref).powi(m as i32),
            };
            dev_area = dev_area.max((s.area_factor / expected - 1.0).abs());
            let lambda = s.area_factor.powf(1.0 / m as f64);
            for r in 0..m {
                for c in 0..m {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    dev_iso = dev_iso.max((s.jbar[r * m + c] / lambda - expect).abs());
                }
            }
        }
    }
    // (iii) weighted Ricci on a strided subsample
    let mut dev_ric: f64 = 0.0;
    for (node, ray) in patch.rays.iter().enumerate() {
        let len = ray.samples.len();
        let stride = (len / 16).max(1);
        let mut i = 2;
        while i + 2 < len {
            dev_ric = dev_ric.max(weighted_null_ricci(patch, config.n_eff, node, i)?.abs());
            i += stride;
        }
    }
    Ok(RigidityReport {
        mode,
        area_factor_deviation: dev_area,
        isotropy_deviation: dev_iso,
        weighted_ricci_deviation: dev_ric,
    })
}

/// One row of the stability experiment.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityEntry {
    pub epsilon: f64,
    pub worst_margin: f64,
    pub verdict: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub entries: Vec<StabilityEntry>,
    /// Margin of the unperturbed run.
    pub base_margin: f64,
    /// |margin(eps) - margin(0)| convergence exponent from a log-log fit
    /// (NaN when fewer than 3 nonzero epsilons).
    pub convergence_rate: f64,
    /// The stability conclusion at desk scale: if every perturbed member
    /// passed, the base margin must pass too.
    pub limit_consistent: bool,
}

/// Stability experiment: check NC1 on the cone patches of the family
/// `eps -> g_eps` and tabulate worst margins against `eps`. Each metric is
/// signature-checked on chart samples first.
pub fn stability_experiment(
    family: &dyn Fn(f64) -> Result<MetricModel>,
    epsilons: &[f64],
    weights: &[WeightField],
    scenario: &ConeScenario,
    config: &CheckConfig,
) -> Result<StabilityReport> {
    assert!(!epsilons.is_empty());
    let mut entries = Vec::with_capacity(epsilons.len());
    let mut base_margin = f64::NAN;
    for (k, &eps) in epsilons.iter().enumerate() {
        let model = family(eps)?;
        // signature check at deterministic chart samples near the cone
        let mut rng = crate::numerics::SplitMix64::new(314159);
        for _ in 0..32 {
            let x: Vec<f64> = (0..model.dim())
                .map(|i| {
                    if i == 0 {
                        scenario.tip[0] + rng.uniform(0.0, scenario.s_max.min(1.0))
                    } else {
                        scenario.tip[i] + rng.uniform(-1.0, 1.0)
                    }
                })
                .collect();
            if model.chart().contains(&x) && !model.signature_ok(&x) {
                return Err(Error::SignatureLoss {
                    point: x,
                    epsilon: eps,
                });
            }
        }
        let weight = weights.get(k).cloned().unwrap_or_else(WeightField::zero);
        let mut sc = scenario.clone();
        sc.model = model;
        sc.weight = weight;
        let patch = sc.build_patch()?;
        let report = nc1_check(&patch, config)?;
        if eps == 0.0 {
            base_margin = report.worst_margin;
        }
        entries.push(StabilityEntry {
            epsilon: eps,
            worst_margin: report.worst_margin,
            verdict: report.verdict,
        });
    }
    if base_margin.is_nan() {
        let model = family(0.0)?;
        let mut sc = scenario.clone();
        sc.model = model;
        let patch = sc.build_patch()?;
        base_margin = nc1_check(&patch, config)?.worst_margin;
    }
    // convergence rate of |margin(eps) - margin(0)| ~ C eps^q
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for e in &entries {
        let d = (e.worst_margin - base_margin).abs();
        if e.epsilon > 0.0 && d > 1e-300 {
            xs.push(e.epsilon.ln());
            ys.push(d.ln());
        }
    }
    let convergence_rate = if xs.len() >= 3 {
        let id = |x: f64| x;
        let one = |_: f64| 1.0;
        let basis: Vec<&dyn Fn(f64) -> f64> = vec![&id, &one];
        let (c, _) = crate::numerics::least_squares_fit(&xs, &ys, &basis);
        c[0]
    } else {
        f64::NAN
    };
    let all_perturbed_pass = entries.iter().all(|e| e.verdict);
    let limit_consistent = !all_perturbed_pass || base_margin >= -config.tol_c;
    Ok(StabilityReport {
        entries,
        base_margin,
        convergence_rate,
        limit_consistent,
    })
}

// ---------------------------------------------------------------------
// Scenario catalog
// ---------------------------------------------------------------------

/// What kind of hypersurface a catalog entry builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Cone,
    Horizon,
}

/// A named scenario of the built-in catalog.
pub struct CatalogEntry {
    pub name: &'static str,
    pub kind: ScenarioKind,
    pub n_eff: f64,
    /// Whether NC1 is expected to hold.
    pub expect_nc1: bool,
    builder: Box<dyn Fn() -> Result<NullHypersurfacePatch> + Send + Sync>,
    cone: Option<ConeScenario>,
}

impl CatalogEntry {
    pub fn build(&self) -> Result<NullHypersurfacePatch> {
        (self.builder)()
    }

    pub fn cone_scenario(&self) -> Option<&ConeScenario> {
        self.cone.as_ref()
    }

    pub fn check_config(&self) -> CheckConfig {
        CheckConfig::new(self.n_eff).unwrap()
    }
}

fn cone_entry(name: &'static str, scenario: ConeScenario, expect_nc1: bool) -> CatalogEntry {
    let n_eff = scenario.n_eff;
    let sc = scenario.clone();
    CatalogEntry {
        name,
        kind: ScenarioKind::Cone,
        n_eff,
        expect_nc1,
        builder: Box::new(move || sc.build_patch()),
        cone: Some(scenario),
    }
}

/// Schwarzschild horizon section at `tau = 0` with its affine generator
/// field; the coordinate field `d_tau + d_rho` is a null pregeodesic, the
/// affine one is scaled by `2 r_s / (2 r_s + t)` along the flow, which the
/// integrator handles starting from the unit-scaled initial velocity.
pub fn schwarzschild_horizon_patch(
    r_s: f64,
    resolution: (usize, usize),
    t_max: f64,
    weight: &WeightField,
    samples_per_unit: usize,
) -> Result<NullHypersurfacePatch> {
    let model = MetricModel::schwarzschild_lemaitre(r_s);
    let rho0 = 2.0 * r_s / 3.0;
    let spec = SectionSpec {
        param_dim: 2,
        embed: Arc::new(move |u: &[f64]| Ok(vec![0.0, rho0, u[0], u[1]])),
        l_field: Arc::new(|_u: &[f64]| Ok(vec![1.0, 1.0, 0.0, 0.0])),
        fd_step: 1e-4,
    };
    let quad = ParamQuad::sphere(2, &[resolution.0, resolution.1]);
    build_section_patch(
        &model,
        &spec,
        &quad,
        weight,
        &PatchOptions::window(0.0, t_max).with_resolution(samples_per_unit),
    )
}

/// Product-metric horizon `Sigma x {x = t}` over the torus section at
/// `t = x = 0`.
pub fn product_horizon_patch(
    curvature: f64,
    resolution: (usize, usize),
    t_max: f64,
    weight: &WeightField,
    samples_per_unit: usize,
) -> Result<NullHypersurfacePatch> {
    let model = MetricModel::product_surface_m2(curvature);
    let spec = SectionSpec {
        param_dim: 2,
        embed: Arc::new(|u: &[f64]| Ok(vec![0.0, 0.0, u[0], u[1]])),
        l_field: Arc::new(|_u: &[f64]| Ok(vec![1.0, 1.0, 0.0, 0.0])),
        fd_step: 1e-4,
    };
    let pi2 = 2.0 * std::f64::consts::PI;
    let quad = ParamQuad {
        nodes: vec![Vec::new()],
        weights: vec![1.0],
    }
    .cross_periodic(pi2, resolution.0)
    .cross_periodic(pi2, resolution.1);
    build_section_patch(
        &model,
        &spec,
        &quad,
        weight,
        &PatchOptions::window(0.0, t_max).with_resolution(samples_per_unit),
    )
}

/// The built-in scenario catalog exercised by the test suites: flat and
/// weighted-rigid cones, the two horizon equality cases, curved
/// NEC-satisfying cones, and one adversarial weighted cone violating NC1.
pub fn catalog() -> Vec<CatalogEntry> {
    let mut out = Vec::new();

    let mut flat = ConeScenario::new(MetricModel::minkowski(4), 4.0);
    flat.resolution = vec![8, 16];
    flat.s_min = 0.1;
    flat.s_max = 3.0;
    out.push(cone_entry("minkowski-cone", flat, true));

    let mut rigid = ConeScenario::new(MetricModel::minkowski(4), 6.0);
    rigid.resolution = vec![8, 16];
    rigid.s_min = 0.1;
    rigid.s_max = 3.0;
    rigid.weight = WeightField::from_expr("2*log(s)", Smoothness::C2).unwrap();
    rigid.phi_at_tip = None;
    out.push(cone_entry("minkowski-cone-weighted-rigid", rigid, true));

    let mut schw_cone = ConeScenario::new(MetricModel::schwarzschild_lemaitre(1.0), 4.0);
    schw_cone.tip = vec![0.0, 5.0, std::f64::consts::FRAC_PI_2, 0.0];
    schw_cone.resolution = vec![8, 16];
    schw_cone.s_min = 0.02;
    schw_cone.s_max = 0.6;
    out.push(cone_entry("schwarzschild-exterior-cone", schw_cone, true));

    let mut flrw = ConeScenario::new(MetricModel::warped_flrw(2.0 / 3.0, 0.05), 4.0);
    flrw.tip = vec![1.0, 0.0, 0.0, 0.0];
    flrw.resolution = vec![8, 16];
    flrw.s_min = 0.02;
    flrw.s_max = 0.8;
    out.push(cone_entry("flrw-cone", flrw, true));

    let mut pert = ConeScenario::new(MetricModel::perturbed_anisotropic(4, -1.0, 0.05), 4.0);
    pert.resolution = vec![8, 16];
    pert.s_min = 0.05;
    pert.s_max = 1.5;
    out.push(cone_entry("perturbed-cone-nec-ok", pert, true));

    let mut adv = ConeScenario::new(MetricModel::minkowski(4), 6.0);
    adv.resolution = vec![8, 16];
    adv.s_min = 0.1;
    adv.s_max = 3.0;
    adv.weight = WeightField::from_expr("(s-1)^2", Smoothness::C2).unwrap();
    adv.phi_at_tip = None;
    out.push(cone_entry("minkowski-cone-adversarial", adv, false));

    out.push(CatalogEntry {
        name: "schwarzschild-horizon",
        kind: ScenarioKind::Horizon,
        n_eff: 4.0,
        expect_nc1: true,
        builder: Box::new(|| {
            schwarzschild_horizon_patch(1.0, (8, 16), 4.0, &WeightField::zero(), 512)
        }),
        cone: None,
    });

    out.push(CatalogEntry {
        name: "product-horizon",
        kind: ScenarioKind::Horizon,
        n_eff: 4.0,
        expect_nc1: true,
        builder: Box::new(|| product_horizon_patch(0.3, (8, 8), 4.0, &WeightField::zero(), 512)),
        cone: None,
    });

    out
}

/// The anisotropic perturbation `h = sigma t^2 dx (x) dx` as a metric
/// field closure (for the generic perturbed constructor).
pub fn anisotropic_h(n: usize, sigma: f64) -> Arc<MetricFn> {
    Arc::new(move |x: &[f64]| {
        let mut h = nalgebra::DMatrix::zeros(n, n);
        h[(1, 1)] = sigma * x[0] * x[0];
        h
    })
}
