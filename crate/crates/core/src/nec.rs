//! Synthetic null energy condition checkers.
//!
//! NC1(N) is checked fiberwise: the rescaled density profile
//! `b = e^(a_z/(N-2))` must be concave along every generator; the
//! implementable surrogate is the three-point discrete concavity margin on
//! the ray grid, which exactly characterizes concavity of the
//! piecewise-linear interpolant and stays meaningful for C0 weights. Since
//! `(N-2) b''/b = a'' + (a')^2/(N-2)`, the margin also encodes the
//! distributional Riccati inequality.
//!
//! NCe(N) is checked on pairs of null-connected measures: the entropy
//! power `u(t) = exp(-Ent(mu_t | m_L)/(N-1))` along the monotone plan must
//! satisfy the endpoint chord inequality (midpoint concavity is reported
//! as a stronger diagnostic).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypersurface::NullHypersurfacePatch;
use crate::spacetime::Smoothness;
use crate::transport::{FiberedMeasure, MonotonePlan};

/// Configuration shared by the checkers.
#[derive(Debug, Clone, Serialize)]
pub struct CheckConfig {
    /// Effective dimension bound N (> 2; the checks divide by N - 2).
    pub n_eff: f64,
    /// Absolute concavity tolerance on the profile rescaled by its max.
    pub tol_c: f64,
    /// Grid refinement multiplier applied by scenario drivers when
    /// building patches.
    pub grid_refinement: usize,
    pub policy: VerdictPolicy,
    /// Number of interpolation times for the entropy-power curve.
    pub nce_time_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictPolicy {
    Strict,
    MarginReport,
}

impl CheckConfig {
    pub fn new(n_eff: f64) -> Result<Self> {
        if !(n_eff > 2.0) {
            return Err(Error::InvalidN {
                n_eff,
                reason: "the checkers divide by N - 2".to_string(),
            });
        }
        Ok(Self {
            n_eff,
            tol_c: 1e-7,
            grid_refinement: 1,
            policy: VerdictPolicy::Strict,
            nce_time_points: 33,
        })
    }

    pub fn with_tolerance(mut self, tol_c: f64) -> Self {
        self.tol_c = tol_c;
        self
    }
}

/// Location of the worst margin.
#[derive(Debug, Clone, Serialize)]
pub struct MarginLocation {
    pub node: usize,
    pub t: f64,
}

/// Result of a concavity-type check. `verdict` passes iff
/// `worst_margin >= -tol_c` (margins are signed: negative = violation).
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub verdict: bool,
    pub worst_margin: f64,
    pub worst_location: Option<MarginLocation>,
    /// Worst margin per generator.
    pub per_generator: Vec<f64>,
    /// Generators whose windows were truncated at a focal point (reported,
    /// not failed: the profile simply ends where det Jbar -> 0).
    pub focal_truncated: Vec<usize>,
    pub tol_c: f64,
}

/// Fiberwise log-concavity check of the weighted rigged density:
/// NC1(N) via discrete concavity of `b = e^(a_z/(N-2))` on every
/// generator.
pub fn nc1_check(patch: &NullHypersurfacePatch, config: &CheckConfig) -> Result<CheckReport> {
    let m = config.n_eff - 2.0;
    let mut worst = f64::INFINITY;
    let mut worst_location = None;
    let mut per_generator = Vec::with_capacity(patch.len());
    let mut focal_truncated = Vec::new();
    for (node, ray) in patch.rays.iter().enumerate() {
        if ray.focal_backward.is_some() || ray.focal_forward.is_some() {
            focal_truncated.push(node);
        }
        let b: Vec<f64> = ray
            .samples
            .iter()
            .map(|s| (s.log_density() / m).exp())
            .collect();
        let ts: Vec<f64> = ray.samples.iter().map(|s| s.t).collect();
        let b_max = b.iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-300);
        let mut ray_worst = f64::INFINITY;
        for i in 1..b.len() - 1 {
            let lam = (ts[i + 1] - ts[i]) / (ts[i + 1] - ts[i - 1]);
            let chord = lam * b[i - 1] + (1.0 - lam) * b[i + 1];
            let margin = (b[i] - chord) / b_max;
            if margin < ray_worst {
                ray_worst = margin;
            }
            if margin < worst {
                worst = margin;
                worst_location = Some(MarginLocation { node, t: ts[i] });
            }
        }
        per_generator.push(ray_worst);
    }
    Ok(CheckReport {
        verdict: worst >= -config.tol_c,
        worst_margin: worst,
        worst_location,
        per_generator,
        focal_truncated,
        tol_c: config.tol_c,
    })
}

/// Entropy-power concavity report for one transported pair.
#[derive(Debug, Clone, Serialize)]
pub struct NceCurve {
    /// (t, entropy, entropy power) samples.
    pub samples: Vec<(f64, f64, f64)>,
    /// Worst endpoint-chord margin (signed, normalized by max u).
    pub chord_margin: f64,
    /// Worst midpoint-concavity margin (stronger diagnostic).
    pub concavity_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NceReport {
    pub verdict: bool,
    pub worst_chord_margin: f64,
    pub worst_concavity_margin: f64,
    pub curves: Vec<NceCurve>,
    pub tol: f64,
}

/// NCe(N) check over a list of null-connected measure pairs: builds the
/// monotone plan for each pair, samples the entropy power
/// `u(t) = exp(-Ent(mu_t)/(N-1))` and checks the endpoint chord
/// inequality at every grid time.
pub fn nce_check(
    patch: &NullHypersurfacePatch,
    config: &CheckConfig,
    pairs: &[(FiberedMeasure, FiberedMeasure)],
) -> Result<NceReport> {
    let mut curves = Vec::with_capacity(pairs.len());
    let mut worst_chord = f64::INFINITY;
    let mut worst_conc = f64::INFINITY;
    for (mu0, mu1) in pairs {
        let plan = MonotonePlan::build(patch, mu0, mu1)?;
        let samples =
            plan.entropy_power_curve(patch, config.n_eff - 1.0, config.nce_time_points)?;
        let us: Vec<f64> = samples.iter().map(|(_, _, u)| *u).collect();
        let scale = us.iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-300);
        let (u0, u1) = (us[0], us[us.len() - 1]);
        let mut chord = f64::INFINITY;
        for &(t, _, u) in &samples {
            let line = (1.0 - t) * u0 + t * u1;
            chord = chord.min((u - line) / scale);
        }
        let mut conc = f64::INFINITY;
        for k in 1..us.len() - 1 {
            conc = conc.min((us[k] - 0.5 * (us[k - 1] + us[k + 1])) / scale);
        }
        worst_chord = worst_chord.min(chord);
        worst_conc = worst_conc.min(conc);
        curves.push(NceCurve {
            samples,
            chord_margin: chord,
            concavity_margin: conc,
        });
    }
    Ok(NceReport {
        verdict: worst_chord >= -config.tol_c,
        worst_chord_margin: worst_chord,
        worst_concavity_margin: worst_conc,
        curves,
        tol: config.tol_c,
    })
}

/// One generator's Riccati-defect curve:
/// `d(t) = a'' + (a')^2/(N-2) + Ric^{g,Phi,N}(L,L)`, which must be <= 0
/// up to tolerance. The first two terms are evaluated as `(N-2) b''/b`
/// with `b = e^(a/(N-2))` (the same quantity, but exact on the linear
/// equality profiles); the weighted Ricci splits into the tidal trace and
/// central differences of the weight along the ray.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiCurve {
    pub node: usize,
    pub ts: Vec<f64>,
    pub defect: Vec<f64>,
}

/// Options: evaluate the curvature every `stride` samples (the tidal
/// matrix is the expensive part).
pub fn riccati_diagnostic(
    patch: &NullHypersurfacePatch,
    config: &CheckConfig,
    stride: usize,
) -> Result<Vec<RiccatiCurve>> {
    if !patch.weight.is_zero() && patch.weight.smoothness() != Smoothness::C2 {
        return Err(Error::WeightNotSmooth {
            context: "riccati_diagnostic".to_string(),
        });
    }
    let n_eff = config.n_eff;
    let m = n_eff - 2.0;
    let stride = stride.max(1);
    let mut out = Vec::with_capacity(patch.len());
    for (node, ray) in patch.rays.iter().enumerate() {
        let samples = &ray.samples;
        let mut ts = Vec::new();
        let mut defect = Vec::new();
        let len = samples.len();
        let mut i = 2.max(stride);
        while i + 2 < len {
            let b_at = |k: usize| (samples[k].log_density() / m).exp();
            let s0 = &samples[i];
            let h1 = s0.t - samples[i - 1].t;
            let h2 = samples[i + 1].t - s0.t;
            // 1/b amplifies truncation near the tip, so use the 5-point
            // second-derivative stencil on uniform stretches and fall back
            // to 3 points across the (step-snapped) base joint
            let uniform = (samples[i + 2].t - samples[i + 1].t - h2).abs() < 1e-12
                && (samples[i - 1].t - samples[i - 2].t - h1).abs() < 1e-12
                && (h1 - h2).abs() < 1e-12;
            let b_pp = if uniform {
                (-b_at(i + 2) + 16.0 * b_at(i + 1) - 30.0 * b_at(i) + 16.0 * b_at(i - 1)
                    - b_at(i - 2))
                    / (12.0 * h1 * h1)
            } else {
                2.0 * (h1 * b_at(i + 1) - (h1 + h2) * b_at(i) + h2 * b_at(i - 1))
                    / (h1 * h2 * (h1 + h2))
            };
            let riccati_lhs = m * b_pp / b_at(i);
            let weighted_ric = weighted_null_ricci(patch, n_eff, node, i)?;
            ts.push(s0.t);
            defect.push(riccati_lhs + weighted_ric);
            i += stride;
        }
        out.push(RiccatiCurve { node, ts, defect });
    }
    Ok(out)
}

/// The generalized N-Ricci tensor contracted on the generator velocity at
/// sample `i` of node `node`: `Ric(L,L)` from the tidal trace, the weight
/// terms from 4th-order t-derivatives of the sampled weight (the ray is
/// affinely parametrized, so `Hess Phi(L,L) = (Phi o ray)''`).
pub(crate) fn weighted_null_ricci(
    patch: &NullHypersurfacePatch,
    n_eff: f64,
    node: usize,
    i: usize,
) -> Result<f64> {
    let ray = &patch.rays[node];
    let samples = &ray.samples;
    let s0 = &samples[i];
    let ric = -patch.model.tidal(&s0.position, &s0.velocity).trace();
    if patch.weight.is_zero() {
        return Ok(ric);
    }
    let n = patch.dim() as f64;
    assert!(
        i >= 2 && i + 2 < samples.len(),
        "weight stencil needs interior samples"
    );
    let h = s0.t - samples[i - 1].t;
    let (w_m2, w_m1, w_0, w_p1, w_p2) = (
        samples[i - 2].weight,
        samples[i - 1].weight,
        s0.weight,
        samples[i + 1].weight,
        samples[i + 2].weight,
    );
    let dphi = (8.0 * (w_p1 - w_m1) - (w_p2 - w_m2)) / (12.0 * h);
    let ddphi = (-w_p2 + 16.0 * w_p1 - 30.0 * w_0 + 16.0 * w_m1 - w_m2) / (12.0 * h * h);
    if (n_eff - n).abs() < 1e-12 {
        if dphi.abs() > 1e-8 {
            return Err(Error::InvalidN {
                n_eff,
                reason: "N = n requires a weight constant along generators".into(),
            });
        }
        return Ok(ric);
    }
    Ok(ric - ddphi - dphi * dphi / (n_eff - n))
}

/// Report of the rescaling-invariance check: the NC1 verdict must be
/// identical before and after every transverse rescaling of L.
#[derive(Debug, Clone, Serialize)]
pub struct RescalingReport {
    pub base: CheckReport,
    pub rescaled: Vec<CheckReport>,
    pub verdicts_identical: bool,
    /// When the base check fails, largest deviation of the rescaled
    /// violation location from the `t -> t/phi(z)` image of the base one.
    pub location_map_error: f64,
}

pub fn rescaling_invariance_check(
    patch: &NullHypersurfacePatch,
    config: &CheckConfig,
    phis: &[Vec<f64>],
) -> Result<RescalingReport> {
    let base = nc1_check(patch, config)?;
    let mut rescaled = Vec::with_capacity(phis.len());
    let mut identical = true;
    let mut loc_err: f64 = 0.0;
    for phi in phis {
        let rp = patch.rescale_transverse(phi)?;
        let report = nc1_check(&rp, config)?;
        identical &= report.verdict == base.verdict;
        if let (false, Some(b), Some(r)) =
            (base.verdict, &base.worst_location, &report.worst_location)
        {
            if b.node == r.node {
                loc_err = loc_err.max((r.t - b.t / phi[b.node]).abs());
            }
        }
        rescaled.push(report);
    }
    Ok(RescalingReport {
        base,
        rescaled,
        verdicts_identical: identical,
        location_map_error: loc_err,
    })
}

/// Thin-window pair construction probing the discrete concavity of
/// `b = e^(a/(N-2))` at one point of one generator through the entropy
/// power: Lebesgue-uniform windows `[x_i, x_i + eps_i]` around
/// `t_center -+ delta` with widths `eps_i` proportional to
/// `e^(a(x_i)/(N-2))`. If `b` is strictly convex there, the NCe chord
/// inequality fails on this pair; if NC1 holds it passes.
pub fn thin_window_pair(
    patch: &NullHypersurfacePatch,
    config: &CheckConfig,
    node: usize,
    t_center: f64,
    delta: f64,
    width: f64,
) -> Result<(FiberedMeasure, FiberedMeasure)> {
    let ray = &patch.rays[node];
    let reference = crate::transport::FiberReference::from_ray(ray);
    let m = config.n_eff - 2.0;
    let x0 = t_center - delta;
    let x1 = t_center + delta;
    let a0 = ray.log_area_at(x0)? + weight_at(patch, node, x0)?;
    let a1 = ray.log_area_at(x1)? + weight_at(patch, node, x1)?;
    let eps0 = width * (a0 / m).exp();
    let eps1 = width * (a1 / m).exp();
    let mass = 1.0 / patch.node_measure(node);
    let mut fibers0: Vec<Option<crate::transport::DensityProfile>> = vec![None; patch.len()];
    let mut fibers1 = fibers0.clone();
    fibers0[node] = Some(crate::transport::DensityProfile::lebesgue_uniform_window(
        &reference,
        x0,
        x0 + eps0,
        mass,
    )?);
    fibers1[node] = Some(crate::transport::DensityProfile::lebesgue_uniform_window(
        &reference,
        x1,
        x1 + eps1,
        mass,
    )?);
    Ok((
        FiberedMeasure {
            fibers: fibers0,
            normalized: true,
        },
        FiberedMeasure {
            fibers: fibers1,
            normalized: true,
        },
    ))
}

fn weight_at(patch: &NullHypersurfacePatch, node: usize, t: f64) -> Result<f64> {
    let x = patch.flow(node, t)?;
    patch.weight.eval(
        &patch.model.chart().names,
        &x,
        Some(patch.affine_of(node, t)),
    )
}
