//! Null hypersurface patches over a global spacelike cross-section.
//!
//! A patch bundles a cross-section quadrature grid with one propagated
//! generator per node. The flow map, the rigged measure
//! `e^(Phi + W_L) dt (x) H^(n-2)`, transverse rescalings `L -> phi L` and
//! graph-surface transfer all live here. Two constructions are provided:
//! an explicit section (embedding and L given as closures over the
//! parameter domain) and a future light cone (generators shot from a tip,
//! re-based at a reference affine slice).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nullgeo::{
    build_adapted_frame, propagate_ray, AdaptedFrame, FocalPolicy, GeneratorRay, RayInit,
    RayOptions,
};
use crate::spacetime::{MetricModel, WeightField};

type EmbedFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;
type FieldFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;

/// Explicit cross-section data: a parametrized embedding and the null
/// field L along it, both smooth closures over the parameter domain.
#[derive(Clone)]
pub struct SectionSpec {
    pub param_dim: usize,
    pub embed: Arc<EmbedFn>,
    pub l_field: Arc<FieldFn>,
    /// Finite-difference step in parameter space.
    pub fd_step: f64,
}

/// Quadrature grid on the section parameter domain.
#[derive(Debug, Clone)]
pub struct ParamQuad {
    /// Parameter coordinates per node.
    pub nodes: Vec<Vec<f64>>,
    /// Parameter-measure quadrature weight per node.
    pub weights: Vec<f64>,
}

impl ParamQuad {
    /// Tensor-product Gauss-Legendre grid on a box.
    pub fn gauss_box(ranges: &[(f64, f64)], counts: &[usize]) -> Self {
        assert_eq!(ranges.len(), counts.len());
        let per_dim: Vec<(Vec<f64>, Vec<f64>)> = ranges
            .iter()
            .zip(counts)
            .map(|(&(a, b), &m)| crate::numerics::gauss_legendre_on(m, a, b))
            .collect();
        let mut nodes = vec![Vec::new()];
        let mut weights = vec![1.0];
        for (xs, ws) in &per_dim {
            let mut new_nodes = Vec::with_capacity(nodes.len() * xs.len());
            let mut new_weights = Vec::with_capacity(nodes.len() * xs.len());
            for (node, w) in nodes.iter().zip(&weights) {
                for (x, wx) in xs.iter().zip(ws) {
                    let mut nn = node.clone();
                    nn.push(*x);
                    new_nodes.push(nn);
                    new_weights.push(w * wx);
                }
            }
            nodes = new_nodes;
            weights = new_weights;
        }
        Self { nodes, weights }
    }

    /// Periodic uniform grid (trapezoid weights) crossed with the box:
    /// used for the azimuthal sphere coordinate.
    pub fn cross_periodic(mut self, period: f64, count: usize) -> Self {
        let h = period / count as f64;
        let mut nodes = Vec::with_capacity(self.nodes.len() * count);
        let mut weights = Vec::with_capacity(self.nodes.len() * count);
        for (node, w) in self.nodes.iter().zip(&self.weights) {
            for k in 0..count {
                let mut nn = node.clone();
                nn.push(h * k as f64);
                nodes.push(nn);
                weights.push(w * h);
            }
        }
        self.nodes = nodes;
        self.weights = weights;
        self
    }

    /// Quadrature for the round unit (n-2)-sphere in polar-style
    /// coordinates, poles excluded by a small cutoff. Supports sphere
    /// dimensions 1, 2 and 3.
    pub fn sphere(sphere_dim: usize, resolution: &[usize]) -> Self {
        const POLE_EPS: f64 = 1e-4;
        let pi = std::f64::consts::PI;
        match sphere_dim {
            1 => ParamQuad {
                nodes: vec![Vec::new()],
                weights: vec![1.0],
            }
            .cross_periodic(2.0 * pi, resolution[0]),
            2 => ParamQuad::gauss_box(&[(POLE_EPS, pi - POLE_EPS)], &[resolution[0]])
                .cross_periodic(2.0 * pi, resolution[1]),
            3 => ParamQuad::gauss_box(
                &[(POLE_EPS, pi - POLE_EPS), (POLE_EPS, pi - POLE_EPS)],
                &[resolution[0], resolution[1]],
            )
            .cross_periodic(2.0 * pi, resolution[2]),
            other => panic!("unsupported sphere dimension {other}"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Direction on the unit (k)-sphere and its parameter derivatives, for the
/// polar-style coordinates used by [`ParamQuad::sphere`].
pub fn sphere_direction(sphere_dim: usize, u: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    match sphere_dim {
        1 => {
            let p = u[0];
            (vec![p.cos(), p.sin()], vec![vec![-p.sin(), p.cos()]])
        }
        2 => {
            let (th, ph) = (u[0], u[1]);
            let d = vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
            let d_th = vec![th.cos() * ph.cos(), th.cos() * ph.sin(), -th.sin()];
            let d_ph = vec![-th.sin() * ph.sin(), th.sin() * ph.cos(), 0.0];
            (d, vec![d_th, d_ph])
        }
        3 => {
            let (ch, th, ph) = (u[0], u[1], u[2]);
            let d = vec![
                ch.cos(),
                ch.sin() * th.cos(),
                ch.sin() * th.sin() * ph.cos(),
                ch.sin() * th.sin() * ph.sin(),
            ];
            let d_ch = vec![
                -ch.sin(),
                ch.cos() * th.cos(),
                ch.cos() * th.sin() * ph.cos(),
                ch.cos() * th.sin() * ph.sin(),
            ];
            let d_th = vec![
                0.0,
                -ch.sin() * th.sin(),
                ch.sin() * th.cos() * ph.cos(),
                ch.sin() * th.cos() * ph.sin(),
            ];
            let d_ph = vec![
                0.0,
                0.0,
                -ch.sin() * th.sin() * ph.sin(),
                ch.sin() * th.sin() * ph.cos(),
            ];
            (d, vec![d_ch, d_th, d_ph])
        }
        other => panic!("unsupported sphere dimension {other}"),
    }
}

/// A quadrature-ready embedded cross-section.
#[derive(Debug, Clone)]
pub struct CrossSectionGrid {
    pub quad: ParamQuad,
    pub points: Vec<Vec<f64>>,
    /// Per-node tangent bases d(embed)/du_a, chart components.
    pub tangents: Vec<Vec<DVector<f64>>>,
    /// Per-node induced area element sqrt(det g(tangent_a, tangent_b)).
    pub area_elements: Vec<f64>,
}

impl CrossSectionGrid {
    /// Embed an explicit section on a quadrature grid.
    pub fn build(model: &MetricModel, spec: &SectionSpec, quad: &ParamQuad) -> Result<Self> {
        let mut points = Vec::with_capacity(quad.len());
        let mut tangents = Vec::with_capacity(quad.len());
        let mut area_elements = Vec::with_capacity(quad.len());
        for u in &quad.nodes {
            let x = (spec.embed)(u)?;
            model.check_chart(&x)?;
            let tans = embed_tangents(spec, u)?;
            let area = induced_area_element(model, &x, &tans)?;
            points.push(x);
            tangents.push(tans);
            area_elements.push(area);
        }
        Ok(Self {
            quad: quad.clone(),
            points,
            tangents,
            area_elements,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Hausdorff integral of a function given per node.
    pub fn hausdorff_integral(&self, f: impl Fn(usize, &[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.quad.weights[i] * self.area_elements[i] * f(i, &self.points[i]);
        }
        acc
    }
}

fn embed_tangents(spec: &SectionSpec, u: &[f64]) -> Result<Vec<DVector<f64>>> {
    let h = spec.fd_step;
    let mut out = Vec::with_capacity(spec.param_dim);
    for a in 0..spec.param_dim {
        let mut up = u.to_vec();
        let mut eval = |v: f64| -> Result<Vec<f64>> {
            up[a] = v;
            (spec.embed)(&up)
        };
        let p2 = eval(u[a] + 2.0 * h)?;
        let p1 = eval(u[a] + h)?;
        let m1 = eval(u[a] - h)?;
        let m2 = eval(u[a] - 2.0 * h)?;
        let d: Vec<f64> = (0..p1.len())
            .map(|k| (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * h))
            .collect();
        out.push(DVector::from_column_slice(&d));
    }
    Ok(out)
}

fn field_tangents(spec: &SectionSpec, u: &[f64]) -> Result<Vec<DVector<f64>>> {
    let h = spec.fd_step;
    let mut out = Vec::with_capacity(spec.param_dim);
    for a in 0..spec.param_dim {
        let mut up = u.to_vec();
        let mut eval = |v: f64| -> Result<Vec<f64>> {
            up[a] = v;
            (spec.l_field)(&up)
        };
        let p2 = eval(u[a] + 2.0 * h)?;
        let p1 = eval(u[a] + h)?;
        let m1 = eval(u[a] - h)?;
        let m2 = eval(u[a] - 2.0 * h)?;
        let d: Vec<f64> = (0..p1.len())
            .map(|k| (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * h))
            .collect();
        out.push(DVector::from_column_slice(&d));
    }
    Ok(out)
}

fn induced_area_element(model: &MetricModel, x: &[f64], tangents: &[DVector<f64>]) -> Result<f64> {
    let g = model.metric_raw(x);
    let m = tangents.len();
    let gram = DMatrix::from_fn(m, m, |a, b| {
        (tangents[a].transpose() * &g * &tangents[b])[(0, 0)]
    });
    let det = gram.determinant();
    if det <= 0.0 {
        return Err(Error::DegenerateSection {
            reason: format!("induced metric determinant {det:e} at {x:?}"),
        });
    }
    Ok(det.sqrt())
}

/// Patch construction options.
#[derive(Debug, Clone)]
pub struct PatchOptions {
    pub t_min: f64,
    pub t_max: f64,
    pub samples_per_unit: usize,
    /// Capture terminal integrator state on every ray.
    pub capture_terminal: bool,
}

impl PatchOptions {
    pub fn window(t_min: f64, t_max: f64) -> Self {
        Self {
            t_min,
            t_max,
            samples_per_unit: crate::nullgeo::DEFAULT_SAMPLES_PER_UNIT,
            capture_terminal: false,
        }
    }

    pub fn with_resolution(mut self, samples_per_unit: usize) -> Self {
        self.samples_per_unit = samples_per_unit;
        self
    }

    fn ray_options(&self) -> RayOptions {
        let mut o =
            RayOptions::window(self.t_min, self.t_max).with_resolution(self.samples_per_unit);
        o.capture_terminal = self.capture_terminal;
        o
    }
}

/// A null hypersurface patch: cross-section grid plus one generator per
/// node. Immutable after construction; all evaluators are value-semantic.
#[derive(Debug, Clone)]
pub struct NullHypersurfacePatch {
    pub model: MetricModel,
    pub section: CrossSectionGrid,
    pub rays: Vec<GeneratorRay>,
    pub weight: WeightField,
    /// Affine coordinate of the section along the generators: the weight
    /// variable `s` evaluates to `affine_origin + s_scale * t`.
    pub affine_origin: f64,
    /// Per-ray scaling of the affine coordinate (changes under transverse
    /// rescaling of L).
    pub s_scales: Vec<f64>,
    pub options: PatchOptions,
}

impl NullHypersurfacePatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Section-quadrature measure of node `i` (weight times area element).
    pub fn node_measure(&self, i: usize) -> f64 {
        self.section.quad.weights[i] * self.section.area_elements[i]
    }

    /// `s` coordinate of parameter `t` on ray `i`.
    pub fn affine_of(&self, i: usize, t: f64) -> f64 {
        self.affine_origin + self.s_scales[i] * t
    }

    /// The flow map: point of the generator through node `z` at parameter
    /// `t` (cubic Hermite between stored samples).
    pub fn flow(&self, node: usize, t: f64) -> Result<Vec<f64>> {
        self.rays[node].position_at(t)
    }

    /// Integral of `integrand` against the weighted rigged measure
    /// `e^(Phi + W_L) dt (x) H^(n-2)` over the stored windows
    /// (tensor-product quadrature: section rule times per-ray trapezoid).
    pub fn integrate_measure(&self, integrand: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
        self.integrate_measure_windowed(f64::NEG_INFINITY, f64::INFINITY, integrand)
    }

    /// Same, restricted to the parameter window `[t_lo, t_hi]` on every ray.
    pub fn integrate_measure_windowed(
        &self,
        t_lo: f64,
        t_hi: f64,
        integrand: impl Fn(&[f64]) -> f64 + Sync,
    ) -> f64 {
        let mut total = 0.0;
        for (i, ray) in self.rays.iter().enumerate() {
            let mut fiber = 0.0;
            let samples = &ray.samples;
            for w in samples.windows(2) {
                let (s0, s1) = (&w[0], &w[1]);
                if s0.t < t_lo || s1.t > t_hi {
                    continue;
                }
                let f0 = integrand(&s0.position) * s0.log_density().exp();
                let f1 = integrand(&s1.position) * s1.log_density().exp();
                fiber += 0.5 * (f0 + f1) * (s1.t - s0.t);
            }
            total += self.node_measure(i) * fiber;
        }
        total
    }

    /// Rescale the generator field `L -> phi L` with `phi > 0` transverse
    /// (one value per node). Windows, Jacobi data and the affine coordinate
    /// all transform; the rigged volume scales by `1/phi`.
    pub fn rescale_transverse(&self, phi: &[f64]) -> Result<NullHypersurfacePatch> {
        assert_eq!(phi.len(), self.len());
        for (i, &p) in phi.iter().enumerate() {
            if !(p > 0.0) {
                return Err(Error::NonPositiveScale { node: i, value: p });
            }
        }
        let inits: Vec<(RayInit, RayOptions, f64)> = (0..self.len())
            .map(|i| -> Result<_> {
                let ray = &self.rays[i];
                let p = phi[i];
                let n = self.dim();
                let l_new: Vec<f64> = ray.frame.l().iter().map(|c| c * p).collect();
                let tangents: Vec<DVector<f64>> = (0..n - 2).map(|a| ray.frame.vector(a)).collect();
                let frame = build_adapted_frame(&self.model, &ray.frame.point, &tangents, &l_new)?;
                // spacelike block of grad L scales linearly with phi; the
                // L-column contribution (from d phi along the section) never
                // feeds back into the spacelike minor, so it is dropped.
                let shape = &ray.shape * p;
                let (w0, w1) = ray.window();
                let mut opts = self
                    .options
                    .ray_options()
                    .with_focal_policy(FocalPolicy::Truncate);
                opts.t_min = w0 / p;
                opts.t_max = w1 / p;
                Ok((RayInit::from_shape(i, frame, shape), opts, p))
            })
            .collect::<Result<_>>()?;

        let model = &self.model;
        let weight = &self.weight;
        let origin = self.affine_origin;
        let rays: Vec<GeneratorRay> = inits
            .into_par_iter()
            .map(|(init, opts, p)| {
                let node = init.node;
                let scale = self.s_scales[node] * p;
                propagate_ray(model, init, &opts, |x, t| {
                    weight.eval(&model.chart().names, x, Some(origin + scale * t))
                })
            })
            .collect::<Result<_>>()?;

        let s_scales = self.s_scales.iter().zip(phi).map(|(s, p)| s * p).collect();
        Ok(NullHypersurfacePatch {
            model: self.model.clone(),
            section: self.section.clone(),
            rays,
            weight: self.weight.clone(),
            affine_origin: self.affine_origin,
            s_scales,
            options: self.options.clone(),
        })
    }

    /// Graph-surface transfer: push the section along the generators by
    /// `t_of_node`. Hausdorff integrals over the image section equal
    /// section integrals weighted by the Jacobi area factor at the
    /// transfer parameter.
    pub fn graph_section_transfer(&self, t_of_node: &[f64]) -> Result<TransferredSection> {
        assert_eq!(t_of_node.len(), self.len());
        let mut points = Vec::with_capacity(self.len());
        let mut velocities = Vec::with_capacity(self.len());
        let mut area_elements = Vec::with_capacity(self.len());
        for (i, ray) in self.rays.iter().enumerate() {
            let t = t_of_node[i];
            let factor = ray.area_factor_at(t)?;
            if factor <= crate::nullgeo::DET_FLOOR {
                return Err(Error::DegenerateSection {
                    reason: format!("area factor {factor:e} at node {i}, t = {t}"),
                });
            }
            points.push(ray.position_at(t)?);
            velocities.push(ray.velocity_at(t)?);
            area_elements.push(self.section.area_elements[i] * factor);
        }
        Ok(TransferredSection {
            weights: self.section.quad.weights.clone(),
            t_values: t_of_node.to_vec(),
            points,
            velocities,
            area_elements,
        })
    }

    /// Worst-case structural diagnostics over all rays.
    pub fn worst_diagnostics(&self) -> crate::nullgeo::RayDiagnostics {
        let mut worst = crate::nullgeo::RayDiagnostics::default();
        for ray in &self.rays {
            worst.row_identity = worst.row_identity.max(ray.diagnostics.row_identity);
            worst.column_identity = worst.column_identity.max(ray.diagnostics.column_identity);
            worst.gauss_invariant = worst.gauss_invariant.max(ray.diagnostics.gauss_invariant);
            worst.null_defect = worst.null_defect.max(ray.diagnostics.null_defect);
            worst.det_structure = worst.det_structure.max(ray.diagnostics.det_structure);
        }
        worst
    }

    /// Worst asymmetry of the spacelike shape-operator block over nodes
    /// (the `Ubar(0)` symmetry surrogate).
    pub fn worst_shape_asymmetry(&self) -> f64 {
        let m = self.dim() - 2;
        let mut worst: f64 = 0.0;
        for ray in &self.rays {
            for a in 0..m {
                for b in (a + 1)..m {
                    worst = worst.max((ray.shape[(a, b)] - ray.shape[(b, a)]).abs());
                }
            }
        }
        worst
    }

    /// CSV dump of all samples: `node,t,<coords...>,w_l,a_z,det_jbar`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,t");
        for name in &self.model.chart().names {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",w_l,a_z,det_jbar\n");
        for ray in &self.rays {
            for s in &ray.samples {
                out.push_str(&format!("{},{:.17e}", ray.node, s.t));
                for c in &s.position {
                    out.push_str(&format!(",{c:.17e}"));
                }
                out.push_str(&format!(
                    ",{:.17e},{:.17e},{:.17e}\n",
                    s.log_area,
                    s.log_density(),
                    s.area_factor
                ));
            }
        }
        out
    }
}

/// A section obtained by flowing the base section along the generators.
#[derive(Debug, Clone)]
pub struct TransferredSection {
    pub weights: Vec<f64>,
    pub t_values: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Generator velocity (the transported L) at the transferred points.
    pub velocities: Vec<Vec<f64>>,
    pub area_elements: Vec<f64>,
}

impl TransferredSection {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn hausdorff_integral(&self, f: impl Fn(usize, &[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.weights[i] * self.area_elements[i] * f(i, &self.points[i]);
        }
        acc
    }

    pub fn area(&self) -> f64 {
        self.hausdorff_integral(|_, _| 1.0)
    }
}

/// Build a patch from an explicit section specification.
pub fn build_section_patch(
    model: &MetricModel,
    spec: &SectionSpec,
    quad: &ParamQuad,
    weight: &WeightField,
    opts: &PatchOptions,
) -> Result<NullHypersurfacePatch> {
    let section = CrossSectionGrid::build(model, spec, quad)?;
    let n = model.dim();
    let m = n - 2;

    let inits: Vec<RayInit> = (0..section.len())
        .map(|i| -> Result<RayInit> {
            let u = &quad.nodes[i];
            let x = &section.points[i];
            let l = (spec.l_field)(u)?;
            let tangents = &section.tangents[i];
            let frame = build_adapted_frame(model, x, tangents, &l)?;
            // covariant derivative of L along each raw tangent:
            // D_a L = d_a (L o f) + Gamma(tangent_a, L)
            let dl = field_tangents(spec, u)?;
            let gam = model.christoffel(x)?;
            let mut cov = Vec::with_capacity(m);
            for a in 0..m {
                let mut w = dl[a].clone();
                for k in 0..n {
                    let mut corr = 0.0;
                    for p in 0..n {
                        for q in 0..n {
                            corr += gam.get(k, p, q) * tangents[a][p] * l[q];
                        }
                    }
                    w[k] += corr;
                }
                cov.push(w);
            }
            let shape = shape_from_derivatives(&frame, tangents, &cov)?;
            Ok(RayInit::from_shape(i, frame, shape))
        })
        .collect::<Result<_>>()?;

    let ray_opts = opts.ray_options();
    let names = &model.chart().names;
    let weight_ref = weight;
    let rays: Vec<GeneratorRay> = inits
        .into_par_iter()
        .map(|init| {
            propagate_ray(model, init, &ray_opts, |x, t| {
                weight_ref.eval(names, x, Some(t))
            })
        })
        .collect::<Result<_>>()?;

    Ok(NullHypersurfacePatch {
        model: model.clone(),
        section,
        rays,
        weight: weight.clone(),
        affine_origin: 0.0,
        s_scales: vec![1.0; quad.len()],
        options: opts.clone(),
    })
}

/// Express the covariant derivatives of L (given along the raw embedding
/// tangents) as the frame-component shape matrix `J'(0)`: rows are the
/// orthonormal spacelike frame directions, null rows vanish for the
/// parallel-transported extension of L.
fn shape_from_derivatives(
    frame: &AdaptedFrame,
    raw_tangents: &[DVector<f64>],
    cov_derivs: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let n = frame.dim();
    let m = n - 2;
    // coefficients C with e_i = sum_a C[i][a] raw_a  (Euclidean least squares;
    // exact because e_i lies in the span of the raw tangents)
    let mut y = DMatrix::zeros(m, n);
    for (a, t) in raw_tangents.iter().enumerate() {
        y.row_mut(a).copy_from(&t.transpose());
    }
    let mut e = DMatrix::zeros(m, n);
    for i in 0..m {
        e.row_mut(i).copy_from(&frame.vectors.row(i));
    }
    let yyt = &y * y.transpose();
    let c = (&e * y.transpose())
        * yyt.try_inverse().ok_or_else(|| Error::DegenerateSection {
            reason: "tangent span collapsed".into(),
        })?;
    // grad_{e_i} L in chart components
    let mut shape = DMatrix::zeros(n, n);
    let vec_t = frame.vectors.transpose();
    let lu = vec_t.lu();
    for i in 0..m {
        let mut w = DVector::zeros(n);
        for a in 0..m {
            w += &cov_derivs[a] * c[(i, a)];
        }
        // frame components: solve vectors^T comps = w
        let comps = lu.solve(&w).ok_or(Error::NoTransverse)?;
        shape.row_mut(i).copy_from(&comps.transpose());
    }
    Ok(shape)
}

/// Cone patch specification: generators shot from a tip point, re-based at
/// the affine slice `s = s_ref` (so the patch parameter is `t = s - s_ref`).
#[derive(Clone)]
pub struct ConeSpec {
    pub tip: Vec<f64>,
    pub s_ref: f64,
    /// Node counts for the direction sphere (dimension n-2).
    pub resolution: Vec<usize>,
}

/// Build a future light-cone patch. Per node, the generator direction is
/// `T + d(u)` in a pseudo-orthonormal tip frame; the slice tangents and the
/// shape operator are obtained from tip-based Jacobi fields, so no cross-
/// node differencing is needed.
pub fn build_cone_patch(
    model: &MetricModel,
    spec: &ConeSpec,
    weight: &WeightField,
    opts: &PatchOptions,
) -> Result<NullHypersurfacePatch> {
    let n = model.dim();
    let m = n - 2;
    assert_eq!(spec.resolution.len(), m.min(3));
    model.check_chart(&spec.tip)?;
    let quad = ParamQuad::sphere(m, &spec.resolution);

    // pseudo-orthonormal frame at the tip: timelike unit T, spatial E_k
    let g = model.metric(&spec.tip)?;
    let tip_basis = orthonormal_tip_basis(&g, n)?;

    let names = &model.chart().names;
    let results: Vec<(Vec<f64>, Vec<DVector<f64>>, f64, GeneratorRay)> = quad
        .nodes
        .par_iter()
        .enumerate()
        .map(|(node, u)| -> Result<_> {
            let (d, dd) = sphere_direction(m, u);
            // ell = T + sum d_k E_k; tip frame rows: unit sphere tangents,
            // ell, and the null partner (T - d.E)/2
            let mut ell = tip_basis[0].clone();
            for k in 0..m + 1 {
                ell += &tip_basis[k + 1] * d[k];
            }
            let mut partner = tip_basis[0].clone() * 0.5;
            for k in 0..m + 1 {
                partner -= &tip_basis[k + 1] * (0.5 * d[k]);
            }
            // orthonormalize the sphere tangents (polar coordinates give an
            // orthogonal set; normalize and record the scales)
            let mut frame_rows = Vec::with_capacity(n);
            let mut scales = Vec::with_capacity(m);
            for da in &dd {
                let norm: f64 = da.iter().map(|c| c * c).sum::<f64>().sqrt();
                let mut row = DVector::zeros(n);
                for k in 0..m + 1 {
                    row += &tip_basis[k + 1] * (da[k] / norm);
                }
                frame_rows.push(row);
                scales.push(norm);
            }
            frame_rows.push(ell.clone());
            frame_rows.push(partner);
            let mut vectors = DMatrix::zeros(n, n);
            for (r, row) in frame_rows.iter().enumerate() {
                vectors.row_mut(r).copy_from(&row.transpose());
            }
            let gram = &vectors * &g * vectors.transpose();
            let tip_frame = AdaptedFrame {
                point: spec.tip.clone(),
                vectors,
                gram,
            };

            // tip-based Jacobi fields: value 0, unit derivative on the
            // spacelike rows
            let mut j0 = DMatrix::identity(n, n);
            let mut j0p = DMatrix::zeros(n, n);
            for i in 0..m {
                j0[(i, i)] = 0.0;
                j0p[(i, i)] = 1.0;
            }
            let tip_init = RayInit {
                node,
                frame: tip_frame,
                j0,
                j0_prime: j0p,
            };
            let tip_opts = RayOptions::window(0.0, spec.s_ref)
                .with_resolution(opts.samples_per_unit)
                .with_focal_policy(FocalPolicy::Error)
                .with_terminal_capture();
            let tip_ray = propagate_ray(model, tip_init, &tip_opts, |_, _| Ok(0.0))?;
            let term = tip_ray.terminal.expect("terminal capture requested");

            // slice tangents Y_a = scale_a * sum_b J[a][b] F_b and their
            // covariant derivatives Y_a' = scale_a * sum_b J'[a][b] F_b
            let mut tangents = Vec::with_capacity(m);
            let mut cov = Vec::with_capacity(m);
            for a in 0..m {
                let mut y = DVector::zeros(n);
                let mut yp = DVector::zeros(n);
                for b in 0..n {
                    y += term.frame.row(b).transpose() * term.j[(a, b)];
                    yp += term.frame.row(b).transpose() * term.j_prime[(a, b)];
                }
                tangents.push(y * scales[a]);
                cov.push(yp * scales[a]);
            }
            let frame = build_adapted_frame(model, &term.position, &tangents, &term.velocity)?;
            let shape = shape_from_derivatives(&frame, &tangents, &cov)?;
            let area = induced_area_element(model, &term.position, &tangents)?;

            let init = RayInit::from_shape(node, frame, shape);
            let mut ray_opts = opts.ray_options();
            ray_opts.t_min = ray_opts.t_min.max(1e-3 - spec.s_ref);
            let ray = propagate_ray(model, init, &ray_opts, |x, t| {
                weight.eval(names, x, Some(spec.s_ref + t))
            })?;
            Ok((term.position.clone(), tangents, area, ray))
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(results.len());
    let mut tangents = Vec::with_capacity(results.len());
    let mut area_elements = Vec::with_capacity(results.len());
    let mut rays = Vec::with_capacity(results.len());
    for (p, t, a, r) in results {
        points.push(p);
        tangents.push(t);
        area_elements.push(a);
        rays.push(r);
    }
    let section = CrossSectionGrid {
        quad: quad.clone(),
        points,
        tangents,
        area_elements,
    };
    Ok(NullHypersurfacePatch {
        model: model.clone(),
        section,
        rays,
        weight: weight.clone(),
        affine_origin: spec.s_ref,
        s_scales: vec![1.0; quad.len()],
        options: opts.clone(),
    })
}

/// Re-base a generator at the captured terminal state of a previous
/// integration: the spacelike Jacobi rows become the new section tangents
/// and their derivatives give the new shape operator. Used for semigroup
/// and flow-property checks.
pub fn rebase_init_from_terminal(
    model: &MetricModel,
    term: &crate::nullgeo::TerminalState,
    node: usize,
) -> Result<RayInit> {
    let n = model.dim();
    let m = n - 2;
    let mut tangents = Vec::with_capacity(m);
    let mut cov = Vec::with_capacity(m);
    for a in 0..m {
        let mut y = DVector::zeros(n);
        let mut yp = DVector::zeros(n);
        for b in 0..n {
            y += term.frame.row(b).transpose() * term.j[(a, b)];
            yp += term.frame.row(b).transpose() * term.j_prime[(a, b)];
        }
        tangents.push(y);
        cov.push(yp);
    }
    let frame = build_adapted_frame(model, &term.position, &tangents, &term.velocity)?;
    let shape = shape_from_derivatives(&frame, &tangents, &cov)?;
    Ok(RayInit::from_shape(node, frame, shape))
}

/// Gram-Schmidt a pseudo-orthonormal basis (T, E_1, ..., E_{n-1}) out of
/// the coordinate frame: T timelike unit future-directed, E_k spacelike
/// unit, mutually orthogonal.
fn orthonormal_tip_basis(g: &DMatrix<f64>, n: usize) -> Result<Vec<DVector<f64>>> {
    let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * g * b)[(0, 0)];
    let mut t = DVector::zeros(n);
    t[0] = 1.0;
    let tt = ip(&t, &t);
    if tt >= 0.0 {
        return Err(Error::DegenerateSection {
            reason: "coordinate time direction is not timelike".into(),
        });
    }
    t /= (-tt).sqrt();
    let mut basis = vec![t.clone()];
    for k in 1..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        // project out the timelike direction (note the sign) and the
        // previously collected spatial directions
        e += &basis[0] * ip(&e, &basis[0]);
        for f in basis.iter().skip(1) {
            let c = ip(&e, f);
            e -= f * c;
        }
        let norm2 = ip(&e, &e);
        if norm2 <= 1e-14 {
            return Err(Error::DegenerateSection {
                reason: "coordinate frame degenerate at the tip".into(),
            });
        }
        basis.push(e / norm2.sqrt());
    }
    Ok(basis)
}

/// Max discrepancy of integrals of the given integrands computed via two
/// patches covering the same hypersurface region.
pub fn cross_section_independence_check(
    patch1: &NullHypersurfacePatch,
    patch2: &NullHypersurfacePatch,
    integrands: &[Box<dyn Fn(&[f64]) -> f64 + Sync>],
) -> f64 {
    let mut worst: f64 = 0.0;
    for f in integrands {
        let a = patch1.integrate_measure(|x| f(x));
        let b = patch2.integrate_measure(|x| f(x));
        worst = worst.max((a - b).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::unit_sphere_area;
    use crate::spacetime::Smoothness;

    fn minkowski_cone(
        s_ref: f64,
        window: (f64, f64),
        res: (usize, usize),
    ) -> NullHypersurfacePatch {
        let model = MetricModel::minkowski(4);
        let spec = ConeSpec {
            tip: vec![0.0; 4],
            s_ref,
            resolution: vec![res.0, res.1],
        };
        build_cone_patch(
            &model,
            &spec,
            &WeightField::zero(),
            &PatchOptions::window(window.0, window.1),
        )
        .unwrap()
    }

    #[test]
    fn sphere_quadrature_reproduces_area() {
        let patch = minkowski_cone(1.0, (0.0, 0.1), (12, 24));
        // unit slice of the cone is the round unit 2-sphere
        let area = patch.section.hausdorff_integral(|_, _| 1.0);
        let exact = unit_sphere_area(2);
        assert!((area - exact).abs() < 1e-7 * exact, "{area} vs {exact}");
    }

    #[test]
    fn flat_cone_measure_closed_form() {
        // integral of 1 over window [0, h]: omega_2 * int (1+t)^2 dt
        let patch = minkowski_cone(1.0, (0.0, 1.0), (8, 16));
        let total = patch.integrate_measure(|_| 1.0);
        let exact = unit_sphere_area(2) * (2.0f64.powi(3) - 1.0) / 3.0;
        assert!((total - exact).abs() < 2e-5 * exact, "{total} vs {exact}");
    }

    #[test]
    fn integrand_outside_window_contributes_zero() {
        let patch = minkowski_cone(1.0, (0.0, 0.5), (8, 16));
        // supported at radius > 2, while the window covers radius <= 1.5
        let total = patch.integrate_measure(|x| {
            let r = (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
            if r > 2.0 {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(total, 0.0);
    }

    #[test]
    fn flow_identity_and_cone_radius() {
        let patch = minkowski_cone(1.0, (-0.5, 2.0), (6, 12));
        for node in [0usize, 17, 41] {
            let z = patch.flow(node, 0.0).unwrap();
            for (a, b) in z.iter().zip(&patch.section.points[node]) {
                assert!((a - b).abs() < 1e-13);
            }
            // t = s - 1: point at radius s on the same straight ray
            let p = patch.flow(node, 0.7).unwrap();
            let r = (p[1] * p[1] + p[2] * p[2] + p[3] * p[3]).sqrt();
            assert!((r - 1.7).abs() < 1e-10);
            assert!((p[0] - 1.7).abs() < 1e-10);
        }
        assert!(matches!(patch.flow(3, 5.0), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn flow_property_under_rebasing() {
        // Psi(z, t + s) = Psi(Psi(z, t), s): rebase the patch at t0 by a
        // graph transfer and re-integrate fresh geodesics from there.
        let model = MetricModel::minkowski(4);
        let patch = minkowski_cone(1.0, (0.0, 2.0), (6, 12));
        let t0 = 0.5;
        let transferred = patch
            .graph_section_transfer(&vec![t0; patch.len()])
            .unwrap();
        let mut worst: f64 = 0.0;
        let mut rng = crate::numerics::SplitMix64::new(97);
        for _ in 0..50 {
            let node = rng.uniform_usize(patch.len());
            let s = rng.uniform(0.0, 1.0);
            let x1 = &transferred.points[node];
            let v1 = &transferred.velocities[node];
            let path = crate::nullgeo::integrate_null_geodesic(
                &model,
                x1,
                v1,
                &RayOptions::window(0.0, s.max(1e-6)),
            )
            .unwrap();
            let end = &path.last().unwrap().1;
            // the snapped march may end a fraction of a step away from s
            let t_end = path.last().unwrap().0;
            let direct = patch.flow(node, t0 + t_end).unwrap();
            for k in 0..4 {
                worst = worst.max((end[k] - direct[k]).abs());
            }
        }
        assert!(worst < 1e-7, "flow property violated by {worst:e}");
    }

    #[test]
    fn graph_transfer_flat_areas() {
        let patch = minkowski_cone(1.0, (-0.9, 4.0), (10, 20));
        // identity transfer
        let same = patch
            .graph_section_transfer(&vec![0.0; patch.len()])
            .unwrap();
        let a0 = same.area();
        assert!((a0 - unit_sphere_area(2)).abs() < 1e-7 * a0);
        for s in [0.5f64, 2.0, 4.0] {
            let moved = patch
                .graph_section_transfer(&vec![s - 1.0; patch.len()])
                .unwrap();
            let area = moved.area();
            let exact = unit_sphere_area(2) * s * s;
            assert!(
                (area - exact).abs() < 1e-7 * exact,
                "s = {s}: {area} vs {exact}"
            );
        }
    }

    #[test]
    fn flow_beyond_truncated_window_is_out_of_window() {
        // a backward window reaching past the tip is clamped just short of
        // the focal locus; the flow refuses parameters beyond the stored
        // window
        let patch = minkowski_cone(1.0, (-1.5, 0.5), (4, 8));
        for ray in &patch.rays {
            assert!(ray.window().0 > -1.0);
        }
        assert!(matches!(
            patch.flow(0, -1.1),
            Err(Error::OutOfWindow { .. })
        ));
        assert!(patch.flow(0, -0.8).is_ok());
    }

    #[test]
    fn measure_quadrature_is_linear_and_monotone() {
        let patch = minkowski_cone(1.0, (0.0, 0.5), (4, 8));
        let f = |x: &[f64]| x[1] * x[1] + 0.3;
        let g = |x: &[f64]| (x[2] - x[3]).abs();
        let lhs = patch.integrate_measure(|x| 2.5 * f(x) + g(x));
        let rhs = 2.5 * patch.integrate_measure(f) + patch.integrate_measure(g);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs());
        assert!(patch.integrate_measure(g) >= 0.0);
    }

    #[test]
    fn rescale_identity_and_halving() {
        let patch = minkowski_cone(1.0, (0.0, 1.0), (6, 12));
        let one = patch.rescale_transverse(&vec![1.0; patch.len()]).unwrap();
        let i0 = patch.integrate_measure(|_| 1.0);
        let i1 = one.integrate_measure(|_| 1.0);
        assert!((i0 - i1).abs() < 1e-12 * i0);

        // phi = 2: vol_{phi L} = (1/phi) vol_L over the matching window
        let two = patch.rescale_transverse(&vec![2.0; patch.len()]).unwrap();
        let i2 = two.integrate_measure(|_| 1.0);
        assert!((i2 - 0.5 * i0).abs() < 2e-5 * i0, "{i2} vs {}", 0.5 * i0);
        // nonpositive scale rejected
        assert!(matches!(
            patch.rescale_transverse(&vec![-1.0; patch.len()]),
            Err(Error::NonPositiveScale { .. })
        ));
    }

    #[test]
    fn rescaled_log_area_matches_reparametrized_original() {
        // W_{phi L}(z, t) = W_L(z, phi(z) t) on the overlap grid
        let patch = minkowski_cone(1.0, (0.0, 2.0), (4, 8));
        let mut rng = crate::numerics::SplitMix64::new(5);
        for _ in 0..5 {
            let phi: Vec<f64> = (0..patch.len()).map(|_| rng.uniform(0.5, 2.0)).collect();
            let rescaled = patch.rescale_transverse(&phi).unwrap();
            let mut worst: f64 = 0.0;
            for (i, ray) in rescaled.rays.iter().enumerate() {
                for s in &ray.samples {
                    if let Ok(w) = patch.rays[i].log_area_at(phi[i] * s.t) {
                        worst = worst.max((s.log_area - w).abs());
                    }
                }
            }
            assert!(worst < 1e-7, "rescaling identity violated by {worst:e}");
        }
    }

    #[test]
    fn schwarzschild_horizon_patch_basics() {
        let r_s = 1.0;
        let model = MetricModel::schwarzschild_lemaitre(r_s);
        let rho0 = 2.0 * r_s / 3.0;
        let spec = SectionSpec {
            param_dim: 2,
            embed: Arc::new(move |u: &[f64]| Ok(vec![0.0, rho0, u[0], u[1]])),
            l_field: Arc::new(|_u: &[f64]| Ok(vec![1.0, 1.0, 0.0, 0.0])),
            fd_step: 1e-4,
        };
        let quad = ParamQuad::sphere(2, &[10, 20]);
        let patch = build_section_patch(
            &model,
            &spec,
            &quad,
            &WeightField::zero(),
            &PatchOptions::window(0.0, 3.0),
        )
        .unwrap();
        // horizon section area = 4 pi r_s^2
        let area = patch.section.hausdorff_integral(|_, _| 1.0);
        let exact = 4.0 * std::f64::consts::PI * r_s * r_s;
        assert!((area - exact).abs() < 1e-7 * exact, "{area} vs {exact}");
        // area factor constant along horizon generators
        for ray in &patch.rays {
            for s in &ray.samples {
                assert!((s.area_factor - 1.0).abs() < 1e-8);
            }
        }
        // weighted measure over [0, T]: 4 pi r_s^2 T
        let total = patch.integrate_measure(|_| 1.0);
        assert!((total - exact * 3.0).abs() < 1e-6 * exact * 3.0);
        // transfer far along the generators: area unchanged
        let moved = patch
            .graph_section_transfer(&vec![2.5; patch.len()])
            .unwrap();
        assert!((moved.area() - exact).abs() < 1e-8 * exact);
        assert!(patch.worst_shape_asymmetry() < 1e-10);
    }

    #[test]
    fn cross_section_independence_on_flat_cone() {
        // two patches of the same cone based at slices s = 1 and s = 2,
        // integrating bump functions supported in the common window
        let p1 = minkowski_cone(1.0, (0.2, 2.0), (8, 16));
        let p2 = minkowski_cone(2.0, (-0.8, 1.0), (8, 16));
        let mut rng = crate::numerics::SplitMix64::new(11);
        let mut integrands: Vec<Box<dyn Fn(&[f64]) -> f64 + Sync>> = Vec::new();
        for _ in 0..10 {
            let c0 = rng.uniform(-0.5, 0.5);
            let c1 = rng.uniform(-0.5, 0.5);
            let c2 = rng.uniform(0.5, 1.5);
            integrands.push(Box::new(move |x: &[f64]| {
                let r = (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
                // smooth bump in radius on (1.2, 3.0), polynomial in angle
                if r <= 1.2 || r >= 3.0 {
                    return 0.0;
                }
                let s = (r - 1.2) / 1.8;
                let bump = (s * (1.0 - s)).powi(2);
                bump * (c2 + c0 * x[1] / r + c1 * (x[2] / r) * (x[3] / r))
            }));
        }
        let worst = cross_section_independence_check(&p1, &p2, &integrands);
        assert!(worst < 2e-5, "independence violated by {worst:e}");

        // constructed failure: an off-by-one exponent in the transfer factor
        // shows up clearly above quadrature tolerance
        let wrong: f64 = p1
            .rays
            .iter()
            .enumerate()
            .map(|(i, ray)| {
                let mut fiber = 0.0;
                for w in ray.samples.windows(2) {
                    let (s0, s1) = (&w[0], &w[1]);
                    let f0 = integrands[0](&s0.position) * s0.log_density().exp() * s0.area_factor;
                    let f1 = integrands[0](&s1.position) * s1.log_density().exp() * s1.area_factor;
                    fiber += 0.5 * (f0 + f1) * (s1.t - s0.t);
                }
                p1.node_measure(i) * fiber
            })
            .sum();
        let right = p1.integrate_measure(|x| integrands[0](x));
        assert!((wrong - right).abs() > 1e-2 * right.abs().max(1e-3));
    }

    #[test]
    fn weighted_cone_patch_evaluates_dsl_weight() {
        let model = MetricModel::minkowski(4);
        let spec = ConeSpec {
            tip: vec![0.0; 4],
            s_ref: 1.0,
            resolution: vec![4, 8],
        };
        let weight = WeightField::from_expr("2*log(s)", Smoothness::C2).unwrap();
        let patch =
            build_cone_patch(&model, &spec, &weight, &PatchOptions::window(0.0, 1.0)).unwrap();
        let ray = &patch.rays[0];
        for s in &ray.samples {
            let expect = 2.0 * (1.0 + s.t).ln();
            assert!((s.weight - expect).abs() < 1e-12);
            // a_z = Phi + W = 2 log s + 2 log s = 4 log s on the flat cone
            assert!((s.log_density() - 4.0 * (1.0 + s.t).ln()).abs() < 1e-9);
        }
    }
}
