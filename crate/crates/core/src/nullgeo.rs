//! Null geodesics, adapted frames and Jacobi-matrix propagation.
//!
//! A generator is integrated as one first-order system: chart position and
//! velocity, a parallel-transported frame, and the Jacobi matrix with its
//! derivative, all on the same fixed RK4 grid. Frame index convention
//! (0-based): rows `0 .. n-2` are spacelike and tangent to the
//! cross-section, row `n-2` is the null generator direction `L`, row `n-1`
//! is the transverse null partner, normalized by `g(partner, L) = -1`.
//!
//! In the parallel frame the Jacobi matrix satisfies `J'' = J A` where `A`
//! is the frame expression of the tidal operator `w -> R(v, w) v`; its
//! trace equals `-Ric(v, v)`, which is what drives focusing. The spacelike
//! minor `Jbar` carries the area distortion: `det J = det Jbar`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{hermite, least_squares_fit};
use crate::spacetime::MetricModel;

/// Default integrator grid density (samples per unit affine parameter).
pub const DEFAULT_SAMPLES_PER_UNIT: usize = 512;
/// Floor on the spacelike Jacobi determinant; crossing it is a focal point.
pub const DET_FLOOR: f64 = 1e-12;
/// Tolerance on |g(v, v)| for vectors that must be null.
pub const NULL_TOL: f64 = 1e-9;

/// Per-generator adapted frame.
#[derive(Debug, Clone)]
pub struct AdaptedFrame {
    pub point: Vec<f64>,
    /// Row `a` holds the chart components of the frame vector `e_a`.
    pub vectors: DMatrix<f64>,
    /// Gram matrix `eta_{ab} = g(e_a, e_b)`.
    pub gram: DMatrix<f64>,
}

impl AdaptedFrame {
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vector(&self, a: usize) -> DVector<f64> {
        self.vectors.row(a).transpose()
    }

    /// The null generator direction L.
    pub fn l(&self) -> DVector<f64> {
        self.vector(self.dim() - 2)
    }

    /// The transverse null partner.
    pub fn transverse(&self) -> DVector<f64> {
        self.vector(self.dim() - 1)
    }

    /// Largest deviation of the Gram matrix from the required block form:
    /// identity spacelike block, zero couplings, and the antidiagonal -1
    /// pairing of the two null rows.
    pub fn gram_block_violation(&self) -> f64 {
        let n = self.dim();
        let m = n - 2;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                let expected = if a < m && b < m {
                    if a == b {
                        1.0
                    } else {
                        0.0
                    }
                } else if (a == m && b == n - 1) || (a == n - 1 && b == m) {
                    -1.0
                } else {
                    0.0
                };
                worst = worst.max((self.gram[(a, b)] - expected).abs());
            }
        }
        worst
    }
}

/// Build the adapted frame at a cross-section point: Gram-Schmidt on the
/// spacelike tangent block, then the unique transverse null vector solving
/// `g(transverse, e_i) = 0`, `g(transverse, L) = -1`, `g(transverse,
/// transverse) = 0`.
pub fn build_adapted_frame(
    model: &MetricModel,
    point: &[f64],
    tangent_basis: &[DVector<f64>],
    l: &[f64],
) -> Result<AdaptedFrame> {
    let n = model.dim();
    let m = n - 2;
    if tangent_basis.len() != m {
        return Err(Error::DegenerateSection {
            reason: format!("expected {m} tangent vectors, got {}", tangent_basis.len()),
        });
    }
    let g = model.metric(point)?;
    let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &g * b)[(0, 0)];

    let lv = DVector::from_column_slice(l);
    let l_norm2 = ip(&lv, &lv);
    let l_scale = lv.amax().powi(2).max(1e-300);
    if l_norm2.abs() > NULL_TOL * l_scale.max(1.0) {
        return Err(Error::NullDefect {
            t: 0.0,
            defect: l_norm2.abs(),
        });
    }

    // Gram-Schmidt on the tangent block.
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(m);
    for v in tangent_basis {
        let mut u = v.clone();
        for e in &ortho {
            let c = ip(&u, e);
            u -= e * c;
        }
        let norm2 = ip(&u, &u);
        if norm2 <= 1e-14 {
            return Err(Error::DegenerateSection {
                reason: format!("tangent Gram block not positive definite (norm^2 = {norm2:e})"),
            });
        }
        ortho.push(u / norm2.sqrt());
    }
    for e in &ortho {
        let c = ip(&lv, e);
        if c.abs() > 1e-8 * lv.amax().max(1.0) {
            return Err(Error::DegenerateSection {
                reason: format!("L is not orthogonal to the section (g(L, e) = {c:e})"),
            });
        }
    }

    // Transverse partner: solve the (n-1) x n system
    //   g(y, e_i) = 0,  g(y, L) = -1
    // by least-norm SVD, then slide along L to make it null.
    let mut mat = DMatrix::zeros(n - 1, n);
    for (i, e) in ortho.iter().enumerate() {
        let row = e.transpose() * &g;
        mat.row_mut(i).copy_from(&row);
    }
    let lrow = lv.transpose() * &g;
    mat.row_mut(n - 2).copy_from(&lrow);
    let mut rhs = DVector::zeros(n - 1);
    rhs[n - 2] = -1.0;
    let svd = mat.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if min_sv <= 1e-10 * max_sv.max(1e-300) {
        return Err(Error::NoTransverse);
    }
    let y0 = svd.solve(&rhs, 1e-12).map_err(|_| Error::NoTransverse)?;
    // g(y0 + lam L, y0 + lam L) = g(y0, y0) - 2 lam  =>  lam = g(y0, y0) / 2
    let lam = ip(&y0, &y0) / 2.0;
    let trans = y0 + &lv * lam;

    let mut vectors = DMatrix::zeros(n, n);
    for (i, e) in ortho.iter().enumerate() {
        vectors.row_mut(i).copy_from(&e.transpose());
    }
    vectors.row_mut(n - 2).copy_from(&lv.transpose());
    vectors.row_mut(n - 1).copy_from(&trans.transpose());
    let gram = &vectors * &g * vectors.transpose();
    Ok(AdaptedFrame {
        point: point.to_vec(),
        vectors,
        gram,
    })
}

/// Diagnostic for the rigged metric `g~ = g + alpha (x) alpha` with
/// `alpha = g(-transverse, .)`: on the frame it must agree with `g` on the
/// spacelike block, pair to zero with `L`, and give `g~(L, L) = 1`.
/// Returns the largest violation.
pub fn rigged_metric_check(model: &MetricModel, frame: &AdaptedFrame) -> f64 {
    let n = frame.dim();
    let m = n - 2;
    let g = model.metric_raw(&frame.point);
    let tr = frame.transverse();
    let alpha = |v: &DVector<f64>| -> f64 { -(tr.transpose() * &g * v)[(0, 0)] };
    let gt = |v: &DVector<f64>, w: &DVector<f64>| -> f64 {
        (v.transpose() * &g * w)[(0, 0)] + alpha(v) * alpha(w)
    };
    let l = frame.l();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        let ei = frame.vector(i);
        for j in 0..m {
            let ej = frame.vector(j);
            let plain = (ei.transpose() * &g * &ej)[(0, 0)];
            worst = worst.max((gt(&ei, &ej) - plain).abs());
        }
        worst = worst.max(gt(&ei, &l).abs());
    }
    worst = worst.max((gt(&l, &l) - 1.0).abs());
    worst
}

/// Options controlling generator integration.
#[derive(Debug, Clone)]
pub struct RayOptions {
    pub t_min: f64,
    pub t_max: f64,
    pub samples_per_unit: usize,
    pub det_floor: f64,
    pub null_tol: f64,
    /// Renormalize the velocity onto the null cone every this many steps.
    pub project_every: usize,
    /// Check structural identities every this many steps.
    pub check_every: usize,
    pub on_focal: FocalPolicy,
    /// Capture the full integrator state at `t_max`.
    pub capture_terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocalPolicy {
    /// Return `Error::FocalPoint` if the determinant floor is crossed.
    Error,
    /// Truncate the window one grid step before the crossing.
    Truncate,
}

impl RayOptions {
    pub fn window(t_min: f64, t_max: f64) -> Self {
        Self {
            t_min,
            t_max,
            samples_per_unit: DEFAULT_SAMPLES_PER_UNIT,
            det_floor: DET_FLOOR,
            null_tol: NULL_TOL,
            project_every: 100,
            check_every: 16,
            on_focal: FocalPolicy::Truncate,
            capture_terminal: false,
        }
    }

    pub fn with_terminal_capture(mut self) -> Self {
        self.capture_terminal = true;
        self
    }

    pub fn with_resolution(mut self, samples_per_unit: usize) -> Self {
        self.samples_per_unit = samples_per_unit;
        self
    }

    pub fn with_focal_policy(mut self, policy: FocalPolicy) -> Self {
        self.on_focal = policy;
        self
    }
}

/// One stored sample of a generator.
#[derive(Debug, Clone)]
pub struct RaySample {
    pub t: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// det of the spacelike Jacobi minor (the area-distortion factor).
    pub area_factor: f64,
    /// log of the area factor (the log-density of the rigged measure).
    pub log_area: f64,
    /// d/dt of `log_area`, i.e. `tr(Jbar^{-1} Jbar')`.
    pub dlog_area: f64,
    /// Weight value at the sample.
    pub weight: f64,
    /// Spacelike Jacobi minor, row-major `(n-2) x (n-2)`.
    pub jbar: Vec<f64>,
}

impl RaySample {
    /// Weighted log-density `a_z(t) = Phi + W_L`.
    pub fn log_density(&self) -> f64 {
        self.weight + self.log_area
    }
}

/// Accumulated worst-case deviations of the structural identities along a
/// generator.
#[derive(Debug, Clone, Default)]
pub struct RayDiagnostics {
    /// Row identity: the `L`-row of `J` stays the unit row.
    pub row_identity: f64,
    /// Column identity: the transverse column of `J` stays `delta`.
    pub column_identity: f64,
    /// Gauss invariant: `g(J_i(t), L)` stays at its initial value.
    pub gauss_invariant: f64,
    /// Largest null defect |g(v, v)| observed.
    pub null_defect: f64,
    /// |det J - det Jbar| / max(1, |det J|), largest observed.
    pub det_structure: f64,
}

impl RayDiagnostics {
    fn merge(&mut self, other: &RayDiagnostics) {
        self.row_identity = self.row_identity.max(other.row_identity);
        self.column_identity = self.column_identity.max(other.column_identity);
        self.gauss_invariant = self.gauss_invariant.max(other.gauss_invariant);
        self.null_defect = self.null_defect.max(other.null_defect);
        self.det_structure = self.det_structure.max(other.det_structure);
    }
}

/// Full integrator state at the end of the forward march; used to re-base
/// a cone ray at its reference slice.
#[derive(Debug, Clone)]
pub struct TerminalState {
    pub t: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Parallel-transported frame rows (chart components).
    pub frame: DMatrix<f64>,
    /// Jacobi matrix and derivative in frame components.
    pub j: DMatrix<f64>,
    pub j_prime: DMatrix<f64>,
}

/// A fully propagated generator.
#[derive(Debug, Clone)]
pub struct GeneratorRay {
    /// Cross-section node label.
    pub node: usize,
    /// Samples in increasing `t`, containing `t = 0`.
    pub samples: Vec<RaySample>,
    pub diagnostics: RayDiagnostics,
    /// Refined focal crossings, when the window had to be truncated.
    pub focal_backward: Option<f64>,
    pub focal_forward: Option<f64>,
    /// Initial adapted frame at `t = 0`.
    pub frame: AdaptedFrame,
    /// `J'(0)` in frame components (the shape operator block).
    pub shape: DMatrix<f64>,
    /// Full state at `t_max`, captured on request.
    pub terminal: Option<TerminalState>,
}

impl GeneratorRay {
    pub fn window(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    pub fn grid(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Index of the `t = 0` sample.
    pub fn base_index(&self) -> usize {
        self.samples
            .iter()
            .position(|s| s.t == 0.0)
            .expect("ray contains t = 0")
    }

    fn bracket(&self, t: f64) -> Result<usize> {
        let (lo, hi) = self.window();
        let grid = self.grid();
        crate::numerics::bracket(&grid, t).ok_or(Error::OutOfWindow {
            t,
            t_min: lo,
            t_max: hi,
        })
    }

    /// Cubic-Hermite position at parameter `t` inside the window.
    pub fn position_at(&self, t: f64) -> Result<Vec<f64>> {
        let i = self.bracket(t)?;
        let (s0, s1) = (&self.samples[i], &self.samples[i + 1]);
        Ok((0..s0.position.len())
            .map(|k| {
                hermite(
                    s0.t,
                    s0.position[k],
                    s0.velocity[k],
                    s1.t,
                    s1.position[k],
                    s1.velocity[k],
                    t,
                )
            })
            .collect())
    }

    /// Velocity at `t` (linear interpolation of components).
    pub fn velocity_at(&self, t: f64) -> Result<Vec<f64>> {
        let i = self.bracket(t)?;
        let (s0, s1) = (&self.samples[i], &self.samples[i + 1]);
        let h = s1.t - s0.t;
        let s = (t - s0.t) / h;
        Ok((0..s0.velocity.len())
            .map(|k| s0.velocity[k] * (1.0 - s) + s1.velocity[k] * s)
            .collect())
    }

    /// Log-area W interpolated at `t` (cubic Hermite in (W, W')).
    pub fn log_area_at(&self, t: f64) -> Result<f64> {
        let i = self.bracket(t)?;
        let (s0, s1) = (&self.samples[i], &self.samples[i + 1]);
        Ok(hermite(
            s0.t,
            s0.log_area,
            s0.dlog_area,
            s1.t,
            s1.log_area,
            s1.dlog_area,
            t,
        ))
    }

    /// Area factor det Jbar interpolated at `t`.
    pub fn area_factor_at(&self, t: f64) -> Result<f64> {
        Ok(self.log_area_at(t)?.exp())
    }

    /// The initial data this ray was propagated from (for re-integration
    /// at a different resolution or window).
    pub fn reinit(&self) -> RayInit {
        RayInit::from_shape(self.node, self.frame.clone(), self.shape.clone())
    }
}

/// Initial data for propagating one generator.
#[derive(Debug, Clone)]
pub struct RayInit {
    pub node: usize,
    pub frame: AdaptedFrame,
    /// `J(0)` in frame components; the identity for section-based rays.
    pub j0: DMatrix<f64>,
    /// `J'(0)` in frame components; rows `0..n-2` hold the frame components
    /// of the covariant derivative of L along the section frame, the two
    /// null rows are zero for a parallel-transported extension of L.
    pub j0_prime: DMatrix<f64>,
}

impl RayInit {
    /// Standard section-based initial data: `J(0) = Id`, `J'(0) = shape`.
    pub fn from_shape(node: usize, frame: AdaptedFrame, shape: DMatrix<f64>) -> Self {
        let n = frame.dim();
        Self {
            node,
            frame,
            j0: DMatrix::identity(n, n),
            j0_prime: shape,
        }
    }
}

/// Integrate a plain null geodesic (no frame, no Jacobi data) over a
/// window, returning `(t, position, velocity)` samples in increasing `t`.
pub fn integrate_null_geodesic(
    model: &MetricModel,
    x0: &[f64],
    v0: &[f64],
    opts: &RayOptions,
) -> Result<Vec<(f64, Vec<f64>, Vec<f64>)>> {
    let defect = model.inner(x0, v0, v0).abs();
    let scale = v0.iter().map(|c| c * c).sum::<f64>().max(1e-300);
    if defect > opts.null_tol * scale {
        return Err(Error::NullDefect { t: 0.0, defect });
    }
    if !future_directed(model, x0, v0) {
        return Err(Error::InvalidConfig(
            "initial velocity is not future-directed".to_string(),
        ));
    }
    model.check_chart(x0)?;

    let h = 1.0 / opts.samples_per_unit as f64;
    let march = |dir: f64, t_end: f64| -> Result<Vec<(f64, Vec<f64>, Vec<f64>)>> {
        let steps = ((t_end.abs() / h).round() as usize).max(1);
        let h = t_end.abs() / steps as f64;
        let mut out = Vec::with_capacity(steps);
        let mut x = x0.to_vec();
        let mut v = v0.to_vec();
        for k in 1..=steps {
            rk4_geodesic(model, &mut x, &mut v, dir * h);
            let t = dir * h * k as f64;
            if !model.chart().contains(&x) {
                return Err(Error::LeftChart { t });
            }
            let d = model.inner(&x, &v, &v).abs();
            if d > 10.0 * opts.null_tol * scale.max(1.0) {
                return Err(Error::NullDefect { t, defect: d });
            }
            if k % opts.project_every == 0 {
                project_null(model, &x, &mut v);
            }
            out.push((t, x.clone(), v.clone()));
        }
        Ok(out)
    };

    let mut back = if opts.t_min < 0.0 {
        march(-1.0, opts.t_min)?
    } else {
        Vec::new()
    };
    let fwd = if opts.t_max > 0.0 {
        march(1.0, opts.t_max)?
    } else {
        Vec::new()
    };
    back.reverse();
    let mut all = back;
    all.push((0.0, x0.to_vec(), v0.to_vec()));
    all.extend(fwd);
    Ok(all)
}

/// Whether `v` is future-directed at `x` under the model's time
/// orientation (the coordinate time direction).
pub fn future_directed(model: &MetricModel, x: &[f64], v: &[f64]) -> bool {
    let n = model.dim();
    let mut t_dir = vec![0.0; n];
    t_dir[0] = 1.0;
    model.inner(x, v, &t_dir) < 0.0
}

fn rk4_geodesic(model: &MetricModel, x: &mut [f64], v: &mut [f64], h: f64) {
    let n = x.len();
    if model.coordinates_inertial() {
        for k in 0..n {
            x[k] += h * v[k];
        }
        return;
    }
    let deriv = |x: &[f64], v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let gam = model.christoffel_raw(x);
        let mut acc = vec![0.0; n];
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += gam.get(k, i, j) * v[i] * v[j];
                }
            }
            acc[k] = -s;
        }
        (v.to_vec(), acc)
    };
    let (k1x, k1v) = deriv(x, v);
    let (x2, v2) = eul(x, v, &k1x, &k1v, 0.5 * h);
    let (k2x, k2v) = deriv(&x2, &v2);
    let (x3, v3) = eul(x, v, &k2x, &k2v, 0.5 * h);
    let (k3x, k3v) = deriv(&x3, &v3);
    let (x4, v4) = eul(x, v, &k3x, &k3v, h);
    let (k4x, k4v) = deriv(&x4, &v4);
    for k in 0..n {
        x[k] += h / 6.0 * (k1x[k] + 2.0 * k2x[k] + 2.0 * k3x[k] + k4x[k]);
        v[k] += h / 6.0 * (k1v[k] + 2.0 * k2v[k] + 2.0 * k3v[k] + k4v[k]);
    }
}

fn eul(x: &[f64], v: &[f64], dx: &[f64], dv: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    (
        x.iter().zip(dx).map(|(a, d)| a + h * d).collect(),
        v.iter().zip(dv).map(|(a, d)| a + h * d).collect(),
    )
}

/// Slide the velocity back onto the null cone along the coordinate time
/// direction (first-order correction, applied periodically).
fn project_null(model: &MetricModel, x: &[f64], v: &mut [f64]) {
    let n = v.len();
    let mut t_dir = vec![0.0; n];
    t_dir[0] = 1.0;
    let gvv = model.inner(x, v, v);
    let gvt = model.inner(x, v, &t_dir);
    if gvt.abs() > 1e-12 {
        let lam = gvv / (2.0 * gvt);
        v[0] -= lam;
    }
}

// ---------------------------------------------------------------------
// Joint propagation: geodesic + frame + Jacobi matrix
// ---------------------------------------------------------------------

/// Flat state layout: x | v | F | J | J'  (matrices row-major n x n).
struct JointState {
    n: usize,
    data: Vec<f64>,
}

impl JointState {
    fn len(n: usize) -> usize {
        2 * n + 3 * n * n
    }

    fn new(init: &RayInit) -> Self {
        let n = init.frame.dim();
        let mut data = vec![0.0; Self::len(n)];
        data[..n].copy_from_slice(&init.frame.point);
        for k in 0..n {
            data[n + k] = init.frame.vectors[(n - 2, k)];
        }
        let off_f = 2 * n;
        let off_j = 2 * n + n * n;
        let off_jp = 2 * n + 2 * n * n;
        for a in 0..n {
            for k in 0..n {
                data[off_f + a * n + k] = init.frame.vectors[(a, k)];
                data[off_j + a * n + k] = init.j0[(a, k)];
                data[off_jp + a * n + k] = init.j0_prime[(a, k)];
            }
        }
        Self { n, data }
    }

    fn x(&self) -> &[f64] {
        &self.data[..self.n]
    }
    fn v(&self) -> &[f64] {
        &self.data[self.n..2 * self.n]
    }
    fn frame(&self) -> &[f64] {
        &self.data[2 * self.n..2 * self.n + self.n * self.n]
    }
    fn j(&self) -> &[f64] {
        let o = 2 * self.n + self.n * self.n;
        &self.data[o..o + self.n * self.n]
    }
    fn jp(&self) -> &[f64] {
        let o = 2 * self.n + 2 * self.n * self.n;
        &self.data[o..o + self.n * self.n]
    }
}

fn joint_deriv(model: &MetricModel, n: usize, state: &[f64], out: &mut [f64]) {
    let x = &state[..n];
    let v = &state[n..2 * n];
    let off_f = 2 * n;
    let off_j = off_f + n * n;
    let off_jp = off_j + n * n;

    out[..n].copy_from_slice(v);

    if model.coordinates_inertial() {
        out[n..2 * n].fill(0.0);
        out[off_f..off_j].fill(0.0);
        out.copy_within(off_jp..off_jp + n * n, off_j);
        out[off_jp..off_jp + n * n].fill(0.0);
        // dJ = J' needs the state's J', not out's
        out[off_j..off_jp].copy_from_slice(&state[off_jp..off_jp + n * n]);
        return;
    }

    let gam = model.christoffel_raw(x);
    // acceleration and frame transport
    for k in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += gam.get(k, i, j) * v[i] * v[j];
            }
        }
        out[n + k] = -s;
    }
    for a in 0..n {
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += gam.get(k, i, j) * v[i] * state[off_f + a * n + j];
                }
            }
            out[off_f + a * n + k] = -s;
        }
    }
    // dJ = J'
    out[off_j..off_jp].copy_from_slice(&state[off_jp..off_jp + n * n]);
    // dJ' = J A_frame, A_frame = F A^T F^{-1} with A the chart tidal matrix
    if model.is_flat() {
        out[off_jp..off_jp + n * n].fill(0.0);
        return;
    }
    let a_chart = model.tidal(x, v);
    let f_mat = DMatrix::from_row_slice(n, n, &state[off_f..off_j]);
    let w = &f_mat * a_chart.transpose();
    let a_frame = f_mat
        .transpose()
        .lu()
        .solve(&w.transpose())
        .expect("parallel frame stays invertible")
        .transpose();
    let j_mat = DMatrix::from_row_slice(n, n, &state[off_j..off_jp]);
    let jpp = j_mat * a_frame;
    for a in 0..n {
        for k in 0..n {
            out[off_jp + a * n + k] = jpp[(a, k)];
        }
    }
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let len = JointState::len(n);
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }
}

fn rk4_joint(model: &MetricModel, n: usize, state: &mut JointState, h: f64, sc: &mut Scratch) {
    let len = JointState::len(n);
    joint_deriv(model, n, &state.data, &mut sc.k1);
    for i in 0..len {
        sc.tmp[i] = state.data[i] + 0.5 * h * sc.k1[i];
    }
    joint_deriv(model, n, &sc.tmp, &mut sc.k2);
    for i in 0..len {
        sc.tmp[i] = state.data[i] + 0.5 * h * sc.k2[i];
    }
    joint_deriv(model, n, &sc.tmp, &mut sc.k3);
    for i in 0..len {
        sc.tmp[i] = state.data[i] + h * sc.k3[i];
    }
    joint_deriv(model, n, &sc.tmp, &mut sc.k4);
    for i in 0..len {
        state.data[i] += h / 6.0 * (sc.k1[i] + 2.0 * sc.k2[i] + 2.0 * sc.k3[i] + sc.k4[i]);
    }
}

/// Spacelike minor determinant, d/dt log det, and the flattened minor.
fn minor_stats(n: usize, j: &[f64], jp: &[f64]) -> (f64, f64, Vec<f64>) {
    let m = n - 2;
    let jbar = DMatrix::from_fn(m, m, |r, c| j[r * n + c]);
    let jbar_p = DMatrix::from_fn(m, m, |r, c| jp[r * n + c]);
    let det = jbar.determinant();
    let dlog = jbar
        .clone()
        .lu()
        .solve(&jbar_p)
        .map(|u| u.trace())
        .unwrap_or(f64::NAN);
    let mut flat = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            flat[r * m + c] = jbar[(r, c)];
        }
    }
    (det, dlog, flat)
}

fn full_det(n: usize, j: &[f64]) -> f64 {
    DMatrix::from_row_slice(n, n, j).determinant()
}

/// Propagate one generator: geodesic, parallel frame and Jacobi matrix as
/// one system on a fixed grid over `[t_min, t_max]` (0 always included).
pub fn propagate_ray<W>(
    model: &MetricModel,
    init: RayInit,
    opts: &RayOptions,
    weight_at: W,
) -> Result<GeneratorRay>
where
    W: Fn(&[f64], f64) -> Result<f64>,
{
    let n = model.dim();
    let h = 1.0 / opts.samples_per_unit as f64;
    let v0 = init.frame.l();
    let scale = v0.iter().map(|c| c * c).sum::<f64>().max(1.0);

    let make_sample = |t: f64, st: &JointState| -> Result<RaySample> {
        let (det, dlog, jbar) = minor_stats(n, st.j(), st.jp());
        let weight = weight_at(st.x(), t)?;
        Ok(RaySample {
            t,
            position: st.x().to_vec(),
            velocity: st.v().to_vec(),
            area_factor: det,
            log_area: det.max(f64::MIN_POSITIVE).ln(),
            dlog_area: dlog,
            weight,
            jbar,
        })
    };

    // Initial Gauss invariants g(J_i(0), L).
    let g0 = model.metric(&init.frame.point)?;
    let gauss_ref: Vec<f64> = {
        let f = &init.frame.vectors;
        let l = init.frame.l();
        (0..n)
            .map(|i| {
                let mut ji = DVector::zeros(n);
                for b in 0..n {
                    ji += f.row(b).transpose() * init.j0[(i, b)];
                }
                (ji.transpose() * &g0 * &l)[(0, 0)]
            })
            .collect()
    };

    let march = |dir: f64,
                 t_end: f64,
                 diags: &mut RayDiagnostics|
     -> Result<(Vec<RaySample>, Option<f64>, JointState)> {
        let steps = ((t_end.abs() / h).round() as usize).max(1);
        // snap the step so the march lands exactly on the window end
        let h = t_end.abs() / steps as f64;
        let mut out = Vec::with_capacity(steps);
        let mut st = JointState::new(&init);
        let mut scratch = Scratch::new(n);
        let mut prev = JointState::new(&init);
        for k in 1..=steps {
            prev.data.copy_from_slice(&st.data);
            rk4_joint(model, n, &mut st, dir * h, &mut scratch);
            let t = dir * h * k as f64;
            if !model.chart().contains(st.x()) {
                return Err(Error::LeftChart { t });
            }
            let defect = model.inner(st.x(), st.v(), st.v()).abs();
            diags.null_defect = diags.null_defect.max(defect);
            if defect > 10.0 * opts.null_tol * scale {
                return Err(Error::NullDefect { t, defect });
            }
            if k % opts.project_every == 0 {
                let xs = st.x().to_vec();
                let mut vv = st.v().to_vec();
                project_null(model, &xs, &mut vv);
                st.data[n..2 * n].copy_from_slice(&vv);
            }
            let sample = make_sample(t, &st)?;
            if !(sample.area_factor > opts.det_floor) {
                let crossing = refine_focal(n, &prev, &st, t - dir * h, t, opts.det_floor);
                match opts.on_focal {
                    FocalPolicy::Error => {
                        return Err(Error::FocalPoint {
                            t: crossing,
                            floor: opts.det_floor,
                        })
                    }
                    FocalPolicy::Truncate => return Ok((out, Some(crossing), st)),
                }
            }
            if k % opts.check_every == 0 || k == steps {
                check_structure(model, n, &st, &gauss_ref, diags);
            }
            out.push(sample);
        }
        Ok((out, None, st))
    };

    let mut diags = RayDiagnostics::default();
    let (mut back, focal_backward) = if opts.t_min < 0.0 {
        let mut d = RayDiagnostics::default();
        let (s, f, _) = march(-1.0, opts.t_min, &mut d)?;
        diags.merge(&d);
        (s, f)
    } else {
        (Vec::new(), None)
    };
    let (fwd, focal_forward, fwd_state) = if opts.t_max > 0.0 {
        let mut d = RayDiagnostics::default();
        let r = march(1.0, opts.t_max, &mut d)?;
        diags.merge(&d);
        r
    } else {
        (Vec::new(), None, JointState::new(&init))
    };

    let terminal = if opts.capture_terminal && focal_forward.is_none() {
        let st = &fwd_state;
        Some(TerminalState {
            t: opts.t_max.max(0.0),
            position: st.x().to_vec(),
            velocity: st.v().to_vec(),
            frame: DMatrix::from_row_slice(n, n, st.frame()),
            j: DMatrix::from_row_slice(n, n, st.j()),
            j_prime: DMatrix::from_row_slice(n, n, st.jp()),
        })
    } else {
        None
    };

    let st0 = JointState::new(&init);
    let base = make_sample(0.0, &st0)?;
    back.reverse();
    let mut samples = back;
    samples.push(base);
    samples.extend(fwd);

    Ok(GeneratorRay {
        node: init.node,
        samples,
        diagnostics: diags,
        focal_backward,
        focal_forward,
        frame: init.frame,
        shape: init.j0_prime,
        terminal,
    })
}

/// Refine the focal crossing by bisection on the Hermite interpolant of
/// the spacelike minor between the last good sample and the bad one.
fn refine_focal(
    n: usize,
    good: &JointState,
    bad: &JointState,
    t0: f64,
    t1: f64,
    floor: f64,
) -> f64 {
    let m = n - 2;
    let det_at = |t: f64| -> f64 {
        let jb = DMatrix::from_fn(m, m, |r, c| {
            hermite(
                t0,
                good.j()[r * n + c],
                good.jp()[r * n + c],
                t1,
                bad.j()[r * n + c],
                bad.jp()[r * n + c],
                t,
            )
        });
        jb.determinant()
    };
    let (mut lo, mut hi) = (t0, t1);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if det_at(mid) > floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_structure(
    model: &MetricModel,
    n: usize,
    st: &JointState,
    gauss_ref: &[f64],
    diags: &mut RayDiagnostics,
) {
    let j = st.j();
    for k in 0..n {
        let expect = if k == n - 2 { 1.0 } else { 0.0 };
        diags.row_identity = diags.row_identity.max((j[(n - 2) * n + k] - expect).abs());
    }
    for i in 0..n {
        let expect = if i == n - 1 { 1.0 } else { 0.0 };
        diags.column_identity = diags
            .column_identity
            .max((j[i * n + (n - 1)] - expect).abs());
    }
    let g = model.metric_raw(st.x());
    let f = st.frame();
    let v = st.v();
    for i in 0..n {
        let mut ji = vec![0.0; n];
        for b in 0..n {
            let c = j[i * n + b];
            for k in 0..n {
                ji[k] += c * f[b * n + k];
            }
        }
        let mut gl = 0.0;
        for p in 0..n {
            for q in 0..n {
                gl += g[(p, q)] * ji[p] * v[q];
            }
        }
        diags.gauss_invariant = diags.gauss_invariant.max((gl - gauss_ref[i]).abs());
    }
    let (det_bar, _, _) = minor_stats(n, j, st.jp());
    let det_full = full_det(n, j);
    diags.det_structure = diags
        .det_structure
        .max((det_full - det_bar).abs() / det_full.abs().max(1.0));
}

// ---------------------------------------------------------------------
// Taylor curvature probe
// ---------------------------------------------------------------------

/// Options for [`taylor_ricci_probe`].
#[derive(Debug, Clone)]
pub struct TaylorProbeOptions {
    /// Largest affine distance from the tip used in the fit.
    pub h_max: f64,
    pub samples_per_unit: usize,
    /// Relative residual tolerance of the cubic fit.
    pub fit_tol: f64,
}

impl Default for TaylorProbeOptions {
    fn default() -> Self {
        Self {
            h_max: 0.12,
            samples_per_unit: DEFAULT_SAMPLES_PER_UNIT,
            fit_tol: 1e-5,
        }
    }
}

/// Estimate `Ric(v, v)` from the cubic coefficient of the small-cone area
/// expansion `(det Jbar(h))^(1/(n-2)) = h - h^3 Ric(v,v)/(6(n-2)) + o(h^3)`
/// along the null geodesic from `p` with velocity `v`. An independent
/// cross-check of the curvature evaluators. (The coefficient follows from
/// `Jbar(h) = h I + h^3/6 Abar(0) + O(h^4)` with `tr Abar = -Ric(v,v)`;
/// the scalar model `J'' = -K J`, `J = sin(sqrt(K) h)/sqrt(K)` pins the
/// 1/6.)
pub fn taylor_ricci_probe(
    model: &MetricModel,
    p: &[f64],
    v: &[f64],
    opts: &TaylorProbeOptions,
) -> Result<f64> {
    let n = model.dim();
    let m = n - 2;
    let frame = tip_frame(model, p, v)?;
    // Tip initial data: spacelike rows start at zero with unit derivative.
    let mut j0 = DMatrix::identity(n, n);
    let mut j0p = DMatrix::zeros(n, n);
    for i in 0..m {
        j0[(i, i)] = 0.0;
        j0p[(i, i)] = 1.0;
    }
    let init = RayInit {
        node: 0,
        frame,
        j0,
        j0_prime: j0p,
    };
    let ray_opts = RayOptions::window(0.0, opts.h_max)
        .with_resolution(opts.samples_per_unit)
        .with_focal_policy(FocalPolicy::Error);
    let ray = propagate_ray(model, init, &ray_opts, |_, _| Ok(0.0))?;

    let mut hs = Vec::new();
    let mut ys = Vec::new();
    for s in &ray.samples {
        if s.t > 0.02 * opts.h_max {
            hs.push(s.t);
            ys.push(s.area_factor.powf(1.0 / m as f64) - s.t);
        }
    }
    if hs.len() < 8 {
        return Err(Error::FitFailure {
            residual: f64::INFINITY,
            tol: opts.fit_tol,
        });
    }
    let b3 = |h: f64| h * h * h;
    let b4 = |h: f64| h * h * h * h;
    let b5 = |h: f64| h * h * h * h * h;
    let basis: Vec<&dyn Fn(f64) -> f64> = vec![&b3, &b4, &b5];
    let (coef, residual) = least_squares_fit(&hs, &ys, &basis);
    let y_scale = ys.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if residual > opts.fit_tol * y_scale.max(opts.h_max.powi(3)) {
        return Err(Error::FitFailure {
            residual,
            tol: opts.fit_tol,
        });
    }
    Ok(-6.0 * m as f64 * coef[0])
}

/// Adapted frame at a cone tip for a given null direction: the spacelike
/// block spans the g-orthogonal complement of `span(v, coordinate time)`,
/// built by projecting coordinate directions off that timelike 2-plane.
fn tip_frame(model: &MetricModel, p: &[f64], v: &[f64]) -> Result<AdaptedFrame> {
    let n = model.dim();
    let g = model.metric(p)?;
    let mut t_dir = DVector::zeros(n);
    t_dir[0] = 1.0;
    let vv = DVector::from_column_slice(v);
    let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &g * b)[(0, 0)];
    // Gram of the (v, t) plane; v is null so invertibility rests on g(v, t).
    let g2 = nalgebra::Matrix2::new(
        ip(&vv, &vv),
        ip(&vv, &t_dir),
        ip(&t_dir, &vv),
        ip(&t_dir, &t_dir),
    );
    let g2_inv = g2.try_inverse().ok_or(Error::NoTransverse)?;
    let mut tangent: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        if tangent.len() == n - 2 {
            break;
        }
        let mut w = DVector::zeros(n);
        w[k] = 1.0;
        let rhs = nalgebra::Vector2::new(ip(&vv, &w), ip(&t_dir, &w));
        let c = g2_inv * rhs;
        w -= &vv * c[0] + &t_dir * c[1];
        // keep only directions independent of those already collected
        for e in &tangent {
            let d = ip(&w, e);
            w -= e * d;
        }
        let norm2 = ip(&w, &w);
        if norm2 > 1e-8 {
            tangent.push(w / norm2.sqrt());
        }
    }
    if tangent.len() != n - 2 {
        return Err(Error::NoTransverse);
    }
    build_adapted_frame(model, p, &tangent, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SplitMix64;
    use crate::spacetime::{MetricKind, MetricModel};

    #[test]
    fn minkowski_geodesics_are_straight_lines() {
        let m = MetricModel::minkowski(4);
        let x0 = vec![0.0, 1.0, 0.0, 0.0];
        let v0 = vec![1.0, 1.0, 0.0, 0.0];
        let opts = RayOptions::window(-0.5, 2.0);
        let path = integrate_null_geodesic(&m, &x0, &v0, &opts).unwrap();
        for (t, x, v) in path {
            for k in 0..4 {
                assert!((x[k] - (x0[k] + t * v0[k])).abs() < 1e-12);
                assert!((v[k] - v0[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_window_matches_reflected_forward_integration() {
        // ODE symmetry: x -> -x is an isometry of the anisotropic metric
        // (g_xx is even in t), so integrating backwards from x0 equals
        // minus the forward integration from -x0 with the same velocity.
        let m = MetricModel::perturbed_anisotropic(4, -1.0, 0.05);
        let x0 = vec![0.3, 0.1, 0.2, -0.4];
        let b = (1.0f64 - 0.05 * 0.09).sqrt();
        let alpha: f64 = 0.9;
        let v0 = vec![1.0, alpha.cos() / b, alpha.sin(), 0.0];
        let back = integrate_null_geodesic(&m, &x0, &v0, &RayOptions::window(-0.4, 0.0)).unwrap();
        let x0r: Vec<f64> = x0.iter().map(|c| -c).collect();
        let fwd = integrate_null_geodesic(&m, &x0r, &v0, &RayOptions::window(0.0, 0.4)).unwrap();
        let map: std::collections::BTreeMap<i64, &Vec<f64>> = fwd
            .iter()
            .map(|(t, x, _)| ((t * 512.0).round() as i64, x))
            .collect();
        for (tb, xb, _) in &back {
            let key = (-tb * 512.0).round() as i64;
            let xf = map[&key];
            for i in 0..4 {
                assert!(
                    (xb[i] + xf[i]).abs() < 1e-10,
                    "t = {tb}: {} vs {}",
                    xb[i],
                    -xf[i]
                );
            }
        }
    }

    #[test]
    fn horizon_generator_stays_on_horizon() {
        let r_s = 1.0;
        let m = MetricModel::schwarzschild_lemaitre(r_s);
        let x0 = vec![0.0, 2.0 * r_s / 3.0, 1.2, 0.3];
        let v0 = vec![1.0, 1.0, 0.0, 0.0];
        let opts = RayOptions::window(0.0, 5.0);
        let path = integrate_null_geodesic(&m, &x0, &v0, &opts).unwrap();
        for (_t, x, _v) in path {
            let r = (1.5 * (x[1] - x[0])).powf(2.0 / 3.0);
            assert!((r - r_s).abs() < 1e-9, "left the horizon: r = {r}");
        }
    }

    #[test]
    fn null_defect_stays_small_on_catalog_generators() {
        let models = vec![
            MetricModel::schwarzschild_lemaitre(1.0),
            MetricModel::warped_flrw(2.0 / 3.0, 0.05),
            MetricModel::perturbed_anisotropic(4, -1.0, 0.05),
        ];
        for m in models {
            let (x0, v0) = match m.kind() {
                MetricKind::SchwarzschildLemaitre => {
                    (vec![0.0, 2.0 / 3.0, 1.2, 0.3], vec![1.0, 1.0, 0.0, 0.0])
                }
                MetricKind::Warped => {
                    let t0: f64 = 1.0;
                    (
                        vec![t0, 0.0, 0.0, 0.0],
                        vec![1.0, 1.0 / t0.powf(2.0 / 3.0), 0.0, 0.0],
                    )
                }
                _ => (vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]),
            };
            let path =
                integrate_null_geodesic(&m, &x0, &v0, &RayOptions::window(0.0, 3.0)).unwrap();
            for (t, x, v) in path {
                let defect = m.inner(&x, &v, &v).abs();
                assert!(
                    defect < 1e-9,
                    "{:?}: defect {defect:e} at t = {t}",
                    m.kind()
                );
            }
        }
    }

    fn unit_sphere_data(theta: f64, phi: f64) -> (Vec<f64>, Vec<DVector<f64>>, Vec<f64>) {
        let d = [
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        ];
        let point = vec![1.0, d[0], d[1], d[2]];
        let l = vec![1.0, d[0], d[1], d[2]];
        let e_th = DVector::from_column_slice(&[
            0.0,
            theta.cos() * phi.cos(),
            theta.cos() * phi.sin(),
            -theta.sin(),
        ]);
        let e_ph = DVector::from_column_slice(&[0.0, -phi.sin(), phi.cos(), 0.0]);
        (point, vec![e_th, e_ph], l)
    }

    #[test]
    fn adapted_frame_on_minkowski_cone() {
        let m = MetricModel::minkowski(4);
        let (p, tangent, l) = unit_sphere_data(1.1, 0.7);
        let frame = build_adapted_frame(&m, &p, &tangent, &l).unwrap();
        assert!(frame.gram_block_violation() < 1e-12);
        // rescaling L -> 2L halves the transverse partner
        let l2: Vec<f64> = l.iter().map(|c| 2.0 * c).collect();
        let frame2 = build_adapted_frame(&m, &p, &tangent, &l2).unwrap();
        let expected = frame.transverse() / 2.0;
        assert!((frame2.transverse() - expected).amax() < 1e-12);
        assert!(frame2.gram_block_violation() < 1e-12);
    }

    #[test]
    fn adapted_frame_on_schwarzschild_horizon_section() {
        let m = MetricModel::schwarzschild_lemaitre(1.0);
        let mut rng = SplitMix64::new(3);
        for _ in 0..10 {
            let th = rng.uniform(0.5, 2.6);
            let ph = rng.uniform(0.0, 6.2);
            let p = vec![0.0, 2.0 / 3.0, th, ph];
            // random spacelike basis of the horizon 2-sphere
            let a = rng.uniform(0.2, 1.0);
            let b = rng.uniform(-1.0, 1.0);
            let c = rng.uniform(0.2, 1.0);
            let t1 = DVector::from_column_slice(&[0.0, 0.0, a, b]);
            let t2 = DVector::from_column_slice(&[0.0, 0.0, 0.0, c]);
            let l = vec![1.0, 1.0, 0.0, 0.0];
            let frame = build_adapted_frame(&m, &p, &[t1, t2], &l).unwrap();
            assert!(frame.gram_block_violation() < 1e-10);
            assert!(rigged_metric_check(&m, &frame) < 1e-10);
        }
    }

    #[test]
    fn degenerate_tangent_block_is_rejected() {
        let m = MetricModel::minkowski(4);
        let (p, _, l) = unit_sphere_data(1.0, 0.5);
        let t1 = DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0]);
        let t2 = DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            build_adapted_frame(&m, &p, &[t1, t2], &l),
            Err(Error::DegenerateSection { .. })
        ));
    }

    #[test]
    fn rigged_metric_check_flags_wrong_normalization() {
        let m = MetricModel::minkowski(4);
        let (p, tangent, l) = unit_sphere_data(1.3, 2.0);
        let mut frame = build_adapted_frame(&m, &p, &tangent, &l).unwrap();
        assert!(rigged_metric_check(&m, &frame) < 1e-12);
        // break the normalization: g(transverse, L) = -2
        let doubled = frame.vectors.row(3) * 2.0;
        frame.vectors.row_mut(3).copy_from(&doubled);
        assert!(rigged_metric_check(&m, &frame) > 0.5);
    }

    fn cone_ray_minkowski(theta: f64, phi: f64, window: (f64, f64)) -> GeneratorRay {
        let m = MetricModel::minkowski(4);
        let (p, tangent, l) = unit_sphere_data(theta, phi);
        let frame = build_adapted_frame(&m, &p, &tangent, &l).unwrap();
        // shape operator of the unit slice of the flat cone: identity on
        // the spacelike block
        let mut shape = DMatrix::zeros(4, 4);
        shape[(0, 0)] = 1.0;
        shape[(1, 1)] = 1.0;
        let init = RayInit::from_shape(0, frame, shape);
        propagate_ray(&m, init, &RayOptions::window(window.0, window.1), |_, _| {
            Ok(0.0)
        })
        .unwrap()
    }

    #[test]
    fn flat_cone_jacobi_is_linear() {
        // from the unit slice, det Jbar(s - 1) = s^2 exactly in flat space
        let ray = cone_ray_minkowski(1.0, 0.4, (-0.9, 9.0));
        for s in &ray.samples {
            let expected = (1.0 + s.t) * (1.0 + s.t);
            assert!(
                (s.area_factor - expected).abs() <= 1e-9 * expected.abs().max(1e-10),
                "t = {}: {} vs {}",
                s.t,
                s.area_factor,
                expected
            );
        }
        assert!(ray.diagnostics.row_identity < 1e-12);
        assert!(ray.diagnostics.column_identity < 1e-12);
        assert!(ray.diagnostics.gauss_invariant < 1e-12);
    }

    #[test]
    fn initial_sample_is_identity() {
        let ray = cone_ray_minkowski(0.9, 1.5, (0.0, 1.0));
        let s0 = &ray.samples[ray.base_index()];
        assert_eq!(s0.t, 0.0);
        assert!((s0.area_factor - 1.0).abs() < 1e-15);
        assert!(s0.log_area.abs() < 1e-15);
    }

    #[test]
    fn shape_operator_minor_is_symmetric() {
        let ray = cone_ray_minkowski(0.8, 2.3, (0.0, 0.5));
        // Ubar(0) = upper-left minor of J(0)^{-1} J'(0) = shape minor
        let sym = (ray.shape[(0, 1)] - ray.shape[(1, 0)]).abs();
        assert!(sym < 1e-10);
    }

    #[test]
    fn focal_point_detected_at_cone_tip() {
        // marching backwards from the unit slice, det Jbar = (1+t)^2 -> 0
        let m = MetricModel::minkowski(4);
        let (p, tangent, l) = unit_sphere_data(1.0, 0.4);
        let frame = build_adapted_frame(&m, &p, &tangent, &l).unwrap();
        let mut shape = DMatrix::zeros(4, 4);
        shape[(0, 0)] = 1.0;
        shape[(1, 1)] = 1.0;
        let init = RayInit::from_shape(0, frame, shape);
        let err = propagate_ray(
            &m,
            init.clone(),
            &RayOptions::window(-1.5, 0.5).with_focal_policy(FocalPolicy::Error),
            |_, _| Ok(0.0),
        )
        .unwrap_err();
        match err {
            Error::FocalPoint { t, .. } => assert!((t + 1.0).abs() < 1e-5, "crossing at {t}"),
            other => panic!("expected FocalPoint, got {other:?}"),
        }
        let ray = propagate_ray(&m, init, &RayOptions::window(-1.5, 0.5), |_, _| Ok(0.0)).unwrap();
        assert!(ray.focal_backward.is_some());
        assert!(ray.samples[0].t > -1.0);
    }

    #[test]
    fn schwarzschild_horizon_area_factor_constant() {
        let r_s = 1.0;
        let m = MetricModel::schwarzschild_lemaitre(r_s);
        let p = vec![0.0, 2.0 * r_s / 3.0, 1.2, 0.3];
        let l = vec![1.0, 1.0, 0.0, 0.0];
        let t1 = DVector::from_column_slice(&[0.0, 0.0, 1.0 / r_s, 0.0]);
        let t2 = DVector::from_column_slice(&[0.0, 0.0, 0.0, 1.0 / (r_s * 1.2f64.sin())]);
        let frame = build_adapted_frame(&m, &p, &[t1, t2], &l).unwrap();
        // horizon generators are shear- and expansion-free: shape = 0
        let shape = DMatrix::zeros(4, 4);
        let init = RayInit::from_shape(0, frame, shape);
        let ray = propagate_ray(&m, init, &RayOptions::window(0.0, 8.0), |_, _| Ok(0.0)).unwrap();
        for s in &ray.samples {
            assert!(
                (s.area_factor - 1.0).abs() < 1e-8,
                "det Jbar = {} at t = {}",
                s.area_factor,
                s.t
            );
        }
        assert!(ray.diagnostics.row_identity < 1e-8);
        assert!(ray.diagnostics.column_identity < 1e-8);
        assert!(ray.diagnostics.gauss_invariant < 1e-8);
        assert!(ray.diagnostics.det_structure < 1e-8);
    }

    #[test]
    fn taylor_probe_minkowski_is_zero() {
        let m = MetricModel::minkowski(4);
        let p = vec![0.0, 0.2, -0.1, 0.4];
        let v = vec![1.0, 0.6, 0.8, 0.0];
        let est = taylor_ricci_probe(&m, &p, &v, &TaylorProbeOptions::default()).unwrap();
        assert!(est.abs() < 1e-6, "estimate {est}");
    }

    #[test]
    fn taylor_probe_matches_ricci_on_flrw() {
        let m = MetricModel::warped_flrw(2.0 / 3.0, 0.05);
        let t0: f64 = 1.3;
        let a = t0.powf(2.0 / 3.0);
        let p = vec![t0, 0.1, 0.2, -0.3];
        let v = vec![1.0, 1.0 / a, 0.0, 0.0];
        let expected = m.ricci(&p, &v, &v).unwrap();
        let est = taylor_ricci_probe(&m, &p, &v, &TaylorProbeOptions::default()).unwrap();
        assert!(
            (est - expected).abs() < 1e-3 * expected.abs(),
            "estimate {est} vs {expected}"
        );
    }

    #[test]
    fn taylor_probe_detects_negative_ricci() {
        let m = MetricModel::perturbed_anisotropic(4, 1.0, 0.05);
        let p = vec![0.5, 0.1, 0.0, 0.0];
        let b = (1.0f64 + 0.05 * 0.25).sqrt();
        let alpha: f64 = 1.2;
        let v = vec![1.0, alpha.cos() / b, alpha.sin(), 0.0];
        let expected = m.ricci(&p, &v, &v).unwrap();
        assert!(expected < 0.0);
        let est = taylor_ricci_probe(&m, &p, &v, &TaylorProbeOptions::default()).unwrap();
        assert!(est < 0.0, "sign not detected: {est}");
        assert!((est - expected).abs() < 2e-3 * expected.abs());
    }
}
