//! Catalog of Lorentzian metric models with curvature evaluators.
//!
//! A [`MetricModel`] bundles a chart description, a metric evaluator and an
//! optional analytic Christoffel evaluator. Curvature is obtained from the
//! coordinate formula
//!
//! ```text
//! R^r_{s m n} = d_m G^r_{n s} - d_n G^r_{m s} + G^r_{m l} G^l_{n s} - G^r_{n l} G^l_{m s}
//! ```
//!
//! with the derivatives of the Christoffel symbols taken by 4th-order
//! central differences of the analytic symbols when available, and of the
//! finite-difference symbols otherwise. The curvature operator relevant to
//! Jacobi propagation is the tidal map `w -> R(v, w) v`, whose matrix
//! `A^r_n = R^r_{s m n} v^s v^m` satisfies `tr A = -Ric(v, v)`.

pub mod weight;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use weight::{BakryEmeryQuery, Smoothness, WeightExpr, WeightField};

/// Relative determinant floor below which the metric counts as singular.
const SINGULAR_DET_TOL: f64 = 1e-12;

pub type MetricFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type ChristoffelFn = dyn Fn(&[f64]) -> Rank3 + Send + Sync;
type ValidityFn = dyn Fn(&[f64]) -> bool + Send + Sync;

/// Rank-3 array storing Christoffel symbols; index order is `[k][i][j]` for
/// `G^k_{ij}`, symmetric in `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank3 {
    n: usize,
    data: Vec<f64>,
}

impl Rank3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.data[(k * self.n + i) * self.n + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Rank3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Contraction `P^k_i = G^k_{ij} v^j`.
    pub fn contract_right(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |k, i| (0..n).map(|j| self.get(k, i, j) * v[j]).sum())
    }
}

/// Coordinate chart: names, per-coordinate admissible ranges, an optional
/// joint validity predicate and a characteristic length used to size
/// finite-difference steps.
#[derive(Clone)]
pub struct Chart {
    pub names: Vec<String>,
    pub ranges: Vec<(f64, f64)>,
    pub scale: f64,
    validity: Option<Arc<ValidityFn>>,
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chart")
            .field("names", &self.names)
            .field("ranges", &self.ranges)
            .field("scale", &self.scale)
            .finish()
    }
}

impl Chart {
    pub fn new(names: &[&str], ranges: Vec<(f64, f64)>, scale: f64) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            ranges,
            scale,
            validity: None,
        }
    }

    pub fn with_validity(mut self, f: Arc<ValidityFn>) -> Self {
        self.validity = Some(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let in_ranges = x
            .iter()
            .zip(&self.ranges)
            .all(|(v, (lo, hi))| v.is_finite() && *lo <= *v && *v <= *hi);
        in_ranges && self.validity.as_ref().map_or(true, |f| f(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Minkowski,
    SchwarzschildLemaitre,
    ProductSurfaceM2,
    Warped,
    Perturbed,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetricKind::Minkowski => "minkowski",
            MetricKind::SchwarzschildLemaitre => "schwarzschild-lemaitre",
            MetricKind::ProductSurfaceM2 => "product-surface-m2",
            MetricKind::Warped => "warped",
            MetricKind::Perturbed => "perturbed",
        };
        f.write_str(s)
    }
}

/// A Lorentzian metric with signature (-, +, ..., +) on a coordinate chart.
#[derive(Clone)]
pub struct MetricModel {
    kind: MetricKind,
    dim: usize,
    chart: Chart,
    metric_fn: Arc<MetricFn>,
    christoffel_fn: Option<Arc<ChristoffelFn>>,
    /// Curvature identically zero; lets Jacobi propagation skip the tidal
    /// matrix entirely.
    flat: bool,
}

impl fmt::Debug for MetricModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricModel")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("chart", &self.chart)
            .field("flat", &self.flat)
            .finish()
    }
}

impl MetricModel {
    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    /// Finite-difference step for chart derivatives.
    pub fn fd_step(&self) -> f64 {
        self.chart.scale * 1e-3
    }

    pub fn check_chart(&self, x: &[f64]) -> Result<()> {
        if self.chart.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfChart {
                chart: self.kind.to_string(),
                point: x.to_vec(),
            })
        }
    }

    /// Metric matrix at a chart point.
    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_chart(x)?;
        Ok((self.metric_fn)(x))
    }

    /// Metric without the chart-range check; used by interior
    /// finite-difference stencils whose offsets may poke slightly past the
    /// declared (conservative) ranges.
    pub fn metric_raw(&self, x: &[f64]) -> DMatrix<f64> {
        (self.metric_fn)(x)
    }

    /// Inner product g(v, w) at x.
    pub fn inner(&self, x: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let g = self.metric_raw(x);
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += g[(i, j)] * v[i] * w[j];
            }
        }
        acc
    }

    /// Signature check by eigenvalue signs: exactly one negative direction.
    pub fn signature_ok(&self, x: &[f64]) -> bool {
        let g = self.metric_raw(x);
        let eig = g.symmetric_eigenvalues();
        let neg = eig.iter().filter(|&&l| l < 0.0).count();
        let zero = eig.iter().filter(|&&l| l.abs() < 1e-12).count();
        neg == 1 && zero == 0
    }

    /// Christoffel symbols, analytic when the model carries them.
    pub fn christoffel(&self, x: &[f64]) -> Result<Rank3> {
        self.check_chart(x)?;
        if let Some(f) = &self.christoffel_fn {
            Ok(f(x))
        } else {
            self.christoffel_fd_at(x)
        }
    }

    /// Christoffel symbols by 4th-order central differences of the metric,
    /// regardless of whether an analytic evaluator exists.
    pub fn christoffel_fd(&self, x: &[f64]) -> Result<Rank3> {
        self.check_chart(x)?;
        self.christoffel_fd_at(x)
    }

    fn christoffel_fd_at(&self, x: &[f64]) -> Result<Rank3> {
        let n = self.dim;
        let h = self.fd_step();
        let g = self.metric_raw(x);
        let det = g.determinant();
        let scale = g.amax().powi(n as i32);
        if det.abs() < SINGULAR_DET_TOL * scale.max(1e-300) {
            return Err(Error::SingularMetric {
                point: x.to_vec(),
                det,
            });
        }
        let g_inv = g.try_inverse().ok_or(Error::SingularMetric {
            point: x.to_vec(),
            det,
        })?;
        // dg[k] = d_k g
        let mut dg = Vec::with_capacity(n);
        for k in 0..n {
            let mut xp = x.to_vec();
            let f = |v: f64, xp: &mut Vec<f64>| {
                xp[k] = v;
                self.metric_raw(xp)
            };
            let x0 = x[k];
            let gp2 = f(x0 + 2.0 * h, &mut xp);
            let gp1 = f(x0 + h, &mut xp);
            let gm1 = f(x0 - h, &mut xp);
            let gm2 = f(x0 - 2.0 * h, &mut xp);
            dg.push((gp1 - gm1) * (8.0 / (12.0 * h)) - (gp2 - gm2) * (1.0 / (12.0 * h)));
        }
        let mut gam = Rank3::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += g_inv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    gam.set(k, i, j, 0.5 * s);
                    gam.set(k, j, i, 0.5 * s);
                }
            }
        }
        Ok(gam)
    }

    /// Christoffel symbols without the chart-range check; integrators call
    /// this on interior points they have already validated.
    pub(crate) fn christoffel_raw(&self, x: &[f64]) -> Rank3 {
        if let Some(f) = &self.christoffel_fn {
            f(x)
        } else {
            // Interior stencil point: skip the chart check but keep the
            // singularity guard via expect, ranges are declared conservatively.
            self.christoffel_fd_at(x)
                .expect("christoffel stencil point")
        }
    }

    /// Whether the chart Christoffel symbols vanish identically (inertial
    /// coordinates on a flat model); lets integrators take a linear fast path.
    pub fn coordinates_inertial(&self) -> bool {
        self.flat
            && matches!(
                self.kind,
                MetricKind::Minkowski | MetricKind::ProductSurfaceM2 | MetricKind::Perturbed
            )
    }

    /// Full Riemann tensor `R^r_{s m n}` as a flat array indexed
    /// `((r * n + s) * n + m) * n + nn`.
    pub fn riemann(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_chart(x)?;
        let n = self.dim;
        if self.flat {
            return Ok(vec![0.0; n * n * n * n]);
        }
        let gam = self.christoffel_raw(x);
        let dgam = self.christoffel_gradient(x);
        let mut r = vec![0.0; n * n * n * n];
        for rho in 0..n {
            for sig in 0..n {
                for mu in 0..n {
                    for nu in 0..n {
                        let mut val = dgam[mu].get(rho, nu, sig) - dgam[nu].get(rho, mu, sig);
                        for lam in 0..n {
                            val += gam.get(rho, mu, lam) * gam.get(lam, nu, sig)
                                - gam.get(rho, nu, lam) * gam.get(lam, mu, sig);
                        }
                        r[((rho * n + sig) * n + mu) * n + nu] = val;
                    }
                }
            }
        }
        Ok(r)
    }

    /// Gradient of the Christoffel symbols, `dgam[mu] = d_mu Gamma`.
    fn christoffel_gradient(&self, x: &[f64]) -> Vec<Rank3> {
        let n = self.dim;
        let h = self.fd_step();
        let mut out = Vec::with_capacity(n);
        for mu in 0..n {
            let mut xp = x.to_vec();
            let x0 = x[mu];
            let mut eval = |v: f64| {
                xp[mu] = v;
                self.christoffel_raw(&xp)
            };
            let p2 = eval(x0 + 2.0 * h);
            let p1 = eval(x0 + h);
            let m1 = eval(x0 - h);
            let m2 = eval(x0 - 2.0 * h);
            let mut d = Rank3::zeros(n);
            for idx in 0..d.data.len() {
                d.data[idx] = (8.0 * (p1.data[idx] - m1.data[idx]) - (p2.data[idx] - m2.data[idx]))
                    / (12.0 * h);
            }
            out.push(d);
        }
        out
    }

    /// Ricci tensor `Ric_{s n} = R^m_{s m n}`.
    pub fn ricci_tensor(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim;
        if self.flat {
            self.check_chart(x)?;
            return Ok(DMatrix::zeros(n, n));
        }
        let r = self.riemann(x)?;
        Ok(DMatrix::from_fn(n, n, |sig, nu| {
            (0..n).map(|m| r[((m * n + sig) * n + m) * n + nu]).sum()
        }))
    }

    /// Ricci curvature contracted on two vectors.
    pub fn ricci(&self, x: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
        let ric = self.ricci_tensor(x)?;
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += ric[(i, j)] * v[i] * w[j];
            }
        }
        Ok(acc)
    }

    /// Tidal operator of the geodesic deviation equation: the matrix
    /// `A^r_n = R^r_{s m n} v^s v^m`, so that a Jacobi field along the
    /// geodesic with velocity `v` satisfies `J'' = A J` in a parallel frame.
    /// Satisfies `tr A = -Ric(v, v)`.
    pub fn tidal(&self, x: &[f64], v: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        if self.flat {
            return DMatrix::zeros(n, n);
        }
        let gam = self.christoffel_raw(x);
        let dgam = self.christoffel_gradient(x);
        // P^r_n = G^r_{n s} v^s ; q = P v
        let p = gam.contract_right(v);
        let vv = DVector::from_column_slice(v);
        let q = &p * &vv;
        let mut a = DMatrix::zeros(n, n);
        for rho in 0..n {
            for nu in 0..n {
                let mut t1 = 0.0; // v^m d_m G^r_{n s} v^s
                let mut t2 = 0.0; // d_n G^r_{m s} v^m v^s
                for mu in 0..n {
                    for sig in 0..n {
                        t1 += v[mu] * dgam[mu].get(rho, nu, sig) * v[sig];
                        t2 += dgam[nu].get(rho, mu, sig) * v[mu] * v[sig];
                    }
                }
                let mut t3 = 0.0;
                for lam in 0..n {
                    t3 += p[(rho, lam)] * p[(lam, nu)] - gam.get(rho, nu, lam) * q[lam];
                }
                a[(rho, nu)] = t1 - t2 + t3;
            }
        }
        a
    }

    // ------------------------------------------------------------------
    // Catalog constructors
    // ------------------------------------------------------------------

    /// Flat Minkowski space of dimension `n >= 3` in inertial coordinates.
    pub fn minkowski(n: usize) -> Self {
        assert!(n >= 3, "dimension must be at least 3");
        let names: Vec<&str> = ["t", "x", "y", "z", "w", "q"][..n].to_vec();
        let chart = Chart::new(&names, vec![(-1e6, 1e6); n], 1.0);
        let metric_fn = Arc::new(move |_x: &[f64]| {
            let mut g = DMatrix::identity(n, n);
            g[(0, 0)] = -1.0;
            g
        });
        let christoffel_fn: Arc<ChristoffelFn> = Arc::new(move |_x: &[f64]| Rank3::zeros(n));
        Self {
            kind: MetricKind::Minkowski,
            dim: n,
            chart,
            metric_fn,
            christoffel_fn: Some(christoffel_fn),
            flat: true,
        }
    }

    /// Schwarzschild space-time in Lemaitre coordinates `(tau, rho, theta, phi)`:
    ///
    /// ```text
    /// ds^2 = -dtau^2 + (r_s/r) drho^2 + r^2 (dtheta^2 + sin^2 theta dphi^2),
    /// r = [3/2 (rho - tau)]^(2/3) r_s^(1/3).
    /// ```
    ///
    /// The chart is horizon-regular; the event horizon sits at
    /// `3/2 (rho - tau) = r_s`. The central singularity `r = 0` and the polar
    /// axis are excluded by the declared ranges.
    pub fn schwarzschild_lemaitre(r_s: f64) -> Self {
        assert!(r_s > 0.0, "Schwarzschild radius must be positive");
        let names = ["tau", "rho", "theta", "phi"];
        let pole_eps = 1e-4;
        let r_floor = 0.05 * r_s;
        let chart = Chart::new(
            &names,
            vec![
                (-1e6, 1e6),
                (-1e6, 1e6),
                (pole_eps, std::f64::consts::PI - pole_eps),
                (-1e6, 1e6),
            ],
            r_s,
        )
        .with_validity(Arc::new(move |x: &[f64]| {
            let r = lemaitre_r(r_s, x[0], x[1]);
            r > r_floor
        }));
        let metric_fn = Arc::new(move |x: &[f64]| {
            let r = lemaitre_r(r_s, x[0], x[1]);
            let mut g = DMatrix::zeros(4, 4);
            g[(0, 0)] = -1.0;
            g[(1, 1)] = r_s / r;
            g[(2, 2)] = r * r;
            g[(3, 3)] = r * r * x[2].sin().powi(2);
            g
        });
        let christoffel_fn: Arc<ChristoffelFn> = Arc::new(move |x: &[f64]| {
            let r = lemaitre_r(r_s, x[0], x[1]);
            let beta = (r_s / r).sqrt();
            let (st, ct) = x[2].sin_cos();
            let mut g = Rank3::zeros(4);
            g.set(0, 1, 1, beta.powi(3) / (2.0 * r));
            g.set(0, 2, 2, -r * beta);
            g.set(0, 3, 3, -r * beta * st * st);
            let b2r = beta / (2.0 * r);
            g.set(1, 0, 1, b2r);
            g.set(1, 1, 0, b2r);
            g.set(1, 1, 1, -b2r);
            g.set(1, 2, 2, -r / beta);
            g.set(1, 3, 3, -(r / beta) * st * st);
            let br = beta / r;
            g.set(2, 0, 2, -br);
            g.set(2, 2, 0, -br);
            g.set(2, 1, 2, br);
            g.set(2, 2, 1, br);
            g.set(2, 3, 3, -st * ct);
            g.set(3, 0, 3, -br);
            g.set(3, 3, 0, -br);
            g.set(3, 1, 3, br);
            g.set(3, 3, 1, br);
            g.set(3, 2, 3, ct / st);
            g.set(3, 3, 2, ct / st);
            g
        });
        Self {
            kind: MetricKind::SchwarzschildLemaitre,
            dim: 4,
            chart,
            metric_fn,
            christoffel_fn: Some(christoffel_fn),
            flat: false,
        }
    }

    /// Product `Sigma^2 x M^2` with coordinates `(t, x, u, v)`:
    /// 2-d Minkowski in `(t, x)` times a surface with conformally flat
    /// metric `e^(2 psi) (du^2 + dv^2)`, `psi = c sin(u) sin(v)`. `c = 0`
    /// gives a flat product.
    pub fn product_surface_m2(curvature: f64) -> Self {
        let names = ["t", "x", "u", "v"];
        let chart = Chart::new(&names, vec![(-1e6, 1e6); 4], 1.0);
        let c = curvature;
        let metric_fn = Arc::new(move |x: &[f64]| {
            let psi = c * x[2].sin() * x[3].sin();
            let e2 = (2.0 * psi).exp();
            let mut g = DMatrix::zeros(4, 4);
            g[(0, 0)] = -1.0;
            g[(1, 1)] = 1.0;
            g[(2, 2)] = e2;
            g[(3, 3)] = e2;
            g
        });
        let christoffel_fn: Arc<ChristoffelFn> = Arc::new(move |x: &[f64]| {
            let psi_u = c * x[2].cos() * x[3].sin();
            let psi_v = c * x[2].sin() * x[3].cos();
            let mut g = Rank3::zeros(4);
            g.set(2, 2, 2, psi_u);
            g.set(2, 2, 3, psi_v);
            g.set(2, 3, 2, psi_v);
            g.set(2, 3, 3, -psi_u);
            g.set(3, 3, 3, psi_v);
            g.set(3, 2, 3, psi_u);
            g.set(3, 3, 2, psi_u);
            g.set(3, 2, 2, -psi_v);
            g
        });
        Self {
            kind: MetricKind::ProductSurfaceM2,
            dim: 4,
            chart,
            metric_fn,
            christoffel_fn: Some(christoffel_fn),
            flat: curvature == 0.0,
        }
    }

    /// Spatially flat warped (FLRW-type) metric
    /// `ds^2 = -dt^2 + t^(2p) (dx^2 + dy^2 + dz^2)` on `t > t_min`.
    /// Null Ricci along radial null directions is `2 p / t^2`, nonnegative
    /// for `p >= 0`.
    pub fn warped_flrw(p: f64, t_min: f64) -> Self {
        assert!(t_min > 0.0);
        let names = ["t", "x", "y", "z"];
        let chart = Chart::new(
            &names,
            vec![(t_min, 1e6), (-1e6, 1e6), (-1e6, 1e6), (-1e6, 1e6)],
            1.0,
        );
        let metric_fn = Arc::new(move |x: &[f64]| {
            let a2 = x[0].powf(2.0 * p);
            let mut g = DMatrix::zeros(4, 4);
            g[(0, 0)] = -1.0;
            for i in 1..4 {
                g[(i, i)] = a2;
            }
            g
        });
        let christoffel_fn: Arc<ChristoffelFn> = Arc::new(move |x: &[f64]| {
            let t = x[0];
            let a = t.powf(p);
            let adot = p * t.powf(p - 1.0);
            let mut g = Rank3::zeros(4);
            for i in 1..4 {
                g.set(0, i, i, a * adot);
                g.set(i, 0, i, adot / a);
                g.set(i, i, 0, adot / a);
            }
            g
        });
        Self {
            kind: MetricKind::Warped,
            dim: 4,
            chart,
            metric_fn,
            christoffel_fn: Some(christoffel_fn),
            flat: p == 0.0,
        }
    }

    /// Perturbed Minkowski `g = eta + epsilon h` with
    /// `h = sigma t^2 dx (x) dx`, i.e. `g_xx = 1 + sigma epsilon t^2`.
    /// For `sigma < 0` the null Ricci is positive (NEC holds near t = 0);
    /// for `sigma > 0` it is negative and the NEC fails.
    pub fn perturbed_anisotropic(n: usize, sigma: f64, epsilon: f64) -> Self {
        assert!(n >= 3);
        let names: Vec<&str> = ["t", "x", "y", "z", "w", "q"][..n].to_vec();
        // keep g_xx positive on the declared range
        let t_max = if sigma * epsilon < 0.0 {
            (0.9 / (sigma * epsilon).abs()).sqrt()
        } else {
            1e3
        };
        let chart = Chart::new(
            &names,
            {
                let mut r = vec![(-1e6, 1e6); n];
                r[0] = (-t_max, t_max);
                r
            },
            1.0,
        );
        let se = sigma * epsilon;
        let metric_fn = Arc::new(move |x: &[f64]| {
            let mut g = DMatrix::identity(n, n);
            g[(0, 0)] = -1.0;
            g[(1, 1)] = 1.0 + se * x[0] * x[0];
            g
        });
        let christoffel_fn: Arc<ChristoffelFn> = Arc::new(move |x: &[f64]| {
            let t = x[0];
            let mut g = Rank3::zeros(n);
            g.set(0, 1, 1, se * t);
            let v = se * t / (1.0 + se * t * t);
            g.set(1, 0, 1, v);
            g.set(1, 1, 0, v);
            g
        });
        Self {
            kind: MetricKind::Perturbed,
            dim: n,
            chart,
            metric_fn,
            christoffel_fn: Some(christoffel_fn),
            flat: epsilon == 0.0 || sigma == 0.0,
        }
    }

    /// Generic perturbation `g = g_base + epsilon h` with a user-supplied
    /// smooth symmetric field `h`. Christoffel symbols fall back to finite
    /// differences of the perturbed metric.
    pub fn perturbed(base: &MetricModel, h: Arc<MetricFn>, epsilon: f64) -> Self {
        let base_fn = base.metric_fn.clone();
        let metric_fn: Arc<MetricFn> = Arc::new(move |x: &[f64]| {
            let mut g = base_fn(x);
            g += h(x) * epsilon;
            g
        });
        Self {
            kind: MetricKind::Perturbed,
            dim: base.dim,
            chart: base.chart.clone(),
            metric_fn,
            christoffel_fn: None,
            flat: base.flat && epsilon == 0.0,
        }
    }
}

fn lemaitre_r(r_s: f64, tau: f64, rho: f64) -> f64 {
    (1.5 * (rho - tau)).powf(2.0 / 3.0) * r_s.powf(1.0 / 3.0)
}

/// Build a catalog metric by name and parameter map (the CLI entry point).
pub fn build_metric(name: &str, params: &BTreeMap<String, f64>) -> Result<MetricModel> {
    let get = |key: &str| -> Result<f64> {
        params
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingParameter {
                name: key.to_string(),
            })
    };
    let get_or = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
    match name {
        "minkowski" => {
            let n = get_or("n", 4.0) as usize;
            if n < 3 {
                return Err(Error::InvalidConfig("minkowski requires n >= 3".into()));
            }
            Ok(MetricModel::minkowski(n))
        }
        "schwarzschild-lemaitre" => {
            let r_s = get("r_s")?;
            if r_s <= 0.0 {
                return Err(Error::InvalidConfig("r_s must be positive".into()));
            }
            Ok(MetricModel::schwarzschild_lemaitre(r_s))
        }
        "product-surface-m2" => Ok(MetricModel::product_surface_m2(get_or("curvature", 0.0))),
        "warped" => Ok(MetricModel::warped_flrw(
            get_or("p", 2.0 / 3.0),
            get_or("t_min", 0.05),
        )),
        "perturbed" => Ok(MetricModel::perturbed_anisotropic(
            get_or("n", 4.0) as usize,
            get_or("sigma", 1.0),
            get_or("epsilon", 0.0),
        )),
        other => Err(Error::UnknownMetric {
            name: other.to_string(),
            catalog: "minkowski, schwarzschild-lemaitre, product-surface-m2, warped, perturbed"
                .to_string(),
        }),
    }
}
