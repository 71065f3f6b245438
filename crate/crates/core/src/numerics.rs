//! Small numerical utilities shared across the crate: a deterministic RNG,
//! Gauss–Legendre quadrature, finite-difference stencils, Hermite
//! interpolation and tiny least-squares fits.

use nalgebra::{DMatrix, DVector};

/// Deterministic 64-bit generator (SplitMix64). Used everywhere randomness
/// is needed so that runs are reproducible from a single `u64` seed across
/// platforms and crate versions.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn uniform_usize(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Derive an independent stream, e.g. one per generator.
    pub fn fork(&mut self, tag: u64) -> SplitMix64 {
        SplitMix64::new(self.next_u64() ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial. Accurate to machine precision for m <= 64.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Map Gauss–Legendre quadrature onto [a, b].
pub fn gauss_legendre_on(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(m);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

/// 4th-order central difference of a vector-valued function.
pub fn central_diff4<F>(f: F, x: f64, h: f64) -> Vec<f64>
where
    F: Fn(f64) -> Vec<f64>,
{
    let fp2 = f(x + 2.0 * h);
    let fp1 = f(x + h);
    let fm1 = f(x - h);
    let fm2 = f(x - 2.0 * h);
    fp1.iter()
        .zip(fm1.iter())
        .zip(fp2.iter().zip(fm2.iter()))
        .map(|((p1, m1), (p2, m2))| (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
        .collect()
}

/// Cubic Hermite interpolation of (value, derivative) data on [t0, t1].
pub fn hermite(t0: f64, y0: f64, d0: f64, t1: f64, y1: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

/// Least-squares fit of `y ~ sum_k c_k * basis_k(x)`; returns coefficients
/// and the root-mean-square residual.
pub fn least_squares_fit(xs: &[f64], ys: &[f64], basis: &[&dyn Fn(f64) -> f64]) -> (Vec<f64>, f64) {
    let m = xs.len();
    let k = basis.len();
    let mut a = DMatrix::zeros(m, k);
    for (i, &x) in xs.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            a[(i, j)] = b(x);
        }
    }
    let y = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let c = svd.solve(&y, 1e-14).expect("svd solve");
    let residual = (&a * &c - &y).norm() / (m as f64).sqrt();
    (c.as_slice().to_vec(), residual)
}

/// Area of the unit round k-sphere, 2 pi^((k+1)/2) / Gamma((k+1)/2).
pub fn unit_sphere_area(k: usize) -> f64 {
    let half = (k as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / gamma_fn(half)
}

/// Lanczos approximation of the Gamma function, good to ~1e-13 for the
/// half-integer arguments used here.
fn gamma_fn(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = G[0];
        for (i, g) in G.iter().enumerate().skip(1) {
            acc += g / (x + i as f64);
        }
        let t = x + 7.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

/// First index `i` with `grid[i] <= t <= grid[i+1]`; grid must be increasing.
pub fn bracket(grid: &[f64], t: f64) -> Option<usize> {
    if grid.len() < 2 || t < grid[0] || t > *grid.last().unwrap() {
        return None;
    }
    let mut lo = 0usize;
    let mut hi = grid.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if grid[mid] <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}
