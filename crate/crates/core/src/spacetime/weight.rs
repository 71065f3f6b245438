//! Scalar weight fields on null hypersurfaces and the generalized N-Ricci
//! (Bakry–Emery) tensor.
//!
//! Weights are specified in a small arithmetic expression language over the
//! chart coordinate names plus the generator coordinate `s` (the affine
//! radius for cone scenarios, the window parameter otherwise). Weights that
//! only reference chart coordinates are genuine space-time functions and
//! admit finite-difference gradients and Hessians; weights referencing `s`
//! are only evaluated fiberwise and are rejected by the tensor evaluators.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spacetime::MetricModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothness {
    C0,
    C2,
}

/// Parsed weight expression tree.
#[derive(Debug, Clone)]
pub enum WeightExpr {
    Number(f64),
    Var(String),
    Neg(Box<WeightExpr>),
    Add(Box<WeightExpr>, Box<WeightExpr>),
    Sub(Box<WeightExpr>, Box<WeightExpr>),
    Mul(Box<WeightExpr>, Box<WeightExpr>),
    Div(Box<WeightExpr>, Box<WeightExpr>),
    Pow(Box<WeightExpr>, Box<WeightExpr>),
    Call(String, Box<WeightExpr>),
}

impl WeightExpr {
    pub fn parse(src: &str) -> Result<Self> {
        Parser::new(src).parse_full()
    }

    pub fn eval<F>(&self, lookup: &F) -> Result<f64>
    where
        F: Fn(&str) -> Option<f64>,
    {
        Ok(match self {
            WeightExpr::Number(v) => *v,
            WeightExpr::Var(name) => match name.as_str() {
                "pi" => std::f64::consts::PI,
                "e" => std::f64::consts::E,
                _ => lookup(name).ok_or_else(|| Error::UnboundVariable {
                    name: name.clone(),
                    context: "weight evaluation".to_string(),
                })?,
            },
            WeightExpr::Neg(a) => -a.eval(lookup)?,
            WeightExpr::Add(a, b) => a.eval(lookup)? + b.eval(lookup)?,
            WeightExpr::Sub(a, b) => a.eval(lookup)? - b.eval(lookup)?,
            WeightExpr::Mul(a, b) => a.eval(lookup)? * b.eval(lookup)?,
            WeightExpr::Div(a, b) => a.eval(lookup)? / b.eval(lookup)?,
            WeightExpr::Pow(a, b) => a.eval(lookup)?.powf(b.eval(lookup)?),
            WeightExpr::Call(f, a) => {
                let v = a.eval(lookup)?;
                match f.as_str() {
                    "log" => v.ln(),
                    "exp" => v.exp(),
                    "sin" => v.sin(),
                    "cos" => v.cos(),
                    "tanh" => v.tanh(),
                    "sqrt" => v.sqrt(),
                    "abs" => v.abs(),
                    other => {
                        return Err(Error::ExprParse {
                            at: 0,
                            message: format!("unknown function `{other}`"),
                        })
                    }
                }
            }
        })
    }

    fn variables(&self, out: &mut BTreeSet<String>) {
        match self {
            WeightExpr::Number(_) => {}
            WeightExpr::Var(name) => {
                if name != "pi" && name != "e" {
                    out.insert(name.clone());
                }
            }
            WeightExpr::Neg(a) | WeightExpr::Call(_, a) => a.variables(out),
            WeightExpr::Add(a, b)
            | WeightExpr::Sub(a, b)
            | WeightExpr::Mul(a, b)
            | WeightExpr::Div(a, b)
            | WeightExpr::Pow(a, b) => {
                a.variables(out);
                b.variables(out);
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn parse_full(&mut self) -> Result<WeightExpr> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.error("trailing input"));
        }
        Ok(e)
    }

    fn error(&self, message: &str) -> Error {
        Error::ExprParse {
            at: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<WeightExpr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = WeightExpr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = WeightExpr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<WeightExpr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = WeightExpr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = WeightExpr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<WeightExpr> {
        let base = self.unary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // right-associative
            let exp = self.factor()?;
            return Ok(WeightExpr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<WeightExpr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(WeightExpr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<WeightExpr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let name = self.ident();
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(b')') {
                        return Err(self.error("expected `)` after function argument"));
                    }
                    self.pos += 1;
                    Ok(WeightExpr::Call(name, Box::new(arg)))
                } else {
                    Ok(WeightExpr::Var(name))
                }
            }
            _ => Err(self.error("expected a number, variable or `(`")),
        }
    }

    fn number(&mut self) -> Result<WeightExpr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .src
                    .get(self.pos + 1)
                    .is_some_and(|&d| d.is_ascii_digit() || d == b'+' || d == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .map(WeightExpr::Number)
            .ok_or_else(|| self.error("malformed number"))
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }
}

/// A scalar weight on a null hypersurface.
#[derive(Debug, Clone)]
pub struct WeightField {
    expr: Option<Arc<WeightExpr>>,
    smoothness: Smoothness,
}

impl WeightField {
    pub fn zero() -> Self {
        Self {
            expr: None,
            smoothness: Smoothness::C2,
        }
    }

    pub fn from_expr(src: &str, smoothness: Smoothness) -> Result<Self> {
        if src.trim() == "zero" || src.trim() == "0" {
            return Ok(Self::zero());
        }
        Ok(Self {
            expr: Some(Arc::new(WeightExpr::parse(src)?)),
            smoothness,
        })
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn is_zero(&self) -> bool {
        self.expr.is_none()
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Some(e) = &self.expr {
            e.variables(&mut out);
        }
        out
    }

    pub fn is_constant(&self) -> bool {
        self.variables().is_empty()
    }

    /// Whether the expression references the generator coordinate `s`, in
    /// which case it is not a chart function.
    pub fn references_ray_param(&self) -> bool {
        self.variables().contains("s")
    }

    /// Evaluate at a chart point, with the generator coordinate available
    /// as `s` when supplied.
    pub fn eval(&self, names: &[String], coords: &[f64], ray_s: Option<f64>) -> Result<f64> {
        let Some(expr) = &self.expr else {
            return Ok(0.0);
        };
        expr.eval(&|name: &str| {
            if name == "s" {
                return ray_s;
            }
            names.iter().position(|n| n == name).map(|i| coords[i])
        })
    }

    /// Chart gradient `d_i Phi` by 4th-order central differences.
    pub fn gradient(&self, model: &MetricModel, x: &[f64]) -> Result<Vec<f64>> {
        self.require_chart_c2("gradient")?;
        let n = model.dim();
        let names = &model.chart().names;
        let h = model.fd_step();
        let mut out = vec![0.0; n];
        let mut xp = x.to_vec();
        for k in 0..n {
            let x0 = x[k];
            let mut f = |v: f64| -> Result<f64> {
                xp[k] = v;
                self.eval(names, &xp, None)
            };
            let d = (8.0 * (f(x0 + h)? - f(x0 - h)?) - (f(x0 + 2.0 * h)? - f(x0 - 2.0 * h)?))
                / (12.0 * h);
            xp[k] = x0;
            out[k] = d;
        }
        Ok(out)
    }

    /// Covariant Hessian `Hess_{ij} = d_i d_j Phi - G^k_{ij} d_k Phi`.
    pub fn hessian(&self, model: &MetricModel, x: &[f64]) -> Result<nalgebra::DMatrix<f64>> {
        self.require_chart_c2("hessian")?;
        let n = model.dim();
        let names = &model.chart().names;
        let h = model.fd_step();
        let grad = self.gradient(model, x)?;
        let gam = model.christoffel(x)?;
        let mut hess = nalgebra::DMatrix::zeros(n, n);
        let f0 = self.eval(names, x, None)?;
        for i in 0..n {
            // pure second derivative, 4th order
            let mut xp = x.to_vec();
            let f = |v: f64, xp: &mut Vec<f64>| -> Result<f64> {
                xp[i] = v;
                self.eval(names, xp, None)
            };
            let x0 = x[i];
            let dii = (-f(x0 + 2.0 * h, &mut xp)? + 16.0 * f(x0 + h, &mut xp)? - 30.0 * f0
                + 16.0 * f(x0 - h, &mut xp)?
                - f(x0 - 2.0 * h, &mut xp)?)
                / (12.0 * h * h);
            hess[(i, i)] = dii;
            for j in (i + 1)..n {
                // mixed derivative by nested 2nd-order stencils at step 2h
                // (adequate: the pure parts carry the error budget)
                let hh = h;
                let mut xq = x.to_vec();
                let f2 = |a: f64, b: f64, xq: &mut Vec<f64>| -> Result<f64> {
                    xq[i] = x[i] + a;
                    xq[j] = x[j] + b;
                    self.eval(names, xq, None)
                };
                let dij = (f2(hh, hh, &mut xq)? - f2(hh, -hh, &mut xq)? - f2(-hh, hh, &mut xq)?
                    + f2(-hh, -hh, &mut xq)?)
                    / (4.0 * hh * hh);
                hess[(i, j)] = dij;
                hess[(j, i)] = dij;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut corr = 0.0;
                for k in 0..n {
                    corr += gam.get(k, i, j) * grad[k];
                }
                hess[(i, j)] -= corr;
            }
        }
        Ok(hess)
    }

    fn require_chart_c2(&self, context: &str) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        if self.smoothness != Smoothness::C2 {
            return Err(Error::WeightNotSmooth {
                context: context.to_string(),
            });
        }
        if self.references_ray_param() {
            return Err(Error::UnboundVariable {
                name: "s".to_string(),
                context: format!("{context}: weight is not a chart function"),
            });
        }
        Ok(())
    }
}

/// Query for the generalized N-Ricci tensor at a point and direction.
#[derive(Debug, Clone)]
pub struct BakryEmeryQuery {
    pub n_eff: f64,
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
}

/// Generalized N-Ricci tensor contracted on `v`:
///
/// ```text
/// Ric(v,v) - Hess Phi(v,v) - <dPhi, v>^2 / (N - n)      if N > n,
/// Ric(v,v)                                              if N = n, dPhi = 0.
/// ```
pub fn bakry_emery_ricci(
    model: &MetricModel,
    weight: &WeightField,
    query: &BakryEmeryQuery,
) -> Result<f64> {
    let n = model.dim() as f64;
    let n_eff = query.n_eff;
    if n_eff < n {
        return Err(Error::InvalidN {
            n_eff,
            reason: format!("must be at least the manifold dimension n = {n}"),
        });
    }
    let ric = model.ricci(&query.point, &query.direction, &query.direction)?;
    if (n_eff - n).abs() < 1e-14 {
        if !weight.is_constant() {
            return Err(Error::InvalidN {
                n_eff,
                reason: "N = n requires a constant weight".to_string(),
            });
        }
        return Ok(ric);
    }
    if weight.is_constant() {
        return Ok(ric);
    }
    if weight.smoothness() != Smoothness::C2 {
        return Err(Error::WeightNotSmooth {
            context: "bakry_emery_ricci".to_string(),
        });
    }
    let grad = weight.gradient(model, &query.point)?;
    let hess = weight.hessian(model, &query.point)?;
    let v = &query.direction;
    let dim = model.dim();
    let mut hvv = 0.0;
    let mut dv = 0.0;
    for i in 0..dim {
        dv += grad[i] * v[i];
        for j in 0..dim {
            hvv += hess[(i, j)] * v[i] * v[j];
        }
    }
    Ok(ric - hvv - dv * dv / (n_eff - n))
}
