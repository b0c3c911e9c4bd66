//! Cylindrical test functions `f(x) = c + Σ_i w_i φ_i(⟨x, e_{k_i}⟩)`.
//!
//! Each scalar profile `φ` knows its Gaussian smoothing
//! `Φ(μ, v) = E φ(μ + √v Z)` and `∂_μ Φ`, which the estimators use to
//! integrate the last time step analytically.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Result, SpdeError};
use crate::quad::composite_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `cos(a z + b)`.
    Cos { a: f64, b: f64 },
    /// `tanh(a z)`.
    Tanh { a: f64 },
    /// `sign(z)`: bounded, discontinuous at 0.
    Step,
    /// `clamp(z, -a, a)`: bounded and Lipschitz.
    Clamp { a: f64 },
    /// `o(z) - (o(z-1) + o(z+1))/2` with `o(z) = sign(z)|z|^α`: bounded and
    /// exactly `α`-Hölder at the origin.
    Cusp { alpha: f64 },
}

/// Regularity class of a test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestKind {
    Smooth,
    Lipschitz,
    Holder { alpha: f64 },
    Rough,
}

fn sign(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn opow(z: f64, alpha: f64) -> f64 {
    sign(z) * z.abs().powf(alpha)
}

fn npdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn ncdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

impl Profile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Cos { a, b } => a.is_finite() && b.is_finite(),
            Profile::Tanh { a } => a.is_finite(),
            Profile::Step => true,
            Profile::Clamp { a } => a > 0.0 && a.is_finite(),
            Profile::Cusp { alpha } => alpha > 0.0 && alpha < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SpdeError::InvalidConfig(format!("invalid profile {self:?}")))
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Profile::Cos { a, b } => (a * z + b).cos(),
            Profile::Tanh { a } => (a * z).tanh(),
            Profile::Step => sign(z),
            Profile::Clamp { a } => z.clamp(-a, a),
            Profile::Cusp { alpha } => opow(z, alpha) - 0.5 * (opow(z - 1.0, alpha) + opow(z + 1.0, alpha)),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match *self {
            Profile::Cos { .. } | Profile::Tanh { .. } | Profile::Step => 1.0,
            Profile::Clamp { a } => a,
            // odd, and decays like |z|^{α-2}: the max sits in [0, 2]
            Profile::Cusp { .. } => (0..=20_000).map(|i| self.eval(i as f64 * 1e-4).abs()).fold(0.0, f64::max),
        }
    }

    pub fn kind(&self) -> TestKind {
        match *self {
            Profile::Cos { .. } | Profile::Tanh { .. } => TestKind::Smooth,
            Profile::Clamp { .. } => TestKind::Lipschitz,
            Profile::Cusp { alpha } => TestKind::Holder { alpha },
            Profile::Step => TestKind::Rough,
        }
    }

    /// Upper bound on `[φ]_α`, with `α = 1` for Lipschitz profiles.
    pub fn holder_constant(&self) -> Option<(f64, f64)> {
        match *self {
            Profile::Cos { a, .. } | Profile::Tanh { a } => Some((1.0, a.abs())),
            Profile::Clamp { .. } => Some((1.0, 1.0)),
            Profile::Cusp { alpha } => Some((alpha, 2.0 * 2f64.powf(1.0 - alpha))),
            Profile::Step => None,
        }
    }
}

/// Precomputed smoothing data for one profile.
#[derive(Debug, Clone)]
pub enum CompiledProfile {
    Closed(Profile),
    /// Weighted nodes for `E g(Z)`.
    Quadrature { a: f64, nodes: Arc<(Vec<f64>, Vec<f64>)> },
    Cusp { alpha: f64, table: Arc<CuspTable> },
}

impl CompiledProfile {
    pub fn new(p: &Profile) -> Self {
        match *p {
            Profile::Tanh { a } => {
                // tanh has poles near the real axis, so a composite rule on
                // [-10, 10] converges where Gauss–Hermite does not
                static RULE: OnceLock<Arc<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
                let nodes = RULE
                    .get_or_init(|| {
                        let (x, w) = composite_legendre(-10.0, 10.0, 80, 8);
                        let w = x.iter().zip(w).map(|(&x, w)| w * npdf(x)).collect();
                        Arc::new((x, w))
                    })
                    .clone();
                CompiledProfile::Quadrature { a, nodes }
            }
            Profile::Cusp { alpha } => CompiledProfile::Cusp { alpha, table: cusp_table(alpha) },
            _ => CompiledProfile::Closed(*p),
        }
    }

    pub fn profile(&self) -> Profile {
        match self {
            CompiledProfile::Closed(p) => *p,
            CompiledProfile::Quadrature { a, .. } => Profile::Tanh { a: *a },
            CompiledProfile::Cusp { alpha, .. } => Profile::Cusp { alpha: *alpha },
        }
    }

    /// `(E φ(μ + √v Z), ∂_μ E φ(μ + √v Z))`.
    pub fn smooth(&self, mu: f64, v: f64) -> (f64, f64) {
        let s = v.max(0.0).sqrt();
        if s == 0.0 {
            let p = self.profile();
            let h = 1e-7;
            return (p.eval(mu), (p.eval(mu + h) - p.eval(mu - h)) / (2.0 * h));
        }
        match self {
            CompiledProfile::Closed(Profile::Cos { a, b }) => {
                let damp = (-0.5 * a * a * v).exp();
                (damp * (a * mu + b).cos(), -a * damp * (a * mu + b).sin())
            }
            CompiledProfile::Closed(Profile::Step) => {
                let m = mu / s;
                (erf(m / SQRT_2), 2.0 * npdf(m) / s)
            }
            CompiledProfile::Closed(Profile::Clamp { a }) => {
                let lo = (-a - mu) / s;
                let hi = (a - mu) / s;
                let (cl, ch) = (ncdf(lo), ncdf(hi));
                let val = -a * cl + a * (1.0 - ch) + mu * (ch - cl) + s * (npdf(lo) - npdf(hi));
                (val, ch - cl)
            }
            CompiledProfile::Quadrature { a, nodes } => {
                let (x, w) = &**nodes;
                let mut val = 0.0;
                let mut der = 0.0;
                for (xi, wi) in x.iter().zip(w) {
                    let t = (a * (mu + s * xi)).tanh();
                    val += wi * t;
                    der += wi * a * (1.0 - t * t);
                }
                (val, der)
            }
            CompiledProfile::Cusp { alpha, table } => {
                let sa = s.powf(*alpha);
                let (p0, d0) = table.eval(mu / s);
                let (pm, dm) = table.eval((mu - 1.0) / s);
                let (pp, dp) = table.eval((mu + 1.0) / s);
                (sa * (p0 - 0.5 * (pm + pp)), sa / s * (d0 - 0.5 * (dm + dp)))
            }
            CompiledProfile::Closed(_) => unreachable!("tanh and cusp are compiled separately"),
        }
    }
}

/// `ψ(m) = E o(m + Z)` and `ψ'(m)` for `o(z) = sign(z)|z|^α`.
#[derive(Debug, Clone)]
pub struct CuspTable {
    alpha: f64,
    step: f64,
    psi: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    /// Asymptotic coefficients `c_j` of `ψ(m) ≈ m^α Σ c_j m^{-2j}`.
    series: Vec<f64>,
}

const CUSP_MAX: f64 = 8.0;
const CUSP_STEP: f64 = 1.0 / 32.0;

fn cusp_table(alpha: f64) -> Arc<CuspTable> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<CuspTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("cusp cache poisoned");
    map.entry(alpha.to_bits()).or_insert_with(|| Arc::new(CuspTable::new(alpha))).clone()
}

impl CuspTable {
    pub fn new(alpha: f64) -> Self {
        let n = (CUSP_MAX / CUSP_STEP).round() as usize;
        // y = L s^{1/α} removes the |y|^α endpoint singularity
        let (s, w) = composite_legendre(0.0, 1.0, 64, 16);
        let q = 1.0 / alpha;
        let mut psi = Vec::with_capacity(n + 1);
        let mut d1 = Vec::with_capacity(n + 1);
        let mut d2 = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let m = j as f64 * CUSP_STEP;
            let l = m + 14.0;
            let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
            for (si, wi) in s.iter().zip(&w) {
                let y = l * si.powf(q);
                let jac = l * q * si.powf(q - 1.0);
                let ya = y.powf(alpha) * jac * wi;
                // +y at z = y - m, and -y at z = -y - m
                let (zp, zm) = (y - m, -y - m);
                let (pp, pm) = (npdf(zp), npdf(zm));
                a0 += ya * (pp - pm);
                a1 += ya * (zp * pp - zm * pm);
                a2 += ya * ((zp * zp - 1.0) * pp - (zm * zm - 1.0) * pm);
            }
            psi.push(a0);
            d1.push(a1);
            d2.push(a2);
        }
        // E(1 + Z/m)^α = Σ_j binom(α, 2j) (2j-1)!! m^{-2j}
        let mut series = Vec::new();
        let mut binom = 1.0;
        let mut dfact = 1.0;
        for j in 0..6 {
            if j > 0 {
                let k = 2 * j;
                binom *= (alpha - (k - 2) as f64) * (alpha - (k - 1) as f64) / ((k - 1) as f64 * k as f64);
                dfact *= (k - 1) as f64;
            }
            series.push(binom * dfact);
        }
        Self { alpha, step: CUSP_STEP, psi, d1, d2, series }
    }

    /// `(ψ(m), ψ'(m))`.
    pub fn eval(&self, m: f64) -> (f64, f64) {
        let sg = if m < 0.0 { -1.0 } else { 1.0 };
        let a = m.abs();
        if a >= CUSP_MAX {
            let mut v = 0.0;
            let mut d = 0.0;
            for (j, c) in self.series.iter().enumerate() {
                let e = self.alpha - 2.0 * j as f64;
                v += c * a.powf(e);
                d += c * e * a.powf(e - 1.0);
            }
            return (sg * v, d);
        }
        let pos = a / self.step;
        let i = (pos.floor() as usize).min(self.psi.len() - 2);
        let t = pos - i as f64;
        let h = self.step;
        let herm = |y0: f64, y1: f64, m0: f64, m1: f64| {
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * m1
        };
        let v = herm(self.psi[i], self.psi[i + 1], self.d1[i], self.d1[i + 1]);
        let d = herm(self.d1[i], self.d1[i + 1], self.d2[i], self.d2[i + 1]);
        (sg * v, d)
    }
}

/// One cylindrical term `w · φ(⟨x, e_mode⟩)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    /// Flat mode index.
    pub mode: usize,
    pub weight: f64,
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn single(mode: usize, profile: Profile) -> Self {
        Self { constant: 0.0, terms: vec![Term { mode, weight: 1.0, profile }] }
    }

    /// `cos(a⟨x, e_mode⟩ + b)`.
    pub fn cosine(mode: usize, a: f64, b: f64) -> Self {
        Self::single(mode, Profile::Cos { a, b })
    }

    /// `(1/|S|) Σ_{k∈S} φ(⟨x, e_k⟩)`.
    pub fn average(profile: Profile, modes: &[usize]) -> Self {
        let w = 1.0 / modes.len().max(1) as f64;
        Self {
            constant: 0.0,
            terms: modes.iter().map(|&mode| Term { mode, weight: w, profile }).collect(),
        }
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        for t in &self.terms {
            if t.mode >= n_modes {
                return Err(SpdeError::InvalidConfig(format!("test function mode {} >= {n_modes}", t.mode)));
            }
            t.profile.validate()?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|t| t.weight * t.profile.eval(x[t.mode])).sum::<f64>()
    }

    pub fn sup_norm(&self) -> f64 {
        self.constant.abs() + self.terms.iter().map(|t| t.weight.abs() * t.profile.sup_norm()).sum::<f64>()
    }

    /// Least regular class among the terms.
    pub fn kind(&self) -> TestKind {
        let mut kind = TestKind::Smooth;
        for t in &self.terms {
            kind = match (kind, t.profile.kind()) {
                (_, TestKind::Rough) | (TestKind::Rough, _) => TestKind::Rough,
                (TestKind::Holder { alpha: a }, TestKind::Holder { alpha: b }) => TestKind::Holder { alpha: a.min(b) },
                (TestKind::Holder { alpha }, _) | (_, TestKind::Holder { alpha }) => TestKind::Holder { alpha },
                (TestKind::Lipschitz, _) | (_, TestKind::Lipschitz) => TestKind::Lipschitz,
                _ => TestKind::Smooth,
            };
        }
        kind
    }

    /// `(α, C)` with `|f(x) - f(y)| ≤ C ‖x - y‖_{L²}^α`; `None` for rough data.
    pub fn holder_constant(&self) -> Option<(f64, f64)> {
        let alpha = match self.kind() {
            TestKind::Rough => return None,
            TestKind::Holder { alpha } => alpha,
            _ => 1.0,
        };
        // bounded terms are α-Hölder with constant max(C_φ, 2‖φ‖∞)
        let mut c = 0.0;
        for t in &self.terms {
            let (a, cp) = t.profile.holder_constant()?;
            let cp = if a == alpha { cp } else { cp.max(2.0 * t.profile.sup_norm()) };
            c += t.weight.abs() * cp;
        }
        Some((alpha, c))
    }

    pub fn compile(&self) -> CompiledTest {
        CompiledTest {
            constant: self.constant,
            terms: self.terms.iter().map(|t| (t.mode, t.weight, CompiledProfile::new(&t.profile))).collect(),
        }
    }
}

/// A [`TestFunction`] with its smoothing data resolved.
#[derive(Debug, Clone)]
pub struct CompiledTest {
    pub constant: f64,
    pub terms: Vec<(usize, f64, CompiledProfile)>,
}

impl CompiledTest {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(k, w, p)| w * p.profile().eval(x[*k])).sum::<f64>()
    }
}
