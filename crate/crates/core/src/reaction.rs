//! Polynomial reaction terms `b(ξ, z)` and the Nemytskii operator they induce.
//!
//! Coefficients follow the sign convention
//!
//! ```text
//! b(ξ, z) = -C_{2m+1}(ξ) z^{2m+1} + Σ_{k ≤ 2m} C_k(ξ) z^k
//! ```
//!
//! so a dissipative reaction has a positive leading coefficient function.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result, SpdeError};
use crate::spectral::{Domain, SpectralField};

/// One `amp · cos(freq · ξ_axis)` term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineTerm {
    pub axis: usize,
    pub freq: u32,
    pub amp: f64,
}

/// A coefficient function: a constant plus a few cosine terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoefficientFn {
    #[serde(default)]
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cosines: Vec<CosineTerm>,
}

impl From<f64> for CoefficientFn {
    fn from(c: f64) -> Self {
        Self { constant: c, cosines: Vec::new() }
    }
}

impl CoefficientFn {
    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.constant
            + self
                .cosines
                .iter()
                .map(|t| t.amp * (t.freq as f64 * xi.get(t.axis).copied().unwrap_or(0.0)).cos())
                .sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.cosines.iter().all(|t| t.amp == 0.0)
    }

    fn max_axis(&self) -> Option<usize> {
        self.cosines.iter().map(|t| t.axis).max()
    }
}

/// Dissipativity constants: `(b(ξ,z+h) - b(ξ,z))h ≤ -a h^{2m+2} + c(1 + |z|^θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipativityCertificate {
    pub a: f64,
    pub c: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionSpec {
    pub m: usize,
    /// `C_0, …, C_{2m+1}`.
    pub coefficients: Vec<CoefficientFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<DissipativityCertificate>,
}

impl ReactionSpec {
    pub fn new(m: usize, coefficients: Vec<CoefficientFn>) -> Result<Self> {
        let spec = Self { m, coefficients, certificate: None };
        spec.check_shape()?;
        Ok(spec)
    }

    /// `b ≡ 0`.
    pub fn zero() -> Self {
        Self { m: 0, coefficients: vec![0.0.into(), 0.0.into()], certificate: None }
    }

    /// `b(z) = c z`.
    pub fn linear(c: f64) -> Self {
        Self { m: 0, coefficients: vec![0.0.into(), (-c).into()], certificate: None }
    }

    /// `b(z) = z - z³`.
    pub fn allen_cahn() -> Self {
        Self::from_polynomial(&[0.0, 1.0, 0.0, -1.0]).expect("valid shape")
    }

    /// Constant-coefficient `b(z) = Σ p_k z^k`; the length must be even.
    pub fn from_polynomial(p: &[f64]) -> Result<Self> {
        if p.len() < 2 || p.len() % 2 != 0 {
            return Err(SpdeError::InvalidConfig(format!(
                "polynomial needs an even number (>= 2) of coefficients, got {}",
                p.len()
            )));
        }
        let m = p.len() / 2 - 1;
        let mut coefficients: Vec<CoefficientFn> = p.iter().map(|&v| v.into()).collect();
        coefficients[2 * m + 1].constant = -p[2 * m + 1];
        Ok(Self { m, coefficients, certificate: None })
    }

    pub fn degree(&self) -> usize {
        2 * self.m + 1
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.coefficients.len() != 2 * self.m + 2 {
            return Err(SpdeError::InvalidConfig(format!(
                "reaction with m = {} needs {} coefficient functions, got {}",
                self.m,
                2 * self.m + 2,
                self.coefficients.len()
            )));
        }
        let finite = self
            .coefficients
            .iter()
            .all(|c| c.constant.is_finite() && c.cosines.iter().all(|t| t.amp.is_finite()));
        if !finite {
            return Err(SpdeError::InvalidConfig("non-finite reaction coefficient".into()));
        }
        Ok(())
    }

    /// Coefficients `p_k(ξ)` of `b(ξ,·) = Σ p_k z^k`.
    pub fn poly_at(&self, xi: &[f64]) -> Vec<f64> {
        let top = self.degree();
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| if k == top { -c.eval(xi) } else { c.eval(xi) })
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        self.coefficients.iter().all(CoefficientFn::is_constant)
    }

    pub fn is_zero(&self) -> bool {
        self.is_constant() && self.coefficients.iter().all(|c| c.constant == 0.0)
    }

    /// Spatial dimension needed to evaluate the coefficients.
    fn coeff_dim(&self) -> usize {
        self.coefficients.iter().filter_map(CoefficientFn::max_axis).max().map_or(1, |a| a + 1)
    }

    /// Sample points in `[0,π]^d` used for `sup_ξ` / `inf_ξ`.
    fn xi_samples(&self) -> Vec<Vec<f64>> {
        if self.is_constant() {
            return vec![vec![0.0]];
        }
        let d = self.coeff_dim();
        let per_axis: usize = match d {
            1 => 257,
            2 => 65,
            _ => 33,
        };
        let nodes: Vec<f64> = (0..per_axis).map(|i| i as f64 * std::f64::consts::PI / (per_axis - 1) as f64).collect();
        let total = per_axis.pow(d as u32);
        (0..total)
            .map(|mut flat| {
                let mut p = vec![0.0; d];
                for slot in p.iter_mut().rev() {
                    *slot = nodes[flat % per_axis];
                    flat /= per_axis;
                }
                p
            })
            .collect()
    }

    /// `inf_ξ C_{2m+1}(ξ)` over the sample set.
    pub fn leading_infimum(&self) -> f64 {
        let lead = &self.coefficients[self.degree()];
        self.xi_samples().iter().map(|xi| lead.eval(xi)).fold(f64::INFINITY, f64::min)
    }

    /// `η = sup_{ξ,z} ∂_z b(ξ,z)`, scanned over `|z| ≤ 100`.
    ///
    /// Infinite when `∂_z b` is unbounded above.
    pub fn one_sided_lipschitz(&self) -> f64 {
        let top = self.degree();
        let lead_sign_ok = self.m == 0 || self.leading_infimum() > 0.0;
        if !lead_sign_ok {
            return f64::INFINITY;
        }
        let mut best = f64::NEG_INFINITY;
        for xi in self.xi_samples() {
            let p = self.poly_at(&xi);
            if top == 1 {
                best = best.max(p[1]);
                continue;
            }
            let n = 20_001;
            for i in 0..n {
                let z = -100.0 + 200.0 * i as f64 / (n - 1) as f64;
                best = best.max(poly_eval(&p, z, 1));
            }
        }
        best
    }
}

/// `d^j/dz^j Σ p_k z^k` by Horner.
pub fn poly_eval(p: &[f64], z: f64, j: usize) -> f64 {
    if j >= p.len() {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in (j..p.len()).rev() {
        let mut fall = 1.0;
        for r in 0..j {
            fall *= (k - r) as f64;
        }
        acc = acc * z + p[k] * fall;
    }
    acc
}

/// `∂_z^j b(ξ, z)` for `j ≤ 3`.
pub fn eval_b(spec: &ReactionSpec, xi: &[f64], z: f64, order: usize) -> Result<f64> {
    if order > 3 {
        return domain_err(format!("derivative order {order} > 3"));
    }
    spec.check_shape()?;
    Ok(poly_eval(&spec.poly_at(xi), z, order))
}

fn lattice() -> Vec<f64> {
    let mut pts = vec![0.0];
    for i in 0..=24 {
        let v = 10f64.powf(-3.0 + 0.25 * i as f64);
        pts.push(v);
        pts.push(-v);
    }
    pts.sort_by(f64::total_cmp);
    pts
}

/// Scan `(b(ξ,z+h) - b(ξ,z))h ≤ -a h^{2m+2} + c(1+|z|^θ)` on the lattice
/// `{0, ±10^{-3}, ±10^{-2.75}, …, ±10^3}²`.
///
/// Returns `None` for `m = 0` (no condition) and otherwise the supplied
/// certificate if it holds, or a constructed one.
pub fn validate_dissipativity(spec: &ReactionSpec) -> Result<Option<DissipativityCertificate>> {
    spec.check_shape()?;
    if spec.m == 0 {
        return Ok(None);
    }
    let lead = spec.leading_infimum();
    if !(lead > 0.0) {
        return Err(SpdeError::Dissipativity {
            z: 0.0,
            h: 1e3,
            reason: format!("leading coefficient C_{} has infimum {lead} <= 0", spec.degree()),
        });
    }
    let p2 = (2 * spec.m + 2) as i32;
    let polys: Vec<Vec<f64>> = spec.xi_samples().iter().map(|xi| spec.poly_at(xi)).collect();
    let lat = lattice();
    let g = |z: f64, h: f64| -> f64 {
        polys
            .iter()
            .map(|p| (poly_eval(p, z + h, 0) - poly_eval(p, z, 0)) * h)
            .fold(f64::NEG_INFINITY, f64::max)
    };

    if let Some(cert) = spec.certificate {
        if !(cert.a > 0.0 && cert.theta >= 0.0 && cert.c.is_finite()) {
            return Err(SpdeError::InvalidConfig(format!("certificate {cert:?} needs a > 0, theta >= 0")));
        }
        for &z in &lat {
            for &h in &lat {
                let lhs = g(z, h);
                let rhs = -cert.a * h.powi(p2) + cert.c * (1.0 + z.abs().powf(cert.theta));
                if lhs > rhs + 1e-12 * (lhs.abs() + rhs.abs()) {
                    return Err(SpdeError::Dissipativity {
                        z,
                        h,
                        reason: format!("supplied certificate fails: lhs {lhs:.6e} > rhs {rhs:.6e}"),
                    });
                }
            }
        }
        return Ok(Some(cert));
    }

    // min_t ((t+1)^{2m+1} - t^{2m+1}) = 2^{-2m}, so half of that is safe.
    let a = 0.5 * lead * 0.5f64.powi(2 * spec.m as i32);
    let theta = p2 as f64;
    let mut c: f64 = 0.0;
    for &z in &lat {
        let q = |h: f64| g(z, h) + a * h.powi(p2);
        // the bracket must not keep growing on the outermost ring
        let (outer, inner) = (lat[lat.len() - 1], lat[lat.len() - 2]);
        for s in [1.0, -1.0] {
            let (qo, qi) = (q(s * outer), q(s * inner));
            if qo > 0.0 && qo > qi {
                return Err(SpdeError::Dissipativity {
                    z,
                    h: s * outer,
                    reason: "growth in |h| is not dominated by -a h^(2m+2)".into(),
                });
            }
        }
        for &h in &lat {
            c = c.max(q(h) / (1.0 + z.abs().powf(theta)));
        }
    }
    let c = c * (1.0 + 1e-9) + 1e-12;
    Ok(Some(DissipativityCertificate { a, c, theta }))
}

/// Pointwise coefficient table on a grid.
#[derive(Debug, Clone)]
enum PolyTable {
    Zero,
    /// `b(z) = c z`.
    Linear(f64),
    Constant(Vec<f64>),
    PerPoint { width: usize, values: Vec<f64> },
}

/// The Nemytskii operator `F(x)(ξ) = b(ξ, x(ξ))` on a (possibly padded) grid.
#[derive(Debug, Clone)]
pub struct Nemytskii {
    grid_domain: Arc<Domain>,
    table: PolyTable,
}

impl Nemytskii {
    /// Pads the grid to `M ≥ (2m+2)K` when needed.
    pub fn new(spec: &ReactionSpec, domain: &Arc<Domain>) -> Result<Self> {
        spec.check_shape()?;
        let need = (2 * spec.m + 2) * domain.spec().modes;
        let grid_domain = if domain.spec().grid >= need {
            Arc::clone(domain)
        } else {
            let mut s = domain.spec().clone();
            s.grid = need;
            Domain::new(s)?
        };
        let table = if spec.is_zero() {
            PolyTable::Zero
        } else if spec.is_constant() {
            let p = spec.poly_at(&[0.0]);
            if p.iter().enumerate().all(|(k, &v)| k == 1 || v == 0.0) {
                PolyTable::Linear(p[1])
            } else {
                PolyTable::Constant(p)
            }
        } else {
            let width = spec.coefficients.len();
            let n = grid_domain.grid_len();
            let mut values = Vec::with_capacity(n * width);
            for g in 0..n {
                values.extend(spec.poly_at(&grid_domain.grid_point(g)));
            }
            PolyTable::PerPoint { width, values }
        };
        Ok(Self { grid_domain, table })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.table, PolyTable::Zero)
    }

    /// `Some(c)` when `b(z) = c z` with constant `c`.
    pub fn linear_rate(&self) -> Option<f64> {
        match self.table {
            PolyTable::Zero => Some(0.0),
            PolyTable::Linear(c) => Some(c),
            _ => None,
        }
    }

    pub fn grid_domain(&self) -> &Arc<Domain> {
        &self.grid_domain
    }

    pub fn grid_len(&self) -> usize {
        self.grid_domain.grid_len()
    }

    fn poly(&self, g: usize) -> &[f64] {
        match &self.table {
            PolyTable::Constant(p) => p,
            PolyTable::PerPoint { width, values } => &values[g * width..(g + 1) * width],
            _ => unreachable!("no table for zero or linear reactions"),
        }
    }

    /// `F(x)` coefficients into `out`; `grid` is scratch of length [`Self::grid_len`].
    pub fn apply_into(&self, x: &[f64], grid: &mut [f64], out: &mut [f64]) {
        match self.table {
            PolyTable::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            PolyTable::Linear(c) => out.iter_mut().zip(x).for_each(|(o, v)| *o = c * v),
            _ => {
                self.grid_domain.synthesize(x, grid);
                for (g, v) in grid.iter_mut().enumerate() {
                    *v = poly_eval(self.poly(g), *v, 0);
                }
                self.grid_domain.analyze(grid, out);
            }
        }
    }

    /// `F(x)` into `out` and the potential `∂_z b(ξ, x(ξ))` into `potential`.
    pub fn apply_with_potential(&self, x: &[f64], grid: &mut [f64], potential: &mut [f64], out: &mut [f64]) {
        match self.table {
            PolyTable::Zero | PolyTable::Linear(_) => self.apply_into(x, grid, out),
            _ => {
                self.grid_domain.synthesize(x, grid);
                for (g, (v, pot)) in grid.iter_mut().zip(potential.iter_mut()).enumerate() {
                    let p = self.poly(g);
                    *pot = poly_eval(p, *v, 1);
                    *v = poly_eval(p, *v, 0);
                }
                self.grid_domain.analyze(grid, out);
            }
        }
    }

    /// Coefficients of `∂_z b(·, x) · ξ` given the potential from
    /// [`Self::apply_with_potential`].
    pub fn tangent_drift(&self, potential: &[f64], xi: &[f64], grid: &mut [f64], out: &mut [f64]) {
        match self.table {
            PolyTable::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            PolyTable::Linear(c) => out.iter_mut().zip(xi).for_each(|(o, v)| *o = c * v),
            _ => {
                self.grid_domain.synthesize(xi, grid);
                for (v, p) in grid.iter_mut().zip(potential) {
                    *v *= p;
                }
                self.grid_domain.analyze(grid, out);
            }
        }
    }
}

/// Result of [`nemytskii_apply`].
#[derive(Debug, Clone)]
pub enum NemytskiiOutput {
    /// `F(x)` projected back onto the retained modes.
    Field(SpectralField),
    /// `∂_z^j b(ξ, x(ξ))` on the field's grid.
    Grid(Vec<f64>),
}

/// Pseudo-spectral application of `∂_z^j b`.
pub fn nemytskii_apply(spec: &ReactionSpec, x: &SpectralField, order: usize) -> Result<NemytskiiOutput> {
    if order > 3 {
        return domain_err(format!("derivative order {order} > 3"));
    }
    if order == 0 {
        let op = Nemytskii::new(spec, x.domain())?;
        let mut grid = vec![0.0; op.grid_len()];
        let mut out = vec![0.0; x.domain().n_modes()];
        op.apply_into(x.coeffs(), &mut grid, &mut out);
        return Ok(NemytskiiOutput::Field(SpectralField::new(x.domain(), out)?));
    }
    let dom = x.domain();
    let values = x.grid_values();
    let out = values
        .iter()
        .enumerate()
        .map(|(g, &z)| poly_eval(&spec.poly_at(&dom.grid_point(g)), z, order))
        .collect();
    Ok(NemytskiiOutput::Grid(out))
}
