//! Boundary-exponential conventions and the seven-term Laplace duality
//! symbol bundle.
//!
//! A duality symbol is
//!
//! `ψ(x,y) = xΨ(y) + x²Σ(y) + 𝚺(x,y) − 𝚽(x,y) + Σ̂(x)y² + Ψ̂(x)y + κ(xy)`
//!
//! with `Ψ, Ψ̂` spectrally positive exponents, `Σ, Σ̂` not-drifting-up
//! exponents, `κ` an environment exponent, and `𝚺, 𝚽` bivariate jump terms
//! built from the kernels `(e^{-xv}-1+xv)(e^{-uy}-1+uy)` and
//! `(1-e^{-xv}1_{v<∞})(1-e^{-uy}1_{u<∞})`. The dual symbol swaps hatted and
//! unhatted parts and transposes the bivariate measures, which realizes
//! `ψ̂(x,y) = ψ(y,x)` structurally.
//!
//! Boundary conventions only enter [`exp_conv`], the boundary-aware
//! exponential `e^{-xy}` on `[0,∞]²`; symbol evaluation itself treats the
//! boundaries by exact limits (zero at infinity) and never consults a
//! convention.

use serde::{Deserialize, Serialize};

use crate::mechanisms::{
    eval_env, eval_not_up, eval_splp, measure_compensated_eval, measure_first_moment,
    measure_one_minus_exp_eval, EnvMechanism, JumpMeasureSpec, NotUpMechanism, SpLpMechanism,
};
use crate::special::gauss_legendre_01;
use crate::{Error, Result};

/// How `e^{-0·∞}` is read: `0⁺·∞` makes the product `∞` (value 0),
/// `0·∞⁻` makes it `0` (value 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroInfConvention {
    #[serde(rename = "0+inf")]
    ZeroPlusInf,
    #[serde(rename = "0inf-")]
    ZeroInfMinus,
}

/// How `e^{-∞·0}` is read: `∞·0⁺` makes the product `∞` (value 0),
/// `∞⁻·0` makes it `0` (value 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfZeroConvention {
    #[serde(rename = "inf0+")]
    InfZeroPlus,
    #[serde(rename = "inf-0")]
    InfMinusZero,
}

/// A choice of convention for each ambiguous corner of `[0,∞]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConventionPair {
    pub zero_inf: ZeroInfConvention,
    pub inf_zero: InfZeroConvention,
}

impl ConventionPair {
    pub fn new(zero_inf: ZeroInfConvention, inf_zero: InfZeroConvention) -> Self {
        Self { zero_inf, inf_zero }
    }

    /// All four convention pairs, for regime sweeps.
    pub fn all() -> [Self; 4] {
        use InfZeroConvention::*;
        use ZeroInfConvention::*;
        [
            Self::new(ZeroPlusInf, InfZeroPlus),
            Self::new(ZeroPlusInf, InfMinusZero),
            Self::new(ZeroInfMinus, InfZeroPlus),
            Self::new(ZeroInfMinus, InfMinusZero),
        ]
    }

    /// The pair read with the coordinates swapped: each corner rule keeps
    /// the limit on the same factor, so
    /// `exp_conv(x, y, conv) == exp_conv(y, x, conv.transposed())`.
    pub fn transposed(self) -> Self {
        Self {
            zero_inf: match self.inf_zero {
                InfZeroConvention::InfZeroPlus => ZeroInfConvention::ZeroPlusInf,
                InfZeroConvention::InfMinusZero => ZeroInfConvention::ZeroInfMinus,
            },
            inf_zero: match self.zero_inf {
                ZeroInfConvention::ZeroPlusInf => InfZeroConvention::InfZeroPlus,
                ZeroInfConvention::ZeroInfMinus => InfZeroConvention::InfMinusZero,
            },
        }
    }
}

impl Default for ConventionPair {
    /// `(0⁺·∞, ∞·0⁺)`: the regime of duals that are absorbed at `∞` and
    /// continuous at 0.
    fn default() -> Self {
        Self::new(ZeroInfConvention::ZeroPlusInf, InfZeroConvention::InfZeroPlus)
    }
}

/// Boundary-aware `e^{-xy}` on `[0,∞]²`.
///
/// Ordinary arithmetic wherever the product `xy` is unambiguous; at the two
/// ambiguous corners the convention decides which factor wins: the adorned
/// factor (`0⁺` or `∞⁻`) is the limit one, the plain factor is the product's
/// value, so `0⁺·∞` and `∞·0⁺` give `e^{-∞} = 0` while `0·∞⁻` and `∞⁻·0`
/// give `e^{0} = 1`.
pub fn exp_conv(x: f64, y: f64, conv: ConventionPair) -> f64 {
    debug_assert!(x >= 0.0 && y >= 0.0);
    if x == 0.0 && y.is_infinite() {
        return match conv.zero_inf {
            ZeroInfConvention::ZeroPlusInf => 0.0,
            ZeroInfConvention::ZeroInfMinus => 1.0,
        };
    }
    if x.is_infinite() && y == 0.0 {
        return match conv.inf_zero {
            InfZeroConvention::InfZeroPlus => 0.0,
            InfZeroConvention::InfMinusZero => 1.0,
        };
    }
    (-(x * y)).exp()
}

/// Which kernel a bivariate term is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BivariateRole {
    /// `(e^{-xv}-1+xv)(e^{-uy}-1+uy)`, finite coordinates only.
    Sigma,
    /// `(1-e^{-xv}1_{v<∞})(1-e^{-uy}1_{u<∞})`, `∞` coordinates allowed.
    Phi,
}

/// One bivariate atom: mass at `(v, u)`; coordinates may be `+∞` in the
/// `𝚽` role, where an `∞` coordinate makes that factor identically 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateAtom {
    pub v: f64,
    pub u: f64,
    pub mass: f64,
}

impl BivariateAtom {
    pub fn new(v: f64, u: f64, mass: f64) -> Self {
        Self { v, u, mass }
    }
}

/// A product measure `weight · (left ⊗ right)` of two one-dimensional jump
/// measures.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateProduct {
    pub left: JumpMeasureSpec,
    pub right: JumpMeasureSpec,
    pub weight: f64,
}

/// Parametric mixing families over `r ∈ (0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixtureFamily {
    /// `𝚺`-role: `∫_0^1 (xy)^{r+1} dr`, closed form `xy(xy-1)/ln(xy)`.
    StablePowers,
    /// `𝚽`-role: `∫_0^1 r^gamma ln(1+xr) ln(1+y/r) dr`.
    GammaLog { gamma: f64 },
}

/// A mixing integral discretized by Gauss-Legendre quadrature at
/// construction; `transposed` swaps the arguments before the kernel so the
/// dual symbol's transposition is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub family: MixtureFamily,
    pub quadrature_nodes: usize,
    pub weight: f64,
    pub transposed: bool,
}

impl MixtureSpec {
    pub fn new(family: MixtureFamily, quadrature_nodes: usize) -> Self {
        Self { family, quadrature_nodes, weight: 1.0, transposed: false }
    }
}

/// A bivariate jump term: atoms, product measures, and at most one mixture.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BivariateTerm {
    pub atoms: Vec<BivariateAtom>,
    pub products: Vec<BivariateProduct>,
    pub mixture: Option<MixtureSpec>,
}

impl BivariateTerm {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_atoms(atoms: Vec<BivariateAtom>) -> Self {
        Self { atoms, ..Self::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.products.is_empty() && self.mixture.is_none()
    }

    pub fn validate(&self, role: BivariateRole) -> Result<()> {
        for at in &self.atoms {
            if !(at.mass > 0.0) || !at.mass.is_finite() {
                return Err(Error::Validation(format!(
                    "bivariate atom mass must be positive and finite, got {}",
                    at.mass
                )));
            }
            for coord in [at.v, at.u] {
                if coord.is_nan() || coord <= 0.0 {
                    return Err(Error::Validation(format!(
                        "bivariate atom coordinate must be in (0,∞], got {coord}"
                    )));
                }
                if coord.is_infinite() && role == BivariateRole::Sigma {
                    return Err(Error::Validation(
                        "∞ coordinates are only allowed in the 𝚽 role".into(),
                    ));
                }
            }
        }
        for p in &self.products {
            if !(p.weight > 0.0) || !p.weight.is_finite() {
                return Err(Error::Validation(format!(
                    "product weight must be positive and finite, got {}",
                    p.weight
                )));
            }
            for m in [&p.left, &p.right] {
                let max_alpha = match role {
                    BivariateRole::Sigma => 2.0,
                    // the 𝚽 kernel grows like w near 0, so ∫(1∧w) must
                    // converge, as for a subordinator measure
                    BivariateRole::Phi => 1.0,
                };
                let class = "bivariate product factor";
                if m.support_floor != 0.0 {
                    return Err(Error::Validation(format!(
                        "{class}: support floor must be 0, got {}",
                        m.support_floor
                    )));
                }
                let probe = JumpMeasureSpec {
                    atoms: m.atoms.clone(),
                    stable: m.stable,
                    support_floor: m.support_floor,
                };
                NotUpMechanism { measure: probe, a: 0.0, d: 0.0 }
                    .validate()
                    .map_err(|e| Error::Validation(format!("{class}: {e}")))?;
                if let Some(st) = &m.stable {
                    if st.alpha >= max_alpha {
                        return Err(Error::Validation(format!(
                            "{class}: stable alpha must be < {max_alpha} in this role, got {}",
                            st.alpha
                        )));
                    }
                }
            }
        }
        if let Some(mix) = &self.mixture {
            if mix.quadrature_nodes == 0 || mix.quadrature_nodes > 512 {
                return Err(Error::Validation(format!(
                    "quadrature_nodes must be in 1..=512, got {}",
                    mix.quadrature_nodes
                )));
            }
            if !(mix.weight > 0.0) || !mix.weight.is_finite() {
                return Err(Error::Validation(format!(
                    "mixture weight must be positive and finite, got {}",
                    mix.weight
                )));
            }
            match (mix.family, role) {
                (MixtureFamily::StablePowers, BivariateRole::Sigma) => {}
                (MixtureFamily::GammaLog { gamma }, BivariateRole::Phi) => {
                    if !(gamma >= 0.0) || !gamma.is_finite() {
                        return Err(Error::Validation(format!(
                            "gamma must be ≥ 0 and finite, got {gamma}"
                        )));
                    }
                }
                (family, _) => {
                    return Err(Error::Validation(format!(
                        "mixture family {family:?} is not valid in the {role:?} role"
                    )));
                }
            }
        }
        Ok(())
    }

    fn transpose(&self) -> Self {
        Self {
            atoms: self.atoms.iter().map(|a| BivariateAtom::new(a.u, a.v, a.mass)).collect(),
            products: self
                .products
                .iter()
                .map(|p| BivariateProduct {
                    left: p.right.clone(),
                    right: p.left.clone(),
                    weight: p.weight,
                })
                .collect(),
            mixture: self.mixture.clone().map(|mut m| {
                m.transposed = !m.transposed;
                m
            }),
        }
    }

    // the per-term products are grouped `mass·(fx·fy)` so evaluating the
    // transposed term at swapped arguments performs the same machine
    // operations and the duality defect stays at zero
    fn eval(&self, role: BivariateRole, x: f64, y: f64) -> Result<f64> {
        let mut total = 0.0;
        for at in &self.atoms {
            total += at.mass * (uni_factor(role, x, at.v) * uni_factor(role, y, at.u));
        }
        for p in &self.products {
            let (fx, fy) = match role {
                BivariateRole::Sigma => {
                    (measure_compensated_eval(&p.left, x), measure_compensated_eval(&p.right, y))
                }
                BivariateRole::Phi => (
                    measure_one_minus_exp_eval(&p.left, x),
                    measure_one_minus_exp_eval(&p.right, y),
                ),
            };
            total += p.weight * (fx * fy);
        }
        if let Some(mix) = &self.mixture {
            total += mix.weight * eval_mixture(mix, x, y)?;
        }
        Ok(total)
    }
}

fn uni_factor(role: BivariateRole, z: f64, coord: f64) -> f64 {
    match role {
        BivariateRole::Sigma => (-coord * z).exp_m1() + coord * z,
        BivariateRole::Phi => {
            if coord.is_infinite() {
                1.0
            } else {
                -(-coord * z).exp_m1()
            }
        }
    }
}

fn mixture_kernel(family: MixtureFamily, x: f64, y: f64, r: f64) -> f64 {
    match family {
        MixtureFamily::StablePowers => (x * y).powf(r + 1.0),
        MixtureFamily::GammaLog { gamma } => {
            r.powf(gamma) * (x * r).ln_1p() * (y / r).ln_1p()
        }
    }
}

fn eval_mixture(mix: &MixtureSpec, x: f64, y: f64) -> Result<f64> {
    let (x, y) = if mix.transposed { (y, x) } else { (x, y) };
    if x == 0.0 || y == 0.0 {
        return Ok(0.0);
    }
    let n = mix.quadrature_nodes;
    let coarse: f64 = gauss_legendre_01(n)?
        .iter()
        .map(|&(r, w)| w * mixture_kernel(mix.family, x, y, r))
        .sum();
    let fine: f64 = gauss_legendre_01(2 * n)?
        .iter()
        .map(|&(r, w)| w * mixture_kernel(mix.family, x, y, r))
        .sum();
    let change = (coarse - fine).abs() / fine.abs().max(1e-300);
    if change > 1e-8 {
        return Err(Error::NumericAccuracy(format!(
            "mixture quadrature not converged at ({x}, {y}): {n} vs {} nodes differ by {change:.3e}",
            2 * n
        )));
    }
    Ok(fine)
}

/// The seven-term duality symbol bundle. Any component may be the zero
/// mechanism / empty term.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsSymbol {
    pub psi: SpLpMechanism,
    pub sigma: NotUpMechanism,
    pub big_sigma: BivariateTerm,
    pub big_phi: BivariateTerm,
    pub sigma_hat: NotUpMechanism,
    pub psi_hat: SpLpMechanism,
    pub kappa: EnvMechanism,
}

impl LdsSymbol {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        psi: SpLpMechanism,
        sigma: NotUpMechanism,
        big_sigma: BivariateTerm,
        big_phi: BivariateTerm,
        sigma_hat: NotUpMechanism,
        psi_hat: SpLpMechanism,
        kappa: EnvMechanism,
    ) -> Result<Self> {
        let s = Self { psi, sigma, big_sigma, big_phi, sigma_hat, psi_hat, kappa };
        s.validate()?;
        Ok(s)
    }

    /// The all-zero symbol, a convenient base for struct updates.
    pub fn zero() -> Self {
        Self {
            psi: SpLpMechanism::zero(),
            sigma: NotUpMechanism::zero(),
            big_sigma: BivariateTerm::empty(),
            big_phi: BivariateTerm::empty(),
            sigma_hat: NotUpMechanism::zero(),
            psi_hat: SpLpMechanism::zero(),
            kappa: EnvMechanism::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.psi.validate()?;
        self.sigma.validate()?;
        self.big_sigma.validate(BivariateRole::Sigma)?;
        self.big_phi.validate(BivariateRole::Phi)?;
        self.sigma_hat.validate()?;
        self.psi_hat.validate()?;
        self.kappa.validate()
    }
}

/// `ψ(x, y)` for `x, y ∈ [0, ∞]`; identically 0 when either argument is
/// infinite (vanishing at infinity).
pub fn eval_lds(s: &LdsSymbol, x: f64, y: f64) -> Result<f64> {
    debug_assert!(x >= 0.0 && y >= 0.0);
    if x.is_infinite() || y.is_infinite() {
        return Ok(0.0);
    }
    // hatted and unhatted partners are accumulated pairwise, and every
    // product keeps the two-factor form `A·B`; multiplication and addition
    // of two floats commute exactly, so evaluating the transposed symbol
    // at swapped arguments reproduces the same machine result bit for bit
    let mut total = 0.0;
    if !s.psi.is_zero() || !s.psi_hat.is_zero() {
        total += x * eval_splp(&s.psi, y) + eval_splp(&s.psi_hat, x) * y;
    }
    if !s.sigma.is_zero() || !s.sigma_hat.is_zero() {
        total += (x * x) * eval_not_up(&s.sigma, y) + eval_not_up(&s.sigma_hat, x) * (y * y);
    }
    if !s.big_sigma.is_empty() {
        total += s.big_sigma.eval(BivariateRole::Sigma, x, y)?;
    }
    if !s.big_phi.is_empty() {
        total -= s.big_phi.eval(BivariateRole::Phi, x, y)?;
    }
    if !s.kappa.is_zero() {
        total += eval_env(&s.kappa, x * y);
    }
    Ok(total)
}

/// The transposed symbol `ψ̂`: hatted and unhatted parts swapped, bivariate
/// measures transposed, `κ` unchanged. `eval_lds(dual, x, y)` equals
/// `eval_lds(s, y, x)` exactly.
pub fn dual_symbol(s: &LdsSymbol) -> LdsSymbol {
    LdsSymbol {
        psi: s.psi_hat.clone(),
        sigma: s.sigma_hat.clone(),
        big_sigma: s.big_sigma.transpose(),
        big_phi: s.big_phi.transpose(),
        sigma_hat: s.sigma.clone(),
        psi_hat: s.psi.clone(),
        kappa: s.kappa.clone(),
    }
}

/// Max over the grid of `|ψ(x,y) − ψ̂(y,x)|`.
pub fn check_symbol_duality(s: &LdsSymbol, grid: &[(f64, f64)]) -> Result<f64> {
    let dual = dual_symbol(s);
    let mut worst = 0.0f64;
    for &(x, y) in grid {
        let gap = (eval_lds(s, x, y)? - eval_lds(&dual, y, x)?).abs();
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// The pregenerator applied to `e^{-·y}` at `x`: `ψ(x,y)e^{-xy}` for
/// `x ∈ (0,∞)`, `ψ(0,y)` at `x = 0`, and 0 at `x = ∞`.
pub fn pregenerator_apply(s: &LdsSymbol, x: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) || y.is_infinite() {
        return Err(Error::Contract(format!("pregenerator needs y in (0,∞), got {y}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(eval_lds(s, x, y)? * (-(x * y)).exp())
}

/// First cross moment `∫ v·u 𝛎(dv,du)` of a `𝚽`-role term, `+∞` when an
/// `∞`-coordinate atom or a divergent product moment is present.
pub fn cross_derivative_phi(t: &BivariateTerm) -> Result<f64> {
    let mut total = 0.0;
    for at in &t.atoms {
        if at.v.is_infinite() || at.u.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += at.mass * at.v * at.u;
    }
    for p in &t.products {
        let m = measure_first_moment(&p.left) * measure_first_moment(&p.right);
        if m.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += p.weight * m;
    }
    if let Some(mix) = &t.mixture {
        let gamma = match mix.family {
            MixtureFamily::GammaLog { gamma } => gamma,
            MixtureFamily::StablePowers => {
                return Err(Error::Contract(
                    "cross moment is defined for 𝚽-role terms; StablePowers is a 𝚺 family".into(),
                ));
            }
        };
        // ∂x ln(1+xr)·∂y ln(1+y/r) at 0 is r·(1/r), so the moment is the
        // plain gamma moment of the node weights
        let moment: f64 =
            gauss_legendre_01(mix.quadrature_nodes)?.iter().map(|&(r, w)| w * r.powf(gamma)).sum();
        total += mix.weight * moment;
    }
    Ok(total)
}

/// Grid estimate of `sup ψ₋(x,y)e^{-xy}` together with the analytic
/// sufficient conditions for that sup to be finite.
///
/// `hypotheses_hold` checks: `Ψ(0) = 0 = Ψ̂(0)` (no killing), `𝚽` vanishing
/// on the axes (no `∞`-coordinate atoms), finite `Ψ'(0⁺)`, `Ψ̂'(0⁺)`, and a
/// finite `𝚽` cross moment. `sup_estimate` probes the uniform
/// `grid_n × grid_n` grid on `[0, grid_cap]²`; it can refute finiteness,
/// never prove it.
pub fn check_negative_part_bound(
    s: &LdsSymbol,
    grid_cap: f64,
    grid_n: usize,
) -> Result<(f64, bool)> {
    if !(grid_cap > 0.0) || grid_n < 2 {
        return Err(Error::Contract(format!(
            "need grid_cap > 0 and grid_n ≥ 2, got ({grid_cap}, {grid_n})"
        )));
    }
    let axes_clean = s.big_phi.atoms.iter().all(|at| at.v.is_finite() && at.u.is_finite());
    let cross = cross_derivative_phi(&s.big_phi)?;
    let hypotheses_hold = s.psi.c == 0.0
        && s.psi_hat.c == 0.0
        && axes_clean
        && s.psi.derivative_at_zero().is_finite()
        && s.psi_hat.derivative_at_zero().is_finite()
        && cross.is_finite();

    let mut sup = 0.0f64;
    let step = grid_cap / (grid_n - 1) as f64;
    for i in 0..grid_n {
        let x = i as f64 * step;
        for j in 0..grid_n {
            let y = j as f64 * step;
            let value = eval_lds(s, x, y)?;
            if value < 0.0 {
                sup = sup.max(-value * (-(x * y)).exp());
            }
        }
    }
    Ok((sup, hypotheses_hold))
}
