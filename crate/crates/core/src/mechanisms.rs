//! The four Lévy–Khintchine mechanism classes and their closed-form
//! evaluation.
//!
//! Every mechanism is a finite atomic jump measure, optionally one one-sided
//! stable density `scale·u^{-1-alpha} du` truncated to `(0, 1]`, plus the
//! class's scalar parameters. Constructors validate the class invariants;
//! evaluation assumes a validated value (an invalid one is only reachable by
//! mutating public fields, which `validate` re-checks).
//!
//! Classes:
//! - [`SpLpMechanism`]: `Ψ(y) = ∫(e^{-uy}-1+uy·1_{(0,1]}(u)) ν(du) + a y² - b y - c`,
//!   the Laplace exponent of a possibly killed spectrally positive Lévy
//!   process. Convex, `Ψ(0) = -c`.
//! - [`SubordinatorMechanism`]: `Φ(y) = ∫(1-e^{-uy}) ν(du) + d y + c`, a
//!   possibly killed subordinator exponent. Nonnegative, nondecreasing,
//!   concave, `Φ(0) = c`.
//! - [`NotUpMechanism`]: `Σ(y) = ∫(e^{-uy}-1+uy) ν(du) + a y² + d y`, the
//!   exponent of a spectrally positive process not drifting to `+∞`.
//!   Nonnegative, convex, `Σ(0) = 0`.
//! - [`EnvMechanism`]: `κ(z) = ∫(e^{-zm}-1+zm·1_{[-1,1]}(m)) ν̃(dm) + a z² - b z - c`,
//!   a Lévy exponent whose jump measure lives on `[-1, ∞) \ {0}`, used as a
//!   random environment. Convex, `κ(0) = -c`.

use crate::special::{exp_integral_e1, lower_incomplete_gamma};
use crate::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// One atom of a jump measure: mass `mass` at `location`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

impl Atom {
    pub fn new(location: f64, mass: f64) -> Self {
        Self { location, mass }
    }
}

/// Stable density component `scale·u^{-1-alpha} du` on `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StablePart {
    pub alpha: f64,
    pub scale: f64,
}

/// A jump measure: finitely many atoms plus at most one stable density.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasureSpec {
    pub atoms: Vec<Atom>,
    pub stable: Option<StablePart>,
    /// Minimum allowed atom location (0 for one-sided classes, -1 for the
    /// environment class). Locations must also be nonzero.
    pub support_floor: f64,
}

impl JumpMeasureSpec {
    pub fn empty(support_floor: f64) -> Self {
        Self { atoms: Vec::new(), stable: None, support_floor }
    }

    pub fn from_atoms(support_floor: f64, atoms: Vec<Atom>) -> Self {
        Self { atoms, stable: None, support_floor }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.stable.is_none()
    }

    /// Total atomic mass (the stable part always has infinite total mass).
    pub fn atomic_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    fn validate(&self, class: &str, max_stable_alpha: f64) -> Result<()> {
        for atom in &self.atoms {
            if !atom.location.is_finite() || !atom.mass.is_finite() {
                return Err(Error::Validation(format!(
                    "{class}: atom ({}, {}) must be finite",
                    atom.location, atom.mass
                )));
            }
            if atom.mass <= 0.0 {
                return Err(Error::Validation(format!(
                    "{class}: atom mass must be positive, got {}",
                    atom.mass
                )));
            }
            if atom.location == 0.0 {
                return Err(Error::Validation(format!("{class}: atom location must be nonzero")));
            }
            if atom.location < self.support_floor {
                return Err(Error::Validation(format!(
                    "{class}: atom location {} below support floor {}",
                    atom.location, self.support_floor
                )));
            }
        }
        if let Some(st) = &self.stable {
            if !(st.alpha > 0.0 && st.alpha < max_stable_alpha) {
                return Err(Error::Validation(format!(
                    "{class}: stable alpha must be in (0, {max_stable_alpha}), got {}",
                    st.alpha
                )));
            }
            if !(st.scale > 0.0 && st.scale.is_finite()) {
                return Err(Error::Validation(format!(
                    "{class}: stable scale must be positive and finite, got {}",
                    st.scale
                )));
            }
        }
        Ok(())
    }
}

/// `Ψ(y) = ∫(e^{-uy}-1+uy·1_{(0,1]}(u)) ν(du) + a y² - b y - c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpLpMechanism {
    pub measure: JumpMeasureSpec,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SpLpMechanism {
    pub fn new(measure: JumpMeasureSpec, a: f64, b: f64, c: f64) -> Result<Self> {
        let m = Self { measure, a, b, c };
        m.validate()?;
        Ok(m)
    }

    pub fn zero() -> Self {
        Self { measure: JumpMeasureSpec::empty(0.0), a: 0.0, b: 0.0, c: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.measure.is_empty() && self.a == 0.0 && self.b == 0.0 && self.c == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.measure.validate("spectrally positive exponent", 2.0)?;
        require_floor_zero(&self.measure, "spectrally positive exponent")?;
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return Err(Error::Validation(format!("diffusion a must be ≥ 0, got {}", self.a)));
        }
        if !self.b.is_finite() {
            return Err(Error::Validation(format!("drift b must be finite, got {}", self.b)));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::Validation(format!("killing c must be ≥ 0, got {}", self.c)));
        }
        Ok(())
    }

    /// Right derivative `Ψ'(0⁺) = -b - ∫_{(1,∞)} u ν(du)`.
    ///
    /// Always finite in this class: the stable part lives on `(0, 1]`, and
    /// atoms above 1 are finitely many.
    pub fn derivative_at_zero(&self) -> f64 {
        let tail: f64 = self
            .measure
            .atoms
            .iter()
            .filter(|at| at.location > 1.0)
            .map(|at| at.location * at.mass)
            .sum();
        -self.b - tail
    }
}

/// `Φ(y) = ∫(1-e^{-uy}) ν(du) + d y + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorMechanism {
    pub measure: JumpMeasureSpec,
    pub d: f64,
    pub c: f64,
}

impl SubordinatorMechanism {
    pub fn new(measure: JumpMeasureSpec, d: f64, c: f64) -> Result<Self> {
        let m = Self { measure, d, c };
        m.validate()?;
        Ok(m)
    }

    pub fn zero() -> Self {
        Self { measure: JumpMeasureSpec::empty(0.0), d: 0.0, c: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.measure.is_empty() && self.d == 0.0 && self.c == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.measure.validate("subordinator exponent", 1.0)?;
        require_floor_zero(&self.measure, "subordinator exponent")?;
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return Err(Error::Validation(format!("drift d must be ≥ 0, got {}", self.d)));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::Validation(format!("killing c must be ≥ 0, got {}", self.c)));
        }
        Ok(())
    }

    /// Right derivative `Φ'(0⁺) = d + ∫ u ν(du)`, `+∞` when the stable first
    /// moment diverges (only reachable with an out-of-class `alpha ≥ 1`).
    pub fn derivative_at_zero(&self) -> f64 {
        let atoms: f64 = self.measure.atoms.iter().map(|at| at.location * at.mass).sum();
        let stable = match &self.measure.stable {
            None => 0.0,
            Some(st) if st.alpha < 1.0 => st.scale / (1.0 - st.alpha),
            Some(_) => return f64::INFINITY,
        };
        self.d + atoms + stable
    }

    /// `lim_{y→∞} Φ(y)`: total jump mass plus killing, `+∞` with drift or a
    /// stable part (whose total mass is infinite).
    pub fn limit_at_infinity(&self) -> f64 {
        if self.d > 0.0 || self.measure.stable.is_some() {
            f64::INFINITY
        } else {
            self.measure.atomic_mass() + self.c
        }
    }
}

/// `Σ(y) = ∫(e^{-uy}-1+uy) ν(du) + a y² + d y`.
#[derive(Debug, Clone, PartialEq)]
pub struct NotUpMechanism {
    pub measure: JumpMeasureSpec,
    pub a: f64,
    pub d: f64,
}

impl NotUpMechanism {
    pub fn new(measure: JumpMeasureSpec, a: f64, d: f64) -> Result<Self> {
        let m = Self { measure, a, d };
        m.validate()?;
        Ok(m)
    }

    pub fn zero() -> Self {
        Self { measure: JumpMeasureSpec::empty(0.0), a: 0.0, d: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.measure.is_empty() && self.a == 0.0 && self.d == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.measure.validate("not-drifting-up exponent", 2.0)?;
        require_floor_zero(&self.measure, "not-drifting-up exponent")?;
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return Err(Error::Validation(format!("diffusion a must be ≥ 0, got {}", self.a)));
        }
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return Err(Error::Validation(format!("drift d must be ≥ 0, got {}", self.d)));
        }
        Ok(())
    }
}

/// `κ(z) = ∫(e^{-zm}-1+zm·1_{[-1,1]}(m)) ν̃(dm) + a z² - b z - c`, jump
/// measure on `[-1, ∞) \ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMechanism {
    pub measure: JumpMeasureSpec,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EnvMechanism {
    pub fn new(measure: JumpMeasureSpec, a: f64, b: f64, c: f64) -> Result<Self> {
        let m = Self { measure, a, b, c };
        m.validate()?;
        Ok(m)
    }

    pub fn zero() -> Self {
        Self { measure: JumpMeasureSpec::empty(-1.0), a: 0.0, b: 0.0, c: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.measure.is_empty() && self.a == 0.0 && self.b == 0.0 && self.c == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.measure.validate("environment exponent", 2.0)?;
        if self.measure.support_floor != -1.0 {
            return Err(Error::Validation(format!(
                "environment exponent: support floor must be -1, got {}",
                self.measure.support_floor
            )));
        }
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return Err(Error::Validation(format!("diffusion a must be ≥ 0, got {}", self.a)));
        }
        if !self.b.is_finite() {
            return Err(Error::Validation(format!("drift b must be finite, got {}", self.b)));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::Validation(format!("killing c must be ≥ 0, got {}", self.c)));
        }
        Ok(())
    }
}

fn require_floor_zero(measure: &JumpMeasureSpec, class: &str) -> Result<()> {
    if measure.support_floor != 0.0 {
        return Err(Error::Validation(format!(
            "{class}: support floor must be 0, got {}",
            measure.support_floor
        )));
    }
    Ok(())
}

/// `∫ (e^{-wz}-1+wz) μ(dw)` over a jump measure with support in `(0, ∞)`.
pub(crate) fn measure_compensated_eval(measure: &JumpMeasureSpec, z: f64) -> f64 {
    let mut total = 0.0;
    for at in &measure.atoms {
        total += at.mass * ((-at.location * z).exp_m1() + at.location * z);
    }
    if let Some(st) = &measure.stable {
        total += st.scale * stable_compensated_kernel(z, st.alpha);
    }
    total
}

/// `∫ (1-e^{-wz}) μ(dw)` over a jump measure with support in `(0, ∞)`.
pub(crate) fn measure_one_minus_exp_eval(measure: &JumpMeasureSpec, z: f64) -> f64 {
    let mut total = 0.0;
    for at in &measure.atoms {
        total += at.mass * (-(-at.location * z).exp_m1());
    }
    if let Some(st) = &measure.stable {
        total += st.scale * stable_subordinator_kernel(z, st.alpha);
    }
    total
}

/// `∫ w μ(dw)`, `+∞` when the stable part has `alpha ≥ 1`.
pub(crate) fn measure_first_moment(measure: &JumpMeasureSpec) -> f64 {
    let atoms: f64 = measure.atoms.iter().map(|at| at.location * at.mass).sum();
    match &measure.stable {
        None => atoms,
        Some(st) if st.alpha < 1.0 => atoms + st.scale / (1.0 - st.alpha),
        Some(_) => f64::INFINITY,
    }
}

/// `Ψ(y)` for `y ≥ 0`.
pub fn eval_splp(m: &SpLpMechanism, y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    let mut total = m.a * y * y - m.b * y - m.c;
    for at in &m.measure.atoms {
        let u = at.location;
        let compensator = if u <= 1.0 { u * y } else { 0.0 };
        total += at.mass * ((-u * y).exp_m1() + compensator);
    }
    if let Some(st) = &m.measure.stable {
        total += st.scale * stable_compensated_kernel(y, st.alpha);
    }
    total
}

/// `Φ(y)` for `y ≥ 0`.
pub fn eval_subordinator(m: &SubordinatorMechanism, y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    m.d * y + m.c + measure_one_minus_exp_eval(&m.measure, y)
}

/// `Σ(y)` for `y ≥ 0`.
pub fn eval_not_up(m: &NotUpMechanism, y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    m.a * y * y + m.d * y + measure_compensated_eval(&m.measure, y)
}

/// `κ(z)` for `z ≥ 0`.
pub fn eval_env(m: &EnvMechanism, z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    let mut total = m.a * z * z - m.b * z - m.c;
    for at in &m.measure.atoms {
        let loc = at.location;
        let compensator = if loc <= 1.0 { loc * z } else { 0.0 };
        total += at.mass * ((-loc * z).exp_m1() + compensator);
    }
    if let Some(st) = &m.measure.stable {
        total += st.scale * stable_compensated_kernel(z, st.alpha);
    }
    total
}

/// `∫_0^1 (e^{-uy}-1+uy) u^{-1-alpha} du` for `alpha ∈ (0, 2)`, relative
/// error ≤ 1e-12.
///
/// Alternating series for `y ≤ 2` (no cancellation there), the incomplete
/// gamma closed form for `y > 2`, and a dedicated formula in the sliver
/// `|alpha - 1| ≤ 1e-6` where the closed form's `1/(1-alpha)` degenerates.
pub(crate) fn stable_compensated_kernel(y: f64, alpha: f64) -> f64 {
    debug_assert!(y >= 0.0 && alpha > 0.0 && alpha < 2.0);
    if y == 0.0 {
        return 0.0;
    }
    if y <= 2.0 {
        // sum_{k>=2} (-1)^k y^k / (k! (k-alpha))
        let mut sum = 0.0;
        let mut power = y * y;
        let mut factorial = 2.0;
        let mut sign = 1.0;
        for k in 2..120 {
            let term = sign * power / (factorial * (k as f64 - alpha));
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            power *= y;
            factorial *= (k + 1) as f64;
            sign = -sign;
        }
        sum
    } else if (alpha - 1.0).abs() <= 1e-6 {
        1.0 - y - (-y).exp() + y * (EULER_GAMMA + y.ln() + exp_integral_e1(y))
    } else {
        let one_minus_exp = -(-y).exp_m1();
        -((-y).exp_m1() + y) / alpha
            + (one_minus_exp * y - y.powf(alpha) * lower_incomplete_gamma(2.0 - alpha, y))
                / (alpha * (1.0 - alpha))
    }
}

/// `∫_0^1 (1-e^{-uy}) u^{-1-alpha} du` for `alpha ∈ (0, 1)`, relative error
/// ≤ 1e-12. Series for `y ≤ 2`, incomplete gamma closed form above.
pub(crate) fn stable_subordinator_kernel(y: f64, alpha: f64) -> f64 {
    debug_assert!(y >= 0.0 && alpha > 0.0 && alpha < 1.0);
    if y == 0.0 {
        return 0.0;
    }
    if y <= 2.0 {
        // sum_{k>=1} (-1)^{k+1} y^k / (k! (k-alpha))
        let mut sum = 0.0;
        let mut power = y;
        let mut factorial = 1.0;
        let mut sign = 1.0;
        for k in 1..120 {
            let term = sign * power / (factorial * (k as f64 - alpha));
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            power *= y;
            factorial *= (k + 1) as f64;
            sign = -sign;
        }
        sum
    } else {
        (y.powf(alpha) * lower_incomplete_gamma(1.0 - alpha, y) + (-y).exp_m1()) / alpha
    }
}
