//! The deterministic branching flow `du/ds = −Ψ(u)`, `u₀ = y`, and the
//! Laplace transforms built on it: `E_x[e^{-X_t y}] = e^{-x u_t(y)}` for a
//! branching process with exponent `Ψ`, and the immigration/killing variant
//! `e^{-x u_t(y) - ∫₀ᵗ Φ(u_s(y)) ds}`.
//!
//! The flow is integrated by an adaptive Dormand-Prince 5(4) pair with
//! per-step error at most `tol`. Because `Ψ` grows at most quadratically
//! and is bounded below by an affine function, the flow cannot reach `+∞`
//! in finite time on its own; the blow-up cap converts numerically huge
//! values into the absorbing-`∞` reading. The survival integral is
//! accumulated on the same accepted mesh by Simpson's rule, with midpoints
//! from a half-size classical Runge-Kutta step.

use crate::mechanisms::{eval_splp, eval_subordinator, SpLpMechanism, SubordinatorMechanism};
use crate::{Error, Result};

/// Default per-step tolerance used by the transform evaluators.
pub const DEFAULT_FLOW_TOL: f64 = 1e-10;

/// Flow values at or above this are treated as `∞`.
pub const BLOW_UP_CAP: f64 = 1e12;

const POSITIVITY_FLOOR: f64 = 1e-300;
const MAX_ITERATIONS: usize = 20_000_000;

/// Outcome of integrating the flow to a fixed horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    /// `u_t(y)`, `∞` when the flow exceeded the blow-up cap.
    pub u: f64,
    /// `e^{-∫₀ᵗ Φ(u_s(y)) ds}`, 1 when no killing exponent was supplied.
    pub killed_weight: f64,
    /// Accepted integrator steps.
    pub steps_used: usize,
    /// Whether the flow exceeded [`BLOW_UP_CAP`] before the horizon.
    pub blow_up: bool,
}

struct DormandPrince<'a> {
    psi: &'a SpLpMechanism,
}

impl DormandPrince<'_> {
    fn slope(&self, u: f64) -> f64 {
        // stage values may poke slightly below 0 or above the cap; the
        // exponent is only defined on [0,∞) so clamp before evaluating
        -eval_splp(self.psi, u.max(0.0))
    }

    /// One trial step: 5th-order value, embedded error estimate, midpoint
    /// slope for the caller's quadrature.
    fn step(&self, u: f64, h: f64) -> (f64, f64) {
        let k1 = self.slope(u);
        let k2 = self.slope(u + h * (k1 / 5.0));
        let k3 = self.slope(u + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
        let k4 = self.slope(u + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3));
        let k5 = self.slope(
            u + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2 + 64448.0 / 6561.0 * k3
                - 212.0 / 729.0 * k4),
        );
        let k6 = self.slope(
            u + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 + 46732.0 / 5247.0 * k3
                + 49.0 / 176.0 * k4
                - 5103.0 / 18656.0 * k5),
        );
        let fifth = u
            + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4
                - 2187.0 / 6784.0 * k5
                + 11.0 / 84.0 * k6);
        let k7 = self.slope(fifth);
        let fourth = u
            + h * (5179.0 / 57600.0 * k1 + 7571.0 / 16695.0 * k3 + 393.0 / 640.0 * k4
                - 92097.0 / 339200.0 * k5
                + 187.0 / 2100.0 * k6
                + k7 / 40.0);
        (fifth, (fifth - fourth).abs())
    }

    /// Classical fourth-order step, used only to place Simpson midpoints.
    fn rk4_step(&self, u: f64, h: f64) -> f64 {
        let k1 = self.slope(u);
        let k2 = self.slope(u + h / 2.0 * k1);
        let k3 = self.slope(u + h / 2.0 * k2);
        let k4 = self.slope(u + h * k3);
        u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }
}

fn flow_core(
    psi: &SpLpMechanism,
    phi: Option<&SubordinatorMechanism>,
    y: f64,
    t: f64,
    tol: f64,
) -> Result<FlowResult> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::Contract(format!("flow needs y in (0,∞), got {y}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Contract(format!("flow needs t in [0,∞), got {t}")));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::Contract(format!("flow needs tol > 0, got {tol}")));
    }
    let rate = |u: f64| phi.map_or(0.0, |p| eval_subordinator(p, u));
    let mut kill_integral = 0.0f64;
    if t == 0.0 {
        return Ok(FlowResult { u: y, killed_weight: 1.0, steps_used: 0, blow_up: false });
    }

    let solver = DormandPrince { psi };
    let mut u = y;
    let mut s = 0.0;
    let mut steps_used = 0usize;
    let initial_slope = solver.slope(y).abs();
    let mut h = (t * 1e-3).min(0.1 * (1.0 + y) / (1.0 + initial_slope)).min(t);

    for _ in 0..MAX_ITERATIONS {
        if s >= t {
            return Ok(FlowResult {
                u,
                killed_weight: (-kill_integral).exp(),
                steps_used,
                blow_up: false,
            });
        }
        h = h.min(t - s);
        if h < 1e-14 * t.max(1.0) {
            return Err(Error::Stiffness(format!(
                "step size underflow at s={s} (u={u}, h={h})"
            )));
        }
        let (next, err) = solver.step(u, h);
        if !err.is_finite() || err > tol {
            let shrink = if err.is_finite() {
                (0.9 * (tol / err).powf(0.2)).max(0.2)
            } else {
                0.2
            };
            h *= shrink;
            continue;
        }
        if phi.is_some() {
            let mid = solver.rk4_step(u, h / 2.0);
            kill_integral += h / 6.0 * (rate(u) + 4.0 * rate(mid.max(0.0)) + rate(next.max(0.0)));
        }
        u = next.max(POSITIVITY_FLOOR);
        s += h;
        steps_used += 1;
        if u >= BLOW_UP_CAP {
            let remaining = t - s;
            if remaining > 0.0 {
                kill_integral += remaining * phi.map_or(0.0, |p| p.limit_at_infinity());
            }
            return Ok(FlowResult {
                u: f64::INFINITY,
                killed_weight: (-kill_integral).exp(),
                steps_used,
                blow_up: true,
            });
        }
        h *= (0.9 * (tol / err.max(1e-30)).powf(0.2)).clamp(0.2, 5.0);
    }
    Err(Error::Stiffness(format!("no convergence within {MAX_ITERATIONS} iterations")))
}

/// `u_t(y)`: the solution of `du/ds = −Ψ(u)`, `u₀ = y`, at time `t`.
pub fn cb_flow(psi: &SpLpMechanism, y: f64, t: f64, tol: f64) -> Result<FlowResult> {
    flow_core(psi, None, y, t, tol)
}

/// The flow together with the survival factor `e^{-∫₀ᵗ Φ(u_s(y)) ds}`.
pub fn cb_flow_killed(
    psi: &SpLpMechanism,
    phi: &SubordinatorMechanism,
    y: f64,
    t: f64,
    tol: f64,
) -> Result<FlowResult> {
    flow_core(psi, Some(phi), y, t, tol)
}

/// `E_x[e^{-X_t y}] = e^{-x u_t(y)}` for the branching process with
/// exponent `Ψ` started at `x`; 0 when the flow blows up and `x > 0`.
pub fn cb_laplace(psi: &SpLpMechanism, x: f64, y: f64, t: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Contract(format!("cb_laplace needs x ≥ 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let flow = cb_flow(psi, y, t, DEFAULT_FLOW_TOL)?;
    if flow.blow_up {
        return Ok(if x > 0.0 { 0.0 } else { 1.0 });
    }
    Ok((-x * flow.u).exp())
}

/// `e^{-x u_t(y) - ∫₀ᵗ Φ(u_s(y)) ds}`: the transform of the branching
/// process with immigration/killing pair `(Ψ, Φ)`.
pub fn cbi_laplace(
    psi: &SpLpMechanism,
    phi: &SubordinatorMechanism,
    x: f64,
    y: f64,
    t: f64,
) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Contract(format!("cbi_laplace needs x ≥ 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let flow = cb_flow_killed(psi, phi, y, t, DEFAULT_FLOW_TOL)?;
    if flow.blow_up {
        return Ok(if x > 0.0 { 0.0 } else { flow.killed_weight });
    }
    Ok((-x * flow.u).exp() * flow.killed_weight)
}

/// `|u_{t+s}(y) − u_t(u_s(y))|`, the defect in the flow property. Both
/// routes use the default tolerance; two blow-ups count as agreement.
pub fn flow_semigroup_gap(psi: &SpLpMechanism, y: f64, t: f64, s: f64) -> Result<f64> {
    let direct = cb_flow(psi, y, t + s, DEFAULT_FLOW_TOL)?;
    let inner = cb_flow(psi, y, s, DEFAULT_FLOW_TOL)?;
    if inner.blow_up {
        return Ok(if direct.blow_up { 0.0 } else { f64::INFINITY });
    }
    let outer = cb_flow(psi, inner.u, t, DEFAULT_FLOW_TOL)?;
    if direct.blow_up || outer.blow_up {
        return Ok(if direct.blow_up && outer.blow_up { 0.0 } else { f64::INFINITY });
    }
    Ok((direct.u - outer.u).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{Atom, JumpMeasureSpec, StablePart};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn feller() -> SpLpMechanism {
        SpLpMechanism { a: 1.0, ..SpLpMechanism::zero() }
    }

    fn linear_growth() -> SpLpMechanism {
        // Ψ(u) = −u, so the flow is du/ds = u
        SpLpMechanism { b: 1.0, ..SpLpMechanism::zero() }
    }

    #[test]
    fn constant_flow_stays_put() {
        let r = cb_flow(&SpLpMechanism::zero(), 5.0, 7.0, 1e-10).unwrap();
        assert_eq!(r.u, 5.0);
        assert_eq!(r.killed_weight, 1.0);
        assert!(!r.blow_up);
        assert!(r.steps_used > 0);
    }

    #[test]
    fn feller_flow_closed_form() {
        // u_t(y) = y/(1+ty)
        let r = cb_flow(&feller(), 1.0, 1.0, 1e-10).unwrap();
        assert!((r.u - 0.5).abs() <= 1e-9, "u = {}", r.u);
        let r = cb_flow(&feller(), 2.0, 3.0, 1e-10).unwrap();
        assert!((r.u - 2.0 / 7.0).abs() <= 1e-9);
    }

    #[test]
    fn linear_flow_closed_form() {
        let r = cb_flow(&linear_growth(), 1.0, std::f64::consts::LN_2, 1e-10).unwrap();
        assert!((r.u - 2.0).abs() <= 1e-9, "u = {}", r.u);
    }

    #[test]
    fn zero_horizon_returns_initial_value() {
        let r = cb_flow(&feller(), 3.0, 0.0, 1e-10).unwrap();
        assert_eq!(r.u, 3.0);
        assert_eq!(r.steps_used, 0);
    }

    #[test]
    fn cb_laplace_examples() {
        assert_relative_eq!(
            cb_laplace(&feller(), 2.0, 1.0, 1.0).unwrap(),
            0.36787944117144232160,
            max_relative = 1e-8
        );
        assert_eq!(cb_laplace(&feller(), 0.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(cb_laplace(&feller(), 1.5, 2.0, 0.0).unwrap(), (-3.0f64).exp());
    }

    #[test]
    fn cbi_laplace_reduces_to_cb_laplace_without_immigration() {
        let phi = SubordinatorMechanism::zero();
        for (x, y, t) in [(2.0, 1.0, 1.0), (0.5, 3.0, 0.7), (0.0, 1.0, 2.0)] {
            assert_eq!(
                cbi_laplace(&feller(), &phi, x, y, t).unwrap(),
                cb_laplace(&feller(), x, y, t).unwrap()
            );
        }
    }

    #[test]
    fn cbi_laplace_constant_flow_drift_immigration() {
        // u_s ≡ 1 and Φ(u) = u, so the survival exponent is exactly t
        let phi = SubordinatorMechanism {
            d: 1.0,
            ..SubordinatorMechanism::zero()
        };
        assert_relative_eq!(
            cbi_laplace(&SpLpMechanism::zero(), &phi, 0.0, 1.0, 2.0).unwrap(),
            0.13533528323661269189,
            max_relative = 1e-9
        );
    }

    #[test]
    fn cbi_laplace_growing_flow_drift_immigration() {
        // u_s = e^s, ∫₀¹ e^s ds = e − 1
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        assert_relative_eq!(
            cbi_laplace(&linear_growth(), &phi, 0.0, 1.0, 1.0).unwrap(),
            0.17937407873401718196,
            max_relative = 1e-8
        );
    }

    #[test]
    fn killed_weight_on_frozen_flow_is_exponential_in_time() {
        let phi = SubordinatorMechanism {
            measure: JumpMeasureSpec::from_atoms(0.0, vec![Atom::new(1.0, 0.5)]),
            ..SubordinatorMechanism::zero()
        };
        // Φ(1) = 0.5·(1 − e^{−1})
        let rate = 0.5f64 * 0.63212055882855767840;
        let r = cb_flow_killed(&SpLpMechanism::zero(), &phi, 1.0, 2.0, 1e-10).unwrap();
        assert_relative_eq!(r.killed_weight, (-2.0 * rate).exp(), max_relative = 1e-9);
        assert!(r.killed_weight > 0.0 && r.killed_weight < 1.0);
    }

    #[test]
    fn semigroup_gap_examples() {
        assert_eq!(flow_semigroup_gap(&SpLpMechanism::zero(), 1.0, 2.0, 3.0).unwrap(), 0.0);
        assert!(flow_semigroup_gap(&feller(), 1.0, 0.5, 0.5).unwrap() <= 1e-8);
        assert!(flow_semigroup_gap(&linear_growth(), 1.0, 1.0, 1.0).unwrap() <= 1e-8);
    }

    #[test]
    fn branching_identity_is_multiplicative() {
        let psi = SpLpMechanism::new(
            JumpMeasureSpec {
                atoms: vec![Atom::new(0.5, 0.8), Atom::new(2.0, 0.1)],
                stable: Some(StablePart { alpha: 1.3, scale: 0.4 }),
                support_floor: 0.0,
            },
            0.6,
            0.2,
            0.0,
        )
        .unwrap();
        for (x1, x2) in [(0.5, 1.5), (2.0, 0.25), (0.0, 3.0)] {
            let product =
                cb_laplace(&psi, x1, 1.2, 0.8).unwrap() * cb_laplace(&psi, x2, 1.2, 0.8).unwrap();
            assert_relative_eq!(
                cb_laplace(&psi, x1 + x2, 1.2, 0.8).unwrap(),
                product,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn flow_monotone_in_initial_value() {
        let psi = SpLpMechanism::new(
            JumpMeasureSpec::from_atoms(0.0, vec![Atom::new(0.7, 0.5)]),
            0.8,
            -0.3,
            0.1,
        )
        .unwrap();
        for t in [0.25, 0.5, 1.0, 2.0] {
            let mut prev = 0.0;
            for y in [0.2, 0.5, 1.0, 2.0, 4.0] {
                let u = cb_flow(&psi, y, t, 1e-10).unwrap().u;
                assert!(u >= prev - 1e-9, "ordering lost at t={t}, y={y}: {u} < {prev}");
                prev = u;
            }
        }
    }

    #[test]
    fn flow_direction_follows_exponent_sign() {
        // atoms above 1 carry no compensator, so Ψ = −Σm(1−e^{−uy}) − by − c
        // is the negative of a subordinator exponent and the flow rises
        let falling_exponent = SpLpMechanism {
            measure: JumpMeasureSpec::from_atoms(0.0, vec![Atom::new(2.0, 0.7)]),
            b: 0.3,
            c: 0.1,
            ..SpLpMechanism::zero()
        };
        let mut prev = 0.0;
        for t in [0.0, 0.5, 1.0, 2.0] {
            let u = cb_flow(&falling_exponent, 1.0, t, 1e-10).unwrap().u;
            assert!(u >= prev - 1e-12, "flow not rising at t={t}");
            prev = u;
        }
        // Ψ = ay² ≥ 0 pushes the flow down
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.5, 1.0, 2.0] {
            let u = cb_flow(&feller(), 1.0, t, 1e-10).unwrap().u;
            assert!(u <= prev + 1e-12, "flow not falling at t={t}");
            prev = u;
        }
    }

    #[test]
    fn cap_converts_growth_to_absorbing_infinity() {
        let r = cb_flow(&linear_growth(), 1.0, 30.0, 1e-8).unwrap();
        assert!(r.blow_up);
        assert!(r.u.is_infinite());
        assert_eq!(cb_laplace(&linear_growth(), 1.0, 1.0, 30.0).unwrap(), 0.0);
        assert_eq!(cb_laplace(&linear_growth(), 0.0, 1.0, 30.0).unwrap(), 1.0);
        // Φ(u) = u has an infinite limit, so the killed weight collapses
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        let killed = cb_flow_killed(&linear_growth(), &phi, 1.0, 30.0, 1e-8).unwrap();
        assert_eq!(killed.killed_weight, 0.0);
    }

    #[test]
    fn flow_rejects_out_of_domain_arguments() {
        assert!(cb_flow(&feller(), 0.0, 1.0, 1e-10).is_err());
        assert!(cb_flow(&feller(), f64::INFINITY, 1.0, 1e-10).is_err());
        assert!(cb_flow(&feller(), 1.0, -1.0, 1e-10).is_err());
        assert!(cb_flow(&feller(), 1.0, 1.0, 0.0).is_err());
        assert!(cb_laplace(&feller(), -1.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn semigroup_property_on_random_exponents(
            a in 0.0f64..2.0,
            b in -1.0f64..1.0,
            loc in 0.1f64..3.0,
            mass in 0.0f64..1.0,
            y in 0.1f64..5.0,
            t in 0.0f64..1.5,
            s in 0.0f64..1.5,
        ) {
            let atoms = if mass > 1e-3 { vec![Atom::new(loc, mass)] } else { vec![] };
            let psi = SpLpMechanism {
                measure: JumpMeasureSpec::from_atoms(0.0, atoms),
                a,
                b,
                ..SpLpMechanism::zero()
            };
            prop_assert!(flow_semigroup_gap(&psi, y, t, s).unwrap() <= 1e-8);
        }

        #[test]
        fn initial_value_ordering_is_preserved(
            a in 0.0f64..2.0,
            b in -1.0f64..1.0,
            y1 in 0.1f64..4.0,
            bump in 0.1f64..2.0,
            t in 0.0f64..2.0,
        ) {
            let psi = SpLpMechanism { a, b, ..SpLpMechanism::zero() };
            let u1 = cb_flow(&psi, y1, t, 1e-10).unwrap().u;
            let u2 = cb_flow(&psi, y1 + bump, t, 1e-10).unwrap().u;
            prop_assert!(u1 <= u2 + 1e-9);
        }
    }
}
