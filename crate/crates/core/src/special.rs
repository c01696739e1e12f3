//! Small special-function helpers shared by the mechanism and symbol
//! evaluators: lower incomplete gamma, the exponential integral E1, and
//! Gauss-Legendre nodes on (0, 1).

use crate::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Lower incomplete gamma `γ(s, x) = ∫_0^x t^{s-1} e^{-t} dt` for `s > 0`.
pub fn lower_incomplete_gamma(s: f64, x: f64) -> f64 {
    statrs::function::gamma::gamma_li(s, x)
}

/// Exponential integral `E1(x) = ∫_x^∞ e^{-t}/t dt` for `x > 0`.
///
/// Series below 1.5, modified Lentz continued fraction above; both branches
/// reach full f64 accuracy on their range.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs x > 0, got {x}");
    if x < 1.5 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..=60 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum - EULER_GAMMA - x.ln()
    } else {
        // E1(x) = e^{-x} / (x + 1 - 1/(x + 3 - 4/(x + 5 - 9/(...))))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for k in 1..200 {
            let a = -((k * k) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let delta = c * d;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x).exp() * h
    }
}

/// Gauss-Legendre nodes and weights transplanted to the open interval (0, 1).
///
/// Nodes come from Newton iteration on the Legendre polynomial recurrence,
/// accurate to machine precision for the node counts used here (≤ 1024).
pub fn gauss_legendre_01(n: usize) -> Result<Vec<(f64, f64)>> {
    if n == 0 || n > 1024 {
        return Err(Error::Contract(format!(
            "quadrature node count must be in 1..=1024, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    let nf = n as f64;
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            pp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        out.push(((x + 1.0) / 2.0, w / 2.0));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}
