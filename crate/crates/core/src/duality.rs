//! Two-sided verification of the transform identity: Monte Carlo Laplace
//! estimators for both members of a dual pair, closed-form sides where the
//! flow machinery provides one, z-scored gap reports, and the complete
//! monotonicity and generator finite-difference checks.
//!
//! The two sides of a comparison always run on independent RNG streams;
//! coupling them would wreck the standard-error combination behind the
//! z-scores. Streams are keyed to the process kind, not the argument
//! position, so swapping the sides (with the transposed grid and
//! convention) reproduces the same numbers with the opposite sign.

use crate::flows::{cb_flow, cb_flow_killed, cb_laplace, cbi_laplace, DEFAULT_FLOW_TOL};
use crate::mechanisms::{eval_subordinator, SpLpMechanism, SubordinatorMechanism};
use crate::paths::{run_paths, ProcessSpec, SimConfig};
use crate::rng::mix_seed;
use crate::symbols::{
    exp_conv, pregenerator_apply, ConventionPair, InfZeroConvention, LdsSymbol,
    ZeroInfConvention,
};
use crate::{Error, Result};

/// One side's Monte Carlo estimate of a boundary-aware Laplace functional.
/// The scored values live in `[0,1]`, so `stderr ≤ 0.5/√n` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    /// Fraction of paths with terminal value exactly 0.
    pub frac_zero: f64,
    /// Fraction of paths with terminal value `∞`.
    pub frac_inf: f64,
}

/// One side of a duality row: a closed-form value (standard error zero) or
/// a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SideValue {
    Analytic(f64),
    Estimated(McEstimate),
}

impl SideValue {
    pub fn mean(&self) -> f64 {
        match self {
            SideValue::Analytic(v) => *v,
            SideValue::Estimated(e) => e.mean,
        }
    }

    pub fn stderr(&self) -> f64 {
        match self {
            SideValue::Analytic(_) => 0.0,
            SideValue::Estimated(e) => e.stderr,
        }
    }
}

/// One grid cell of a duality comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityRow {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub left: SideValue,
    pub right: SideValue,
    /// `left − right`.
    pub gap: f64,
    /// `gap / √(se_left² + se_right²)`; when both sides are exact the row
    /// is an identity check and z is 0 for a zero gap, `±∞` otherwise.
    pub z: f64,
}

/// All grid cells of one duality comparison plus the summary statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub rows: Vec<DualityRow>,
    pub convention: ConventionPair,
    pub worst_abs_z: f64,
}

impl DualityReport {
    /// CSV serialization, one line per grid cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,t,left_mean,left_se,right_mean,right_se,gap,z\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.x,
                row.y,
                row.t,
                row.left.mean(),
                row.left.stderr(),
                row.right.mean(),
                row.right.stderr(),
                row.gap,
                row.z,
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!("worst_abs_z = {}", self.worst_abs_z)
    }
}

fn check_transform_argument(v: f64) -> Result<()> {
    if v.is_nan() || v < 0.0 {
        return Err(Error::Contract(format!(
            "transform argument must be in [0,∞], got {v}"
        )));
    }
    Ok(())
}

fn check_start_state(v: f64) -> Result<()> {
    if v.is_nan() || v < 0.0 {
        return Err(Error::Contract(format!(
            "start state must be in [0,∞], got {v}"
        )));
    }
    Ok(())
}

/// Estimates `E_x[exp_conv(X_t, y)]` by simulating `cfg.paths` paths of
/// `spec` from `x0` up to `t`. Boundary terminals are scored through
/// `exp_conv`, so the convention choice decides the ambiguous corners.
pub fn mc_laplace(
    spec: &ProcessSpec,
    x0: f64,
    y: f64,
    t: f64,
    cfg: &SimConfig,
    conv: ConventionPair,
) -> Result<McEstimate> {
    check_start_state(x0)?;
    check_transform_argument(y)?;
    if t.is_nan() || t < 0.0 || t.is_infinite() {
        return Err(Error::Contract(format!(
            "horizon must be finite nonnegative, got {t}"
        )));
    }
    if t == 0.0 {
        spec.validate()?;
        cfg.validate()?;
        return Ok(McEstimate {
            mean: exp_conv(x0, y, conv),
            stderr: 0.0,
            n: cfg.paths,
            frac_zero: if x0 == 0.0 { 1.0 } else { 0.0 },
            frac_inf: if x0.is_infinite() { 1.0 } else { 0.0 },
        });
    }
    let mut run_cfg = *cfg;
    run_cfg.horizon = t;
    run_cfg.step = cfg.step.min(t / 2.0);
    let terminals = run_paths(spec, x0, &run_cfg)?;

    let n = terminals.len();
    let mut zeros = 0usize;
    let mut infs = 0usize;
    let mut scores = Vec::with_capacity(n);
    for term in &terminals {
        if term.value == 0.0 {
            zeros += 1;
        } else if term.value.is_infinite() {
            infs += 1;
        }
        scores.push(exp_conv(term.value, y, conv));
    }
    // a degenerate sample is reported exactly, not through a rounding sum
    let first = scores[0];
    let (mean, var) = if scores.iter().all(|&s| s == first) {
        (first, 0.0)
    } else {
        let mean = scores.iter().sum::<f64>() / n as f64;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        (mean, var)
    };
    Ok(McEstimate {
        mean,
        stderr: (var / n as f64).sqrt(),
        n,
        frac_zero: zeros as f64 / n as f64,
        frac_inf: infs as f64 / n as f64,
    })
}

/// Closed form for `E_x[exp_conv(X_t, y)]` when `X` is a branching process
/// without collisions: `e^{−x·u_t(y)}` through the flow in the interior,
/// corner rows where every terminal scores the same constant.
fn cb_transform(
    psi: &SpLpMechanism,
    x: f64,
    y: f64,
    t: f64,
    conv: ConventionPair,
) -> Result<Option<f64>> {
    if y == 0.0 {
        // finite terminals score 1; paths sent to ∞ score the corner. The
        // representable jump families keep finite mass and finite mean
        // beyond the compensation window, so only killing reaches ∞.
        return Ok(match conv.inf_zero {
            InfZeroConvention::InfMinusZero => Some(1.0),
            InfZeroConvention::InfZeroPlus if psi.c == 0.0 => Some(1.0),
            InfZeroConvention::InfZeroPlus => None,
        });
    }
    if y.is_infinite() {
        // positive and infinite terminals both score 0, extinct ones the
        // corner; only the vanishing corner closes the row
        return Ok(match conv.zero_inf {
            ZeroInfConvention::ZeroPlusInf => Some(0.0),
            ZeroInfConvention::ZeroInfMinus => None,
        });
    }
    Ok(Some(cb_laplace(psi, x, y, t)?))
}

/// Mirror of [`cb_transform`] for a branching process in the second slot,
/// scoring `E^y[exp_conv(x, Y_t)]`; the corner roles swap accordingly.
fn cb_transform_mirror(
    psi: &SpLpMechanism,
    x: f64,
    y: f64,
    t: f64,
    conv: ConventionPair,
) -> Result<Option<f64>> {
    if x == 0.0 {
        return Ok(match conv.zero_inf {
            ZeroInfConvention::ZeroInfMinus => Some(1.0),
            ZeroInfConvention::ZeroPlusInf if psi.c == 0.0 => Some(1.0),
            ZeroInfConvention::ZeroPlusInf => None,
        });
    }
    if x.is_infinite() {
        return Ok(match conv.inf_zero {
            InfZeroConvention::InfZeroPlus => Some(0.0),
            InfZeroConvention::InfMinusZero => None,
        });
    }
    Ok(Some(cb_laplace(psi, y, x, t)?))
}

/// Closed form for the side that runs `spec` from `x` and scores
/// `exp_conv(X_t, y)`; `None` when no exact expression is available and
/// the caller must fall back to Monte Carlo.
pub fn analytic_left(
    spec: &ProcessSpec,
    x: f64,
    y: f64,
    t: f64,
    conv: ConventionPair,
) -> Result<Option<f64>> {
    check_start_state(x)?;
    check_transform_argument(y)?;
    if x.is_infinite() {
        return Ok(Some(exp_conv(f64::INFINITY, y, conv)));
    }
    let value = match spec {
        ProcessSpec::Cb { psi } => cb_transform(psi, x, y, t, conv)?,
        ProcessSpec::Cbc { psi, sigma } if sigma.is_zero() => cb_transform(psi, x, y, t, conv)?,
        ProcessSpec::Subordinator { phi } => {
            let survive = survival_weight(phi, y, t);
            Some(
                exp_conv(x, y, conv) * survive
                    + exp_conv(f64::INFINITY, y, conv) * (1.0 - survive),
            )
        }
        ProcessSpec::KilledConstant { phi } => {
            let survive = survival_weight(phi, x, t);
            Some(
                exp_conv(x, y, conv) * survive
                    + exp_conv(f64::INFINITY, y, conv) * (1.0 - survive),
            )
        }
        ProcessSpec::DeterministicFlow { psi } => {
            flow_point(psi, None, x, t)?.map(|(u, _)| exp_conv(u, y, conv))
        }
        ProcessSpec::DiffusionDual { sigma, psi } if sigma.is_zero() => {
            flow_point(psi, None, x, t)?.map(|(u, _)| exp_conv(u, y, conv))
        }
        ProcessSpec::KilledFlow { psi, phi } => flow_point(psi, Some(phi), x, t)?
            .map(|(u, w)| w * exp_conv(u, y, conv) + (1.0 - w) * exp_conv(f64::INFINITY, y, conv)),
        ProcessSpec::CbciDual { sigma, psi, phi } if sigma.is_zero() => {
            flow_point(psi, Some(phi), x, t)?.map(|(u, w)| {
                w * exp_conv(u, y, conv) + (1.0 - w) * exp_conv(f64::INFINITY, y, conv)
            })
        }
        ProcessSpec::Cbci { psi, sigma, phi } if sigma.is_zero() => {
            if y > 0.0 && y.is_finite() {
                Some(cbi_laplace(psi, phi, x, y, t)?)
            } else {
                None
            }
        }
        _ => None,
    };
    Ok(value)
}

/// Closed form for the side that runs `spec` from `y` and scores
/// `exp_conv(x, Y_t)`; the mirror image of [`analytic_left`].
pub fn analytic_right(
    spec: &ProcessSpec,
    x: f64,
    y: f64,
    t: f64,
    conv: ConventionPair,
) -> Result<Option<f64>> {
    check_transform_argument(x)?;
    check_start_state(y)?;
    if y.is_infinite() {
        return Ok(Some(exp_conv(x, f64::INFINITY, conv)));
    }
    let value = match spec {
        ProcessSpec::Cb { psi } => cb_transform_mirror(psi, x, y, t, conv)?,
        ProcessSpec::Cbc { psi, sigma } if sigma.is_zero() => {
            cb_transform_mirror(psi, x, y, t, conv)?
        }
        ProcessSpec::Subordinator { phi } => {
            let survive = survival_weight(phi, x, t);
            Some(
                exp_conv(x, y, conv) * survive
                    + exp_conv(x, f64::INFINITY, conv) * (1.0 - survive),
            )
        }
        ProcessSpec::KilledConstant { phi } => {
            let survive = survival_weight(phi, y, t);
            Some(
                exp_conv(x, y, conv) * survive
                    + exp_conv(x, f64::INFINITY, conv) * (1.0 - survive),
            )
        }
        ProcessSpec::DeterministicFlow { psi } => {
            flow_point(psi, None, y, t)?.map(|(u, _)| exp_conv(x, u, conv))
        }
        ProcessSpec::DiffusionDual { sigma, psi } if sigma.is_zero() => {
            flow_point(psi, None, y, t)?.map(|(u, _)| exp_conv(x, u, conv))
        }
        ProcessSpec::KilledFlow { psi, phi } => flow_point(psi, Some(phi), y, t)?
            .map(|(u, w)| w * exp_conv(x, u, conv) + (1.0 - w) * exp_conv(x, f64::INFINITY, conv)),
        ProcessSpec::CbciDual { sigma, psi, phi } if sigma.is_zero() => {
            flow_point(psi, Some(phi), y, t)?.map(|(u, w)| {
                w * exp_conv(x, u, conv) + (1.0 - w) * exp_conv(x, f64::INFINITY, conv)
            })
        }
        ProcessSpec::Cbci { psi, sigma, phi } if sigma.is_zero() => {
            if x > 0.0 && x.is_finite() {
                Some(cbi_laplace(psi, phi, y, x, t)?)
            } else {
                None
            }
        }
        _ => None,
    };
    Ok(value)
}

/// `e^{−tΦ(v)}`. For a frozen state killed at rate `Φ(v)` this is the
/// survival probability; for a moving subordinator scored at `v` it is
/// the transform factor, and the two readings agree cell by cell because
/// `Φ(0)` is exactly the killing constant and the `v = ∞` limit collapses
/// the jump and killing weights together.
fn survival_weight(phi: &SubordinatorMechanism, v: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let rate = if v.is_infinite() {
        phi.limit_at_infinity()
    } else {
        eval_subordinator(phi, v)
    };
    (-t * rate).exp()
}

/// Terminal `(u_t(v), survival weight)` of the (killed) flow; `None` when
/// the flow would leave a start at 0, which the path layer rejects.
fn flow_point(
    psi: &SpLpMechanism,
    phi: Option<&SubordinatorMechanism>,
    v: f64,
    t: f64,
) -> Result<Option<(f64, f64)>> {
    if v == 0.0 {
        if psi.c != 0.0 {
            return Ok(None);
        }
        let weight = match phi {
            Some(phi) => (-t * phi.c).exp(),
            None => 1.0,
        };
        return Ok(Some((0.0, weight)));
    }
    let flow = match phi {
        Some(phi) => cb_flow_killed(psi, phi, v, t, DEFAULT_FLOW_TOL)?,
        None => cb_flow(psi, v, t, DEFAULT_FLOW_TOL)?,
    };
    let u = if flow.blow_up { f64::INFINITY } else { flow.u };
    Ok(Some((u, flow.killed_weight)))
}

/// Stream tag for the side running `spec`, keyed to the kind's position
/// in its dual pair so the harness is symmetric under side swaps; pairs
/// where both members share a kind fall back to positional tags.
fn side_tag(spec: &ProcessSpec) -> Option<u64> {
    match spec {
        ProcessSpec::Cb { .. }
        | ProcessSpec::Subordinator { .. }
        | ProcessSpec::Cbc { .. }
        | ProcessSpec::Cbci { .. }
        | ProcessSpec::Cbre { .. } => Some(1),
        ProcessSpec::DeterministicFlow { .. }
        | ProcessSpec::KilledConstant { .. }
        | ProcessSpec::DiffusionDual { .. }
        | ProcessSpec::CbciDual { .. }
        | ProcessSpec::CbreDual { .. }
        | ProcessSpec::KilledFlow { .. } => Some(2),
        ProcessSpec::Decomposable { .. } => None,
    }
}

fn recognized_pairing(spec_x: &ProcessSpec, spec_y: &ProcessSpec) -> bool {
    spec_x.dual() == *spec_y || spec_y.dual() == *spec_x || spec_x == spec_y
}

/// Compares both sides of the transform identity over a grid of
/// `(x, y, t)` cells: the left side runs `spec_x` from `x` and scores
/// against `y`, the right side runs `spec_y` from `y` and scores against
/// `x`. Closed forms replace simulation when the matching flag is set and
/// one exists for the cell.
pub fn duality_gap(
    spec_x: &ProcessSpec,
    spec_y: &ProcessSpec,
    grid: &[(f64, f64, f64)],
    cfg: &SimConfig,
    conv: ConventionPair,
    analytic_x: bool,
    analytic_y: bool,
) -> Result<DualityReport> {
    spec_x.validate()?;
    spec_y.validate()?;
    cfg.validate()?;
    if !recognized_pairing(spec_x, spec_y) {
        return Err(Error::Contract(
            "the two specs do not form a recognized dual pairing".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Contract("duality grid must be nonempty".into()));
    }
    let (tag_left, tag_right) = match (side_tag(spec_x), side_tag(spec_y)) {
        (Some(a), Some(b)) if a != b => (a, b),
        _ => (3, 4),
    };
    let mut cfg_left = *cfg;
    cfg_left.seed = mix_seed(cfg.seed, tag_left);
    let mut cfg_right = *cfg;
    cfg_right.seed = mix_seed(cfg.seed, tag_right);

    let mut rows = Vec::with_capacity(grid.len());
    let mut worst: f64 = 0.0;
    for &(x, y, t) in grid {
        let left = match if analytic_x { analytic_left(spec_x, x, y, t, conv)? } else { None } {
            Some(v) => SideValue::Analytic(v),
            None => SideValue::Estimated(mc_laplace(spec_x, x, y, t, &cfg_left, conv)?),
        };
        // the right side scores exp_conv(x, Y_t); through transposition
        // that is the left-oriented estimator under the transposed pair
        let right = match if analytic_y { analytic_right(spec_y, x, y, t, conv)? } else { None } {
            Some(v) => SideValue::Analytic(v),
            None => SideValue::Estimated(mc_laplace(
                spec_y,
                y,
                x,
                t,
                &cfg_right,
                conv.transposed(),
            )?),
        };
        let gap = left.mean() - right.mean();
        let se = left.stderr().hypot(right.stderr());
        let z = if se > 0.0 {
            gap / se
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(gap)
        };
        worst = worst.max(z.abs());
        rows.push(DualityRow { x, y, t, left, right, gap, z });
    }
    Ok(DualityReport { rows, convention: conv, worst_abs_z: worst })
}

/// One violated alternating-difference constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmViolation {
    /// Difference order `k` of the failed constraint.
    pub order: usize,
    /// Index of the leftmost sample entering the failed difference.
    pub index: usize,
    /// The offending value of `(−1)^k Δᵏf`.
    pub signed_difference: f64,
    /// The lower bound it crossed, `−noise·2ᵏ`.
    pub tolerance: f64,
}

/// Outcome of a complete-monotonicity surrogate check.
#[derive(Debug, Clone, PartialEq)]
pub struct CmReport {
    pub passed: bool,
    pub first_violation: Option<CmViolation>,
}

/// Checks `(−1)^k Δᵏf ≥ −noise·2ᵏ` for `k = 1..=order` over samples of a
/// putative completely monotone function; forward differences amplify
/// pointwise noise by at most `2ᵏ` in sup norm, hence the tolerance
/// schedule.
pub fn cm_check(samples: &[(f64, f64)], order: usize, noise: f64) -> Result<CmReport> {
    if order == 0 {
        return Err(Error::Contract("difference order must be ≥ 1".into()));
    }
    if samples.len() < order + 1 {
        return Err(Error::Contract(format!(
            "need at least {} samples for order {}, got {}",
            order + 1,
            order,
            samples.len()
        )));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::Contract(format!(
            "noise must be finite nonnegative, got {noise}"
        )));
    }
    if samples.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::Contract(
            "sample abscissae must be strictly increasing".into(),
        ));
    }

    let mut diffs: Vec<f64> = samples.iter().map(|&(_, v)| v).collect();
    let mut sign = 1.0;
    for k in 1..=order {
        sign = -sign;
        for i in 0..diffs.len() - 1 {
            diffs[i] = diffs[i + 1] - diffs[i];
        }
        diffs.truncate(diffs.len() - 1);
        let tolerance = -noise * 2f64.powi(k as i32);
        for (i, &d) in diffs.iter().enumerate() {
            if sign * d < tolerance {
                return Ok(CmReport {
                    passed: false,
                    first_violation: Some(CmViolation {
                        order: k,
                        index: i,
                        signed_difference: sign * d,
                        tolerance,
                    }),
                });
            }
        }
    }
    Ok(CmReport { passed: true, first_violation: None })
}

/// One finite-difference row of a generator check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdRow {
    pub h: f64,
    pub fd: f64,
    pub symbol: f64,
    pub gap: f64,
}

/// Compares `(P_h e^{−·y}(x) − e^{−xy})/h` against the symbol action
/// `ψ(x,y)e^{−xy}` for each `h`. The semigroup value uses the closed form
/// when one exists, Monte Carlo otherwise.
pub fn generator_fd_check(
    symbol: &LdsSymbol,
    spec: &ProcessSpec,
    x: f64,
    y: f64,
    h_list: &[f64],
    cfg: &SimConfig,
    conv: ConventionPair,
) -> Result<Vec<FdRow>> {
    let symbol_value = pregenerator_apply(symbol, x, y)?;
    let base = exp_conv(x, y, conv);
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Contract(format!(
                "step offsets must be positive, got {h}"
            )));
        }
        let p_h = match analytic_left(spec, x, y, h, conv)? {
            Some(v) => v,
            None => mc_laplace(spec, x, y, h, cfg, conv)?.mean,
        };
        let fd = (p_h - base) / h;
        rows.push(FdRow { h, fd, symbol: symbol_value, gap: (fd - symbol_value).abs() });
    }
    Ok(rows)
}
