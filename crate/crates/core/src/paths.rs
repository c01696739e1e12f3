//! Fixed-step simulation of the positive Markov processes whose transforms
//! the duality checks compare: branching processes (with collisions,
//! immigration, or a random environment), subordinators, their duals, and
//! general decomposable jump systems.
//!
//! Every stochastic kind is stepped by left-endpoint Euler: increments and
//! Poisson jump counts are drawn with all rates frozen at the step's
//! starting value. Stable jump components are truncated at a small-jump
//! cut ε: jumps in `[ε, 1]` are sampled exactly; below ε a compensated
//! route drops the (mean-zero) residual while an uncompensated route adds
//! the residual mean as drift. Boundaries are states, not errors: crossing
//! the explosion cap absorbs at `∞`, crossing the absorption floor absorbs
//! at 0 for kinds where 0 traps, and killing clocks race accumulated
//! `∫k(X_s)ds` against a unit exponential threshold, sending the path to
//! `∞` when they expire.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::flows::{cb_flow, cb_flow_killed, DEFAULT_FLOW_TOL};
use crate::mechanisms::{
    eval_not_up, eval_splp, eval_subordinator, EnvMechanism, JumpMeasureSpec, NotUpMechanism,
    SpLpMechanism, StablePart, SubordinatorMechanism,
};
use crate::rng::path_rng;
use crate::{Error, Result};

pub const DEFAULT_EXPLOSION_CAP: f64 = 1e12;
pub const DEFAULT_SMALL_JUMP_CUT: f64 = 1e-3;

/// Euler overshoot below 0 is a scheme artifact for kinds with a Gaussian
/// term; they absorb at this floor even when the configured floor is 0.
const DIFFUSIVE_FLOOR: f64 = 1e-12;

/// Above this many jumps in one step the sampled sum is replaced by its
/// normal approximation.
const MAX_SAMPLED_JUMPS: f64 = 1e6;

/// Discretization and budget knobs shared by all simulations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub explosion_cap: f64,
    pub small_jump_cut: f64,
    pub absorption_floor: f64,
}

impl SimConfig {
    pub fn new(step: f64, horizon: f64, paths: usize, seed: u64) -> Self {
        Self {
            step,
            horizon,
            paths,
            seed,
            explosion_cap: DEFAULT_EXPLOSION_CAP,
            small_jump_cut: DEFAULT_SMALL_JUMP_CUT,
            absorption_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Validation(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon > self.step) || !self.horizon.is_finite() {
            return Err(Error::Validation(format!(
                "horizon must exceed the step, got step {} horizon {}",
                self.step, self.horizon
            )));
        }
        if self.paths == 0 {
            return Err(Error::Validation("paths must be ≥ 1".into()));
        }
        if !(self.small_jump_cut > 0.0 && self.small_jump_cut <= 1.0) {
            return Err(Error::Validation(format!(
                "small_jump_cut must lie in (0,1], got {}",
                self.small_jump_cut
            )));
        }
        if !(self.explosion_cap > 0.0) || !self.explosion_cap.is_finite() {
            return Err(Error::Validation(format!(
                "explosion_cap must be positive, got {}",
                self.explosion_cap
            )));
        }
        if !(self.absorption_floor >= 0.0)
            || !self.absorption_floor.is_finite()
            || self.absorption_floor >= self.explosion_cap
        {
            return Err(Error::Validation(format!(
                "absorption_floor must be in [0, explosion_cap), got {}",
                self.absorption_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    Alive,
    AbsorbedZero,
    AbsorbedInf,
}

impl std::fmt::Display for PathStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PathStatus::Alive => "alive",
            PathStatus::AbsorbedZero => "absorbed_zero",
            PathStatus::AbsorbedInf => "absorbed_inf",
        })
    }
}

/// One path's running state: value, absorption status, and the killing
/// race between the accumulated rate integral and an Exp(1) threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub value: f64,
    pub status: PathStatus,
    pub kill_clock: f64,
    pub kill_threshold: f64,
}

impl PathState {
    pub fn new(value: f64, kill_threshold: f64) -> Self {
        Self { value, status: PathStatus::Alive, kill_clock: 0.0, kill_threshold }
    }
}

/// Terminal value and status of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    pub value: f64,
    pub status: PathStatus,
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub path: usize,
    pub t: f64,
    pub value: f64,
    pub status: PathStatus,
}

/// A compensated jump pair for decomposable systems: `rate` evaluated at
/// the current state scales fully compensated jumps drawn from `jumps`
/// (its `a` becomes state-scaled Gaussian noise, its `d` downward drift).
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedPair {
    pub rate: NotUpMechanism,
    pub jumps: NotUpMechanism,
}

/// An uncompensated jump pair: `rate` evaluated at the current state
/// scales raw upward jumps from `jumps` (its `d` becomes upward drift,
/// its `c` a killing rate).
#[derive(Debug, Clone, PartialEq)]
pub struct UncompensatedPair {
    pub rate: SubordinatorMechanism,
    pub jumps: SubordinatorMechanism,
}

/// Every simulated process kind, carrying its driving mechanisms.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessSpec {
    /// Branching: noise `√(2aX)`, drift `bX`, jumps at rate `X·ν`,
    /// killing at rate `cX`.
    Cb { psi: SpLpMechanism },
    /// Lévy subordinator: drift `d`, raw jumps at constant rate,
    /// killing at rate `c`.
    Subordinator { phi: SubordinatorMechanism },
    /// Dual of the subordinator: frozen at `y0`, killed at the constant
    /// rate `Φ(y0)`.
    KilledConstant { phi: SubordinatorMechanism },
    /// Dual of branching: the deterministic flow `du/ds = −Ψ(u)`.
    DeterministicFlow { psi: SpLpMechanism },
    /// Dual of branching-with-immigration: the flow killed at rate
    /// `Φ(u_s)`.
    KilledFlow { psi: SpLpMechanism, phi: SubordinatorMechanism },
    /// Branching plus collisions: the collision mechanism acts at rate
    /// `X²` with all jumps compensated.
    Cbc { psi: SpLpMechanism, sigma: NotUpMechanism },
    /// Dual of branching-with-collisions: `dY = −Ψ(Y)ds + √(2Σ(Y)) dW`.
    DiffusionDual { sigma: NotUpMechanism, psi: SpLpMechanism },
    /// Branching, collisions, and state-independent immigration; 0 does
    /// not trap because immigration restarts the path.
    Cbci { psi: SpLpMechanism, sigma: NotUpMechanism, phi: SubordinatorMechanism },
    /// Dual of the previous: the diffusion dual killed at rate `Φ(Y)`.
    CbciDual { sigma: NotUpMechanism, psi: SpLpMechanism, phi: SubordinatorMechanism },
    /// Branching in a random environment: multiplicative jumps
    /// `X → X(1+m)`, environment noise `√(2ã)X`, drift `b̃X`.
    Cbre { psi: SpLpMechanism, kappa: EnvMechanism },
    /// Dual of the previous: drift `−Ψ(Y)` under the same environment law.
    CbreDual { psi: SpLpMechanism, kappa: EnvMechanism },
    /// A sum of compensated and uncompensated pairs; the dual swaps the
    /// roles inside every pair.
    Decomposable { compensated: Vec<CompensatedPair>, uncompensated: Vec<UncompensatedPair> },
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProcessSpec::Cb { psi } | ProcessSpec::DeterministicFlow { psi } => psi.validate(),
            ProcessSpec::Subordinator { phi } | ProcessSpec::KilledConstant { phi } => {
                phi.validate()
            }
            ProcessSpec::KilledFlow { psi, phi } => {
                psi.validate()?;
                phi.validate()
            }
            ProcessSpec::Cbc { psi, sigma } | ProcessSpec::DiffusionDual { sigma, psi } => {
                psi.validate()?;
                sigma.validate()
            }
            ProcessSpec::Cbci { psi, sigma, phi }
            | ProcessSpec::CbciDual { sigma, psi, phi } => {
                psi.validate()?;
                sigma.validate()?;
                phi.validate()
            }
            ProcessSpec::Cbre { psi, kappa } | ProcessSpec::CbreDual { psi, kappa } => {
                psi.validate()?;
                kappa.validate()?;
                if kappa.c != 0.0 {
                    return Err(Error::Validation(format!(
                        "environment killing is not simulable, got c = {}",
                        kappa.c
                    )));
                }
                if kappa.measure.atoms.iter().any(|at| at.location == -1.0) {
                    return Err(Error::Validation(
                        "an environment atom at -1 would send the state to 0 \
                         multiplicatively and is not simulable"
                            .into(),
                    ));
                }
                Ok(())
            }
            ProcessSpec::Decomposable { compensated, uncompensated } => {
                for pair in compensated {
                    pair.rate.validate()?;
                    pair.jumps.validate()?;
                }
                for pair in uncompensated {
                    pair.rate.validate()?;
                    pair.jumps.validate()?;
                }
                Ok(())
            }
        }
    }

    /// The dual kind with the same mechanisms: branching ↔ flow,
    /// subordinator ↔ constant-killed state, collision ↔ diffusion,
    /// environment pairs share their mechanisms, decomposable pairs swap
    /// roles. An involution.
    pub fn dual(&self) -> ProcessSpec {
        match self.clone() {
            ProcessSpec::Cb { psi } => ProcessSpec::DeterministicFlow { psi },
            ProcessSpec::DeterministicFlow { psi } => ProcessSpec::Cb { psi },
            ProcessSpec::Subordinator { phi } => ProcessSpec::KilledConstant { phi },
            ProcessSpec::KilledConstant { phi } => ProcessSpec::Subordinator { phi },
            ProcessSpec::Cbc { psi, sigma } => ProcessSpec::DiffusionDual { sigma, psi },
            ProcessSpec::DiffusionDual { sigma, psi } => ProcessSpec::Cbc { psi, sigma },
            ProcessSpec::Cbci { psi, sigma, phi } => {
                ProcessSpec::CbciDual { sigma, psi, phi }
            }
            ProcessSpec::CbciDual { sigma, psi, phi } => {
                ProcessSpec::Cbci { psi, sigma, phi }
            }
            ProcessSpec::KilledFlow { psi, phi } => {
                ProcessSpec::Cbci { psi, sigma: NotUpMechanism::zero(), phi }
            }
            ProcessSpec::Cbre { psi, kappa } => ProcessSpec::CbreDual { psi, kappa },
            ProcessSpec::CbreDual { psi, kappa } => ProcessSpec::Cbre { psi, kappa },
            ProcessSpec::Decomposable { compensated, uncompensated } => {
                ProcessSpec::Decomposable {
                    compensated: compensated
                        .into_iter()
                        .map(|p| CompensatedPair { rate: p.jumps, jumps: p.rate })
                        .collect(),
                    uncompensated: uncompensated
                        .into_iter()
                        .map(|p| UncompensatedPair { rate: p.jumps, jumps: p.rate })
                        .collect(),
                }
            }
        }
    }
}

/// Analytic sufficient conditions for the exploded-path fraction to be a
/// pure discretization artifact: branching and collision kinds never reach
/// `∞` in finite time; immigration needs a finite immigration mean and no
/// branching killing; decomposable systems need killing-free pairs with
/// finite jump means.
pub fn non_explosion_screen(spec: &ProcessSpec) -> bool {
    match spec {
        ProcessSpec::Cb { .. }
        | ProcessSpec::Cbc { .. }
        | ProcessSpec::DeterministicFlow { .. }
        | ProcessSpec::DiffusionDual { .. }
        | ProcessSpec::Cbre { .. }
        | ProcessSpec::CbreDual { .. } => true,
        ProcessSpec::Subordinator { phi }
        | ProcessSpec::KilledConstant { phi }
        | ProcessSpec::KilledFlow { phi, .. } => phi.c == 0.0,
        ProcessSpec::Cbci { psi, phi, .. } | ProcessSpec::CbciDual { psi, phi, .. } => {
            psi.c == 0.0 && phi.c == 0.0 && phi.derivative_at_zero().is_finite()
        }
        ProcessSpec::Decomposable { uncompensated, .. } => uncompensated.iter().all(|p| {
            p.rate.c == 0.0
                && p.jumps.c == 0.0
                && p.rate.derivative_at_zero().is_finite()
                && p.jumps.derivative_at_zero().is_finite()
        }),
    }
}

/// A stable density window `[ε, 1]` compiled for sampling: total rate,
/// first and second moments inside the window, and the residual mean
/// below ε (finite only when `alpha < 1`).
#[derive(Debug, Clone, Copy)]
struct StableWindow {
    alpha: f64,
    mass_above: f64,
    mean_window: f64,
    second_moment_window: f64,
    mean_below: f64,
    eps_pow_neg_alpha: f64,
}

impl StableWindow {
    fn new(st: &StablePart, eps: f64) -> Self {
        let a = st.alpha;
        let eps_pow_neg_alpha = eps.powf(-a);
        let mass_above = st.scale * (eps_pow_neg_alpha - 1.0) / a;
        let mean_window = if (a - 1.0).abs() < 1e-9 {
            st.scale * (1.0 / eps).ln()
        } else {
            st.scale * (1.0 - eps.powf(1.0 - a)) / (1.0 - a)
        };
        let second_moment_window = st.scale * (1.0 - eps.powf(2.0 - a)) / (2.0 - a);
        let mean_below = if a < 1.0 {
            st.scale * eps.powf(1.0 - a) / (1.0 - a)
        } else {
            f64::INFINITY
        };
        Self { alpha: a, mass_above, mean_window, second_moment_window, mean_below, eps_pow_neg_alpha }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let v: f64 = rng.random();
        (self.eps_pow_neg_alpha - v * (self.eps_pow_neg_alpha - 1.0)).powf(-1.0 / self.alpha)
    }

    /// Sum of `count` i.i.d. window jumps; beyond [`MAX_SAMPLED_JUMPS`]
    /// the sum is drawn from its normal approximation.
    fn jump_sum(&self, count: f64, rng: &mut ChaCha8Rng) -> f64 {
        if count <= 0.0 {
            return 0.0;
        }
        if count <= MAX_SAMPLED_JUMPS {
            let mut total = 0.0;
            for _ in 0..count as u64 {
                total += self.sample(rng);
            }
            return total;
        }
        let m1 = self.mean_window / self.mass_above;
        let m2 = self.second_moment_window / self.mass_above;
        let var = (m2 - m1 * m1).max(0.0);
        let n: f64 = rng.sample(StandardNormal);
        count * m1 + (count * var).sqrt() * n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Compensation {
    /// Atoms at sizes ≤ 1 and the whole stable window are compensated;
    /// the sub-ε stable residual is dropped (it is mean-zero).
    SizeUpToOne,
    /// Every jump is compensated; sub-ε residual dropped.
    All,
    /// Nothing is compensated; the sub-ε stable mean is added as drift.
    None,
}

/// One jump measure compiled against the small-jump cut.
#[derive(Debug, Clone)]
struct JumpPlan {
    atoms: Vec<(f64, f64)>,
    stable: Option<StableWindow>,
    comp: Compensation,
}

impl JumpPlan {
    fn new(measure: &JumpMeasureSpec, eps: f64, comp: Compensation) -> Self {
        Self {
            atoms: measure.atoms.iter().map(|at| (at.location, at.mass)).collect(),
            stable: measure.stable.as_ref().map(|st| StableWindow::new(st, eps)),
            comp,
        }
    }

    fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.stable.is_none()
    }

    /// Additive increment over one step at rate multiplier `r`.
    fn increment(&self, r: f64, h: f64, rng: &mut ChaCha8Rng) -> f64 {
        let mut dx = 0.0;
        for &(size, mass) in &self.atoms {
            let count = poisson_count(r * mass * h, rng);
            dx += count * size;
            let compensate = match self.comp {
                Compensation::SizeUpToOne => size <= 1.0,
                Compensation::All => true,
                Compensation::None => false,
            };
            if compensate {
                dx -= r * size * mass * h;
            }
        }
        if let Some(w) = &self.stable {
            let count = poisson_count(r * w.mass_above * h, rng);
            dx += w.jump_sum(count, rng);
            match self.comp {
                Compensation::SizeUpToOne | Compensation::All => dx -= r * w.mean_window * h,
                Compensation::None => dx += r * w.mean_below * h,
            }
        }
        dx
    }
}

fn poisson_count(lambda: f64, rng: &mut ChaCha8Rng) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("jump rate must be finite").sample(rng)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone)]
enum RateLaw {
    Linear,
    Quadratic,
    Constant,
    NotUp(NotUpMechanism),
    Subordinator(SubordinatorMechanism),
}

impl RateLaw {
    fn eval(&self, x: f64) -> f64 {
        match self {
            RateLaw::Linear => x,
            RateLaw::Quadratic => x * x,
            RateLaw::Constant => 1.0,
            RateLaw::NotUp(m) => eval_not_up(m, x),
            RateLaw::Subordinator(m) => eval_subordinator(m, x),
        }
    }

}

/// One additive dynamics component: at state `x` it contributes Gaussian
/// noise `√(2·gauss_a·r(x)·h)`, drift `drift·r(x)·h`, jumps at rate
/// multiplier `r(x)`, and killing at rate `kill·r(x)`.
#[derive(Debug, Clone)]
struct Route {
    rate: RateLaw,
    gauss_a: f64,
    drift: f64,
    kill: f64,
    jumps: JumpPlan,
}

impl Route {
    fn is_inert(&self) -> bool {
        self.gauss_a == 0.0 && self.drift == 0.0 && self.kill == 0.0 && self.jumps.is_empty()
    }
}

/// Multiplicative environment component shared by the environment kinds.
#[derive(Debug, Clone)]
struct EnvPlan {
    gauss_a: f64,
    drift_b: f64,
    atoms: Vec<(f64, f64)>,
    stable: Option<StableWindow>,
}

impl EnvPlan {
    fn new(kappa: &EnvMechanism, eps: f64) -> Self {
        Self {
            gauss_a: kappa.a,
            drift_b: kappa.b,
            atoms: kappa.measure.atoms.iter().map(|at| (at.location, at.mass)).collect(),
            stable: kappa.measure.stable.as_ref().map(|st| StableWindow::new(st, eps)),
        }
    }

    /// Returns the multiplicative jump factor and the additive increment
    /// (noise, drift, compensators), both relative to the frozen value.
    fn increment(&self, x: f64, h: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let mut factor = 1.0;
        let mut dx = 0.0;
        if self.gauss_a > 0.0 && x > 0.0 {
            dx += (2.0 * self.gauss_a).sqrt() * x * h.sqrt() * standard_normal(rng);
        }
        dx += self.drift_b * x * h;
        for &(m, mass) in &self.atoms {
            let count = poisson_count(mass * h, rng);
            if count > 0.0 {
                factor *= (1.0 + m).powf(count);
            }
            if m.abs() <= 1.0 {
                dx -= x * m * mass * h;
            }
        }
        if let Some(w) = &self.stable {
            let count = poisson_count(w.mass_above * h, rng);
            for _ in 0..count as u64 {
                factor *= 1.0 + w.sample(rng);
            }
            dx -= x * w.mean_window * h;
        }
        (factor, dx)
    }
}

struct AdditiveStepper {
    routes: Vec<Route>,
    env: Option<EnvPlan>,
    psi_for_env_dual: Option<SpLpMechanism>,
    zero_absorbing: bool,
    floor: f64,
    cap: f64,
    can_kill: bool,
}

impl AdditiveStepper {
    fn step(&self, state: &mut PathState, h: f64, rng: &mut ChaCha8Rng) {
        if state.status != PathStatus::Alive {
            return;
        }
        let x = state.value;
        if x >= self.cap {
            absorb_inf(state);
            return;
        }

        let mut kill_rate = 0.0;
        let mut dx = 0.0;
        for route in &self.routes {
            if route.is_inert() {
                continue;
            }
            let r = route.rate.eval(x);
            if r <= 0.0 {
                continue;
            }
            kill_rate += route.kill * r;
            let variance = 2.0 * route.gauss_a * r * h;
            if variance > 0.0 {
                dx += variance.sqrt() * standard_normal(rng);
            }
            dx += route.drift * r * h;
            dx += route.jumps.increment(r, h, rng);
        }

        let mut proposed = x + dx;
        if let Some(env) = &self.env {
            if let Some(psi) = &self.psi_for_env_dual {
                proposed -= eval_splp(psi, x) * h;
            }
            let (factor, env_dx) = env.increment(x, h, rng);
            proposed += x * (factor - 1.0) + env_dx;
        }

        if kill_rate > 0.0 {
            state.kill_clock += kill_rate * h;
            if state.kill_clock >= state.kill_threshold {
                absorb_inf(state);
                return;
            }
        }
        self.finish(state, proposed);
    }

    fn finish(&self, state: &mut PathState, proposed: f64) {
        if proposed >= self.cap || proposed.is_nan() {
            absorb_inf(state);
        } else if proposed <= self.floor {
            if self.zero_absorbing {
                state.value = 0.0;
                state.status = PathStatus::AbsorbedZero;
            } else {
                state.value = proposed.max(0.0);
            }
        } else {
            state.value = proposed;
        }
    }
}

struct DualStepper {
    psi: SpLpMechanism,
    sigma: NotUpMechanism,
    phi: Option<SubordinatorMechanism>,
    floor: f64,
    cap: f64,
}

impl DualStepper {
    fn step(&self, state: &mut PathState, h: f64, rng: &mut ChaCha8Rng) {
        if state.status != PathStatus::Alive {
            return;
        }
        let y = state.value;
        if y >= self.cap {
            absorb_inf(state);
            return;
        }
        if let Some(phi) = &self.phi {
            state.kill_clock += eval_subordinator(phi, y) * h;
            if state.kill_clock >= state.kill_threshold {
                absorb_inf(state);
                return;
            }
        }
        let mut proposed = y - eval_splp(&self.psi, y) * h;
        let variance = 2.0 * eval_not_up(&self.sigma, y) * h;
        if variance > 0.0 {
            proposed += variance.sqrt() * standard_normal(rng);
        }
        if proposed >= self.cap || proposed.is_nan() {
            absorb_inf(state);
        } else if proposed <= self.floor {
            state.value = 0.0;
            state.status = PathStatus::AbsorbedZero;
        } else {
            state.value = proposed;
        }
    }
}

fn absorb_inf(state: &mut PathState) {
    state.value = f64::INFINITY;
    state.status = PathStatus::AbsorbedInf;
}

enum Compiled {
    Additive(AdditiveStepper),
    Dual(DualStepper),
}

impl Compiled {
    fn step(&self, state: &mut PathState, h: f64, rng: &mut ChaCha8Rng) {
        match self {
            Compiled::Additive(s) => s.step(state, h, rng),
            Compiled::Dual(s) => s.step(state, h, rng),
        }
    }

    fn needs_kill_threshold(&self) -> bool {
        match self {
            Compiled::Additive(s) => s.can_kill,
            Compiled::Dual(s) => s.phi.as_ref().is_some_and(|p| !p.is_zero()),
        }
    }
}

fn branching_route(psi: &SpLpMechanism, eps: f64) -> Route {
    Route {
        rate: RateLaw::Linear,
        gauss_a: psi.a,
        drift: psi.b,
        kill: psi.c,
        jumps: JumpPlan::new(&psi.measure, eps, Compensation::SizeUpToOne),
    }
}

fn collision_route(sigma: &NotUpMechanism, eps: f64) -> Route {
    Route {
        rate: RateLaw::Quadratic,
        gauss_a: sigma.a,
        drift: -sigma.d,
        kill: 0.0,
        jumps: JumpPlan::new(&sigma.measure, eps, Compensation::All),
    }
}

fn immigration_route(phi: &SubordinatorMechanism, eps: f64) -> Route {
    Route {
        rate: RateLaw::Constant,
        gauss_a: 0.0,
        drift: phi.d,
        kill: phi.c,
        jumps: JumpPlan::new(&phi.measure, eps, Compensation::None),
    }
}

fn compile(spec: &ProcessSpec, cfg: &SimConfig) -> Option<Compiled> {
    let eps = cfg.small_jump_cut;
    let (routes, env, psi_for_env_dual, zero_absorbing, diffusive): (
        Vec<Route>,
        Option<EnvPlan>,
        Option<SpLpMechanism>,
        bool,
        bool,
    ) = match spec {
        ProcessSpec::Cb { psi } => {
            (vec![branching_route(psi, eps)], None, None, true, psi.a > 0.0)
        }
        ProcessSpec::Subordinator { phi } => {
            (vec![immigration_route(phi, eps)], None, None, false, false)
        }
        ProcessSpec::Cbc { psi, sigma } => (
            vec![branching_route(psi, eps), collision_route(sigma, eps)],
            None,
            None,
            true,
            psi.a > 0.0 || sigma.a > 0.0,
        ),
        ProcessSpec::Cbci { psi, sigma, phi } => (
            vec![
                branching_route(psi, eps),
                collision_route(sigma, eps),
                immigration_route(phi, eps),
            ],
            None,
            None,
            false,
            psi.a > 0.0 || sigma.a > 0.0,
        ),
        ProcessSpec::Cbre { psi, kappa } => (
            vec![branching_route(psi, eps)],
            Some(EnvPlan::new(kappa, eps)),
            None,
            true,
            psi.a > 0.0 || kappa.a > 0.0,
        ),
        ProcessSpec::CbreDual { psi, kappa } => (
            vec![],
            Some(EnvPlan::new(kappa, eps)),
            Some(psi.clone()),
            true,
            kappa.a > 0.0,
        ),
        ProcessSpec::Decomposable { compensated, uncompensated } => {
            let mut routes = Vec::new();
            for pair in compensated {
                routes.push(Route {
                    rate: RateLaw::NotUp(pair.rate.clone()),
                    gauss_a: pair.jumps.a,
                    drift: -pair.jumps.d,
                    kill: 0.0,
                    jumps: JumpPlan::new(&pair.jumps.measure, eps, Compensation::All),
                });
            }
            // the state only stays trapped at 0 if every uncompensated
            // rate vanishes there, i.e. carries no constant part
            let zero_absorbing = uncompensated.iter().all(|p| p.rate.c == 0.0);
            for pair in uncompensated {
                routes.push(Route {
                    rate: RateLaw::Subordinator(pair.rate.clone()),
                    gauss_a: 0.0,
                    drift: pair.jumps.d,
                    kill: pair.jumps.c,
                    jumps: JumpPlan::new(&pair.jumps.measure, eps, Compensation::None),
                });
            }
            let diffusive = compensated.iter().any(|p| p.jumps.a > 0.0);
            (routes, None, None, zero_absorbing, diffusive)
        }
        ProcessSpec::DiffusionDual { sigma, psi } => {
            let floor = if sigma.is_zero() {
                cfg.absorption_floor
            } else {
                cfg.absorption_floor.max(DIFFUSIVE_FLOOR)
            };
            return Some(Compiled::Dual(DualStepper {
                psi: psi.clone(),
                sigma: sigma.clone(),
                phi: None,
                floor,
                cap: cfg.explosion_cap,
            }));
        }
        ProcessSpec::CbciDual { sigma, psi, phi } => {
            let floor = if sigma.is_zero() {
                cfg.absorption_floor
            } else {
                cfg.absorption_floor.max(DIFFUSIVE_FLOOR)
            };
            return Some(Compiled::Dual(DualStepper {
                psi: psi.clone(),
                sigma: sigma.clone(),
                phi: Some(phi.clone()),
                floor,
                cap: cfg.explosion_cap,
            }));
        }
        ProcessSpec::KilledConstant { .. }
        | ProcessSpec::DeterministicFlow { .. }
        | ProcessSpec::KilledFlow { .. } => return None,
    };
    let can_kill = routes.iter().any(|r| r.kill > 0.0);
    let floor = if diffusive {
        cfg.absorption_floor.max(DIFFUSIVE_FLOOR)
    } else {
        cfg.absorption_floor
    };
    Some(Compiled::Additive(AdditiveStepper {
        routes,
        env,
        psi_for_env_dual,
        zero_absorbing,
        floor,
        cap: cfg.explosion_cap,
        can_kill,
    }))
}

/// Advances the time grid: full steps of `cfg.step`, with one shorter
/// final step when the horizon is not a multiple.
fn step_sizes(cfg: &SimConfig) -> impl Iterator<Item = f64> + Clone {
    let h = cfg.step;
    let t = cfg.horizon;
    let full = (t / h).floor() as usize;
    let remainder = t - full as f64 * h;
    let tail = if remainder > 1e-12 * t { Some(remainder) } else { None };
    std::iter::repeat(h).take(full).chain(tail)
}

/// Simulates `cfg.paths` terminal values of the process at the horizon.
/// Fully reproducible: path `i` is driven by the substream `(seed, i)`.
pub fn run_paths(spec: &ProcessSpec, x0: f64, cfg: &SimConfig) -> Result<Vec<Terminal>> {
    spec.validate()?;
    cfg.validate()?;
    if x0.is_nan() || x0 < 0.0 {
        return Err(Error::Contract(format!("x0 must be in [0,∞], got {x0}")));
    }
    if x0.is_infinite() {
        return Ok(vec![
            Terminal { value: f64::INFINITY, status: PathStatus::AbsorbedInf };
            cfg.paths
        ]);
    }

    match spec {
        ProcessSpec::DeterministicFlow { psi } => {
            let terminal = flow_terminal(psi, x0, cfg.horizon)?;
            Ok(vec![terminal; cfg.paths])
        }
        ProcessSpec::KilledConstant { phi } => {
            let exponent = eval_subordinator(phi, x0) * cfg.horizon;
            Ok((0..cfg.paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = path_rng(cfg.seed, i as u64);
                    let threshold: f64 = rng.sample(Exp1);
                    if exponent >= threshold {
                        Terminal { value: f64::INFINITY, status: PathStatus::AbsorbedInf }
                    } else {
                        Terminal { value: x0, status: PathStatus::Alive }
                    }
                })
                .collect())
        }
        ProcessSpec::KilledFlow { psi, phi } => {
            let (terminal, exponent) = killed_flow_terminal(psi, phi, x0, cfg.horizon)?;
            Ok((0..cfg.paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = path_rng(cfg.seed, i as u64);
                    let threshold: f64 = rng.sample(Exp1);
                    if exponent >= threshold {
                        Terminal { value: f64::INFINITY, status: PathStatus::AbsorbedInf }
                    } else {
                        terminal
                    }
                })
                .collect())
        }
        _ => {
            let stepper = compile(spec, cfg).expect("stochastic kinds compile to a stepper");
            let needs_threshold = stepper.needs_kill_threshold();
            Ok((0..cfg.paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = path_rng(cfg.seed, i as u64);
                    let threshold =
                        if needs_threshold { rng.sample(Exp1) } else { f64::INFINITY };
                    let mut state = PathState::new(x0, threshold);
                    for h in step_sizes(cfg) {
                        if state.status != PathStatus::Alive {
                            break;
                        }
                        stepper.step(&mut state, h, &mut rng);
                    }
                    Terminal { value: state.value, status: state.status }
                })
                .collect())
        }
    }
}

fn flow_terminal(psi: &SpLpMechanism, y0: f64, t: f64) -> Result<Terminal> {
    if y0 == 0.0 {
        return if psi.c == 0.0 {
            Ok(Terminal { value: 0.0, status: PathStatus::Alive })
        } else {
            Err(Error::Contract(
                "the flow leaves 0 when the branching exponent kills; start above 0".into(),
            ))
        };
    }
    let flow = cb_flow(psi, y0, t, DEFAULT_FLOW_TOL)?;
    Ok(if flow.blow_up {
        Terminal { value: f64::INFINITY, status: PathStatus::AbsorbedInf }
    } else {
        Terminal { value: flow.u, status: PathStatus::Alive }
    })
}

fn killed_flow_terminal(
    psi: &SpLpMechanism,
    phi: &SubordinatorMechanism,
    y0: f64,
    t: f64,
) -> Result<(Terminal, f64)> {
    if y0 == 0.0 {
        if psi.c != 0.0 {
            return Err(Error::Contract(
                "the flow leaves 0 when the branching exponent kills; start above 0".into(),
            ));
        }
        // frozen at 0: killing accrues at the constant rate Φ(0) = c
        return Ok((Terminal { value: 0.0, status: PathStatus::Alive }, phi.c * t));
    }
    let flow = cb_flow_killed(psi, phi, y0, t, DEFAULT_FLOW_TOL)?;
    let exponent = -flow.killed_weight.ln();
    let terminal = if flow.blow_up {
        Terminal { value: f64::INFINITY, status: PathStatus::AbsorbedInf }
    } else {
        Terminal { value: flow.u, status: PathStatus::Alive }
    };
    Ok((terminal, exponent))
}

/// Records full trajectories for the first `max_paths` paths on the step
/// grid, including the starting point.
pub fn sample_trajectories(
    spec: &ProcessSpec,
    x0: f64,
    cfg: &SimConfig,
    max_paths: usize,
) -> Result<Vec<TrajectoryPoint>> {
    spec.validate()?;
    cfg.validate()?;
    if x0.is_nan() || x0 < 0.0 {
        return Err(Error::Contract(format!("x0 must be in [0,∞], got {x0}")));
    }
    let n = max_paths.min(cfg.paths);
    let mut rows = Vec::new();
    for i in 0..n {
        let mut rng = path_rng(cfg.seed, i as u64);
        match spec {
            ProcessSpec::DeterministicFlow { psi } => {
                let mut t = 0.0;
                rows.push(TrajectoryPoint { path: i, t, value: x0, status: PathStatus::Alive });
                for h in step_sizes(cfg) {
                    t += h;
                    let terminal = flow_terminal(psi, x0, t)?;
                    rows.push(TrajectoryPoint {
                        path: i,
                        t,
                        value: terminal.value,
                        status: terminal.status,
                    });
                }
            }
            ProcessSpec::KilledConstant { phi } => {
                let threshold: f64 = rng.sample(Exp1);
                let rate = eval_subordinator(phi, x0);
                let mut t = 0.0;
                rows.push(TrajectoryPoint { path: i, t, value: x0, status: PathStatus::Alive });
                for h in step_sizes(cfg) {
                    t += h;
                    let (value, status) = if rate * t >= threshold {
                        (f64::INFINITY, PathStatus::AbsorbedInf)
                    } else {
                        (x0, PathStatus::Alive)
                    };
                    rows.push(TrajectoryPoint { path: i, t, value, status });
                }
            }
            ProcessSpec::KilledFlow { psi, phi } => {
                let threshold: f64 = rng.sample(Exp1);
                let mut t = 0.0;
                rows.push(TrajectoryPoint { path: i, t, value: x0, status: PathStatus::Alive });
                for h in step_sizes(cfg) {
                    t += h;
                    let (terminal, exponent) = killed_flow_terminal(psi, phi, x0, t)?;
                    let (value, status) = if exponent >= threshold {
                        (f64::INFINITY, PathStatus::AbsorbedInf)
                    } else {
                        (terminal.value, terminal.status)
                    };
                    rows.push(TrajectoryPoint { path: i, t, value, status });
                }
            }
            _ => {
                let stepper = compile(spec, cfg).expect("stochastic kinds compile to a stepper");
                let threshold = if stepper.needs_kill_threshold() {
                    rng.sample(Exp1)
                } else {
                    f64::INFINITY
                };
                let mut state = PathState::new(x0, threshold);
                let mut t = 0.0;
                rows.push(TrajectoryPoint {
                    path: i,
                    t,
                    value: state.value,
                    status: state.status,
                });
                for h in step_sizes(cfg) {
                    t += h;
                    if state.status == PathStatus::Alive {
                        stepper.step(&mut state, h, &mut rng);
                    }
                    rows.push(TrajectoryPoint {
                        path: i,
                        t,
                        value: state.value,
                        status: state.status,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// One branching step with rates frozen at the current value.
pub fn step_cb(
    state: &mut PathState,
    psi: &SpLpMechanism,
    h: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let stepper = compile(&ProcessSpec::Cb { psi: psi.clone() }, cfg).unwrap();
    stepper.step(state, h, rng);
}

/// One branching-with-collisions step.
pub fn step_cbc(
    state: &mut PathState,
    psi: &SpLpMechanism,
    sigma: &NotUpMechanism,
    h: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let spec = ProcessSpec::Cbc { psi: psi.clone(), sigma: sigma.clone() };
    compile(&spec, cfg).unwrap().step(state, h, rng);
}

/// One branching-collision-immigration step; 0 does not trap.
pub fn step_cbci(
    state: &mut PathState,
    psi: &SpLpMechanism,
    sigma: &NotUpMechanism,
    phi: &SubordinatorMechanism,
    h: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let spec =
        ProcessSpec::Cbci { psi: psi.clone(), sigma: sigma.clone(), phi: phi.clone() };
    compile(&spec, cfg).unwrap().step(state, h, rng);
}

/// One step of branching in a random environment.
pub fn step_cbre(
    state: &mut PathState,
    psi: &SpLpMechanism,
    kappa: &EnvMechanism,
    h: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let spec = ProcessSpec::Cbre { psi: psi.clone(), kappa: kappa.clone() };
    compile(&spec, cfg).unwrap().step(state, h, rng);
}

/// One step of the environment dual: drift `−Ψ(Y)` plus the environment.
pub fn step_cbre_dual(
    state: &mut PathState,
    psi: &SpLpMechanism,
    kappa: &EnvMechanism,
    h: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let spec = ProcessSpec::CbreDual { psi: psi.clone(), kappa: kappa.clone() };
    compile(&spec, cfg).unwrap().step(state, h, rng);
}

/// One decomposable-system step.
pub fn step_decomposable(
    state: &mut PathState,
    compensated: &[CompensatedPair],
    uncompensated: &[UncompensatedPair],
    h: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let spec = ProcessSpec::Decomposable {
        compensated: compensated.to_vec(),
        uncompensated: uncompensated.to_vec(),
    };
    compile(&spec, cfg).unwrap().step(state, h, rng);
}

/// One Euler-Maruyama step of the diffusion dual, with the optional
/// killing clock of the immigration dual.
pub fn step_diffusion_dual(
    state: &mut PathState,
    sigma: &NotUpMechanism,
    psi: &SpLpMechanism,
    phi: Option<&SubordinatorMechanism>,
    h: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let spec = match phi {
        None => ProcessSpec::DiffusionDual { sigma: sigma.clone(), psi: psi.clone() },
        Some(phi) => ProcessSpec::CbciDual {
            sigma: sigma.clone(),
            psi: psi.clone(),
            phi: phi.clone(),
        },
    };
    compile(&spec, cfg).unwrap().step(state, h, rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::Atom;
    use approx::assert_relative_eq;

    fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let vals: Vec<f64> = values.collect();
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt(), n)
    }

    fn laplace_mean(terms: &[Terminal], y: f64) -> (f64, f64) {
        let (m, se, _) = mean_se(terms.iter().map(|t| (-t.value * y).exp()));
        (m, se)
    }

    fn feller() -> SpLpMechanism {
        SpLpMechanism { a: 1.0, ..SpLpMechanism::zero() }
    }

    #[test]
    fn constant_branching_never_moves() {
        let cfg = SimConfig::new(0.01, 1.0, 50, 7);
        let terms = run_paths(&ProcessSpec::Cb { psi: SpLpMechanism::zero() }, 3.0, &cfg).unwrap();
        assert!(terms.iter().all(|t| t.value == 3.0 && t.status == PathStatus::Alive));
    }

    #[test]
    fn drift_subordinator_from_zero_reaches_horizon_drift() {
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        let cfg = SimConfig::new(1e-3, 1.0, 10, 3);
        let terms = run_paths(&ProcessSpec::Subordinator { phi }, 0.0, &cfg).unwrap();
        for t in terms {
            assert_relative_eq!(t.value, 1.0, max_relative = 1e-12);
            assert_eq!(t.status, PathStatus::Alive);
        }
    }

    #[test]
    fn branching_diffusion_is_a_martingale() {
        let cfg = SimConfig::new(0.01, 1.0, 20_000, 11);
        let terms = run_paths(&ProcessSpec::Cb { psi: feller() }, 1.0, &cfg).unwrap();
        let (mean, se, _) = mean_se(terms.iter().map(|t| t.value));
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn linear_drift_grows_exponentially_up_to_step_bias() {
        // Ψ(u) = −u gives the deterministic step x ← x(1+h); the gap to
        // e^T is pure first-order discretization bias, bounded by e·h here
        let psi = SpLpMechanism { b: 1.0, ..SpLpMechanism::zero() };
        let cfg = SimConfig::new(1e-3, 1.0, 4, 1);
        let terms = run_paths(&ProcessSpec::Cb { psi }, 1.0, &cfg).unwrap();
        let e = std::f64::consts::E;
        for t in terms {
            assert!((t.value - e).abs() <= e * 1e-3, "terminal {}", t.value);
        }
    }

    #[test]
    fn branching_killing_matches_the_exponential_law() {
        // value frozen at 1, kill rate c·x = 0.7
        let psi = SpLpMechanism { c: 0.7, ..SpLpMechanism::zero() };
        let cfg = SimConfig::new(0.01, 2.0, 20_000, 23);
        let terms = run_paths(&ProcessSpec::Cb { psi }, 1.0, &cfg).unwrap();
        let (survival, se, _) =
            mean_se(terms.iter().map(|t| if t.value.is_finite() { 1.0 } else { 0.0 }));
        let want = (-1.4f64).exp();
        assert!((survival - want).abs() <= 3.0 * se.max(1e-4), "survival {survival} vs {want}");
    }

    #[test]
    fn collision_drift_follows_the_logistic_curve() {
        let sigma = NotUpMechanism { d: 1.0, ..NotUpMechanism::zero() };
        let spec = ProcessSpec::Cbc { psi: SpLpMechanism::zero(), sigma };
        let cfg = SimConfig::new(1e-4, 1.0, 2, 5);
        let terms = run_paths(&spec, 1.0, &cfg).unwrap();
        for t in terms {
            assert!((t.value - 0.5).abs() <= 1e-3, "terminal {}", t.value);
        }
    }

    #[test]
    fn zero_collision_mechanism_reproduces_branching_exactly() {
        let cfg = SimConfig::new(0.01, 1.0, 200, 99);
        let cb = run_paths(&ProcessSpec::Cb { psi: feller() }, 1.0, &cfg).unwrap();
        let cbc = run_paths(
            &ProcessSpec::Cbc { psi: feller(), sigma: NotUpMechanism::zero() },
            1.0,
            &cfg,
        )
        .unwrap();
        assert_eq!(cb, cbc);
    }

    #[test]
    fn collision_noise_is_a_martingale() {
        let sigma = NotUpMechanism { a: 1.0, ..NotUpMechanism::zero() };
        let spec = ProcessSpec::Cbc { psi: SpLpMechanism::zero(), sigma };
        let cfg = SimConfig::new(0.01, 1.0, 20_000, 31);
        let terms = run_paths(&spec, 1.0, &cfg).unwrap();
        let (mean, se, _) = mean_se(terms.iter().map(|t| t.value));
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn pure_drift_immigration_is_deterministic() {
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        let spec = ProcessSpec::Cbci {
            psi: SpLpMechanism::zero(),
            sigma: NotUpMechanism::zero(),
            phi,
        };
        let cfg = SimConfig::new(1e-3, 1.0, 3, 17);
        let terms = run_paths(&spec, 0.5, &cfg).unwrap();
        for t in terms {
            assert_relative_eq!(t.value, 1.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn immigration_jump_count_matches_the_poisson_rate() {
        let phi = SubordinatorMechanism {
            measure: JumpMeasureSpec::from_atoms(0.0, vec![Atom::new(1.0, 2.0)]),
            ..SubordinatorMechanism::zero()
        };
        let spec = ProcessSpec::Cbci {
            psi: SpLpMechanism::zero(),
            sigma: NotUpMechanism::zero(),
            phi,
        };
        let cfg = SimConfig::new(0.01, 2.0, 20_000, 41);
        let terms = run_paths(&spec, 0.0, &cfg).unwrap();
        // terminal = jump count, each jump has unit size
        let (mean, se, _) = mean_se(terms.iter().map(|t| t.value));
        assert!((mean - 4.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn immigration_restarts_paths_from_zero() {
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        let spec = ProcessSpec::Cbci { psi: feller(), sigma: NotUpMechanism::zero(), phi };
        let cfg = SimConfig::new(0.01, 1.0, 500, 43);
        let terms = run_paths(&spec, 0.0, &cfg).unwrap();
        // a path may sit at exactly 0 when sampled, but it is never
        // trapped there: no absorption, and most paths have restarted
        assert!(terms.iter().all(|t| t.status == PathStatus::Alive));
        let positive = terms.iter().filter(|t| t.value > 0.0).count();
        assert!(positive > terms.len() / 2, "only {positive} paths escaped 0");
    }

    #[test]
    fn compensated_environment_atom_is_a_martingale() {
        let kappa = EnvMechanism {
            measure: JumpMeasureSpec::from_atoms(-1.0, vec![Atom::new(1.0, 0.8)]),
            ..EnvMechanism::zero()
        };
        let spec = ProcessSpec::Cbre { psi: SpLpMechanism::zero(), kappa };
        let cfg = SimConfig::new(0.01, 1.0, 20_000, 53);
        let terms = run_paths(&spec, 1.0, &cfg).unwrap();
        let (mean, se, _) = mean_se(terms.iter().map(|t| t.value));
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn zero_environment_reproduces_branching_exactly() {
        let cfg = SimConfig::new(0.01, 1.0, 200, 61);
        let cb = run_paths(&ProcessSpec::Cb { psi: feller() }, 1.0, &cfg).unwrap();
        let cbre = run_paths(
            &ProcessSpec::Cbre { psi: feller(), kappa: EnvMechanism::zero() },
            1.0,
            &cfg,
        )
        .unwrap();
        assert_eq!(cb, cbre);
    }

    #[test]
    fn deterministic_environment_drift_grows_the_state() {
        let kappa = EnvMechanism { b: 0.5, ..EnvMechanism::zero() };
        let spec = ProcessSpec::Cbre { psi: SpLpMechanism::zero(), kappa };
        let cfg = SimConfig::new(1e-4, 1.0, 2, 67);
        let terms = run_paths(&spec, 2.0, &cfg).unwrap();
        for t in terms {
            assert_relative_eq!(t.value, 2.0 * (0.5f64).exp(), max_relative = 1e-3);
        }
    }

    #[test]
    fn environment_constraints_are_enforced() {
        let killed = EnvMechanism { c: 0.5, ..EnvMechanism::zero() };
        assert!(run_paths(
            &ProcessSpec::Cbre { psi: SpLpMechanism::zero(), kappa: killed },
            1.0,
            &SimConfig::new(0.01, 1.0, 2, 1),
        )
        .is_err());

        let wipeout = EnvMechanism {
            measure: JumpMeasureSpec::from_atoms(-1.0, vec![Atom::new(-1.0, 0.5)]),
            ..EnvMechanism::zero()
        };
        assert!(run_paths(
            &ProcessSpec::Cbre { psi: SpLpMechanism::zero(), kappa: wipeout },
            1.0,
            &SimConfig::new(0.01, 1.0, 2, 1),
        )
        .is_err());
    }

    #[test]
    fn constant_killed_state_survives_at_the_exponential_rate() {
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        let cfg = SimConfig::new(0.01, 1.0, 40_000, 71);
        let terms = run_paths(&ProcessSpec::KilledConstant { phi }, 1.0, &cfg).unwrap();
        let (survival, se, _) =
            mean_se(terms.iter().map(|t| if t.value.is_finite() { 1.0 } else { 0.0 }));
        let want = (-1.0f64).exp();
        assert!((survival - want).abs() <= 3.0 * se, "survival {survival}");
        assert!(terms
            .iter()
            .all(|t| t.value == 1.0 || (t.value.is_infinite() && t.status == PathStatus::AbsorbedInf)));
    }

    #[test]
    fn killed_flow_survival_matches_the_transform() {
        let psi = SpLpMechanism { b: 1.0, ..SpLpMechanism::zero() };
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        let cfg = SimConfig::new(0.01, 1.0, 40_000, 73);
        let terms = run_paths(&ProcessSpec::KilledFlow { psi, phi }, 1.0, &cfg).unwrap();
        let (survival, se, _) =
            mean_se(terms.iter().map(|t| if t.value.is_finite() { 1.0 } else { 0.0 }));
        assert!(
            (survival - 0.17937407873401718196).abs() <= 3.0 * se,
            "survival {survival} se {se}"
        );
    }

    #[test]
    fn unkilled_flow_never_dies() {
        let psi = feller();
        let phi = SubordinatorMechanism::zero();
        let cfg = SimConfig::new(0.01, 1.0, 100, 79);
        let terms = run_paths(&ProcessSpec::KilledFlow { psi, phi }, 1.0, &cfg).unwrap();
        for t in terms {
            assert_eq!(t.status, PathStatus::Alive);
            assert!((t.value - 0.5).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_noise_diffusion_dual_tracks_the_flow() {
        let spec = ProcessSpec::DiffusionDual { sigma: NotUpMechanism::zero(), psi: feller() };
        let cfg = SimConfig::new(1e-3, 1.0, 2, 83);
        let terms = run_paths(&spec, 1.0, &cfg).unwrap();
        for t in terms {
            assert!((t.value - 0.5).abs() <= 5e-3, "terminal {}", t.value);
        }
    }

    #[test]
    fn driftless_diffusion_dual_is_a_martingale() {
        let sigma = NotUpMechanism { a: 1.0, ..NotUpMechanism::zero() };
        let spec = ProcessSpec::DiffusionDual { sigma, psi: SpLpMechanism::zero() };
        let cfg = SimConfig::new(0.01, 1.0, 20_000, 89);
        let terms = run_paths(&spec, 1.0, &cfg).unwrap();
        let (mean, se, _) = mean_se(terms.iter().map(|t| t.value));
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn diffusion_dual_absorption_grows_with_the_horizon() {
        // square-root noise with downward drift; longer horizons extend
        // each path with the same draws, so absorption only accumulates
        let sigma = NotUpMechanism { d: 1.0, ..NotUpMechanism::zero() };
        let psi = SpLpMechanism { b: -1.0, ..SpLpMechanism::zero() };
        let mut fractions = Vec::new();
        for horizon in [1.0, 2.0, 4.0] {
            let spec = ProcessSpec::DiffusionDual { sigma: sigma.clone(), psi: psi.clone() };
            let mut cfg = SimConfig::new(0.01, horizon, 3000, 97);
            cfg.absorption_floor = 1e-9;
            let terms = run_paths(&spec, 0.5, &cfg).unwrap();
            let frac = terms.iter().filter(|t| t.status == PathStatus::AbsorbedZero).count();
            fractions.push(frac);
        }
        assert!(fractions[0] <= fractions[1] && fractions[1] <= fractions[2], "{fractions:?}");
        assert!(fractions[2] > 0);
    }

    #[test]
    fn flowlike_immigration_dual_matches_the_killed_flow_law() {
        let psi = SpLpMechanism { b: 1.0, ..SpLpMechanism::zero() };
        let phi = SubordinatorMechanism { d: 1.0, ..SubordinatorMechanism::zero() };
        let spec = ProcessSpec::CbciDual {
            sigma: NotUpMechanism::zero(),
            psi,
            phi,
        };
        let cfg = SimConfig::new(5e-3, 1.0, 20_000, 101);
        let terms = run_paths(&spec, 1.0, &cfg).unwrap();
        let (survival, se, _) =
            mean_se(terms.iter().map(|t| if t.value.is_finite() { 1.0 } else { 0.0 }));
        assert!(
            (survival - 0.17937407873401718196).abs() <= 3.0 * se.max(1e-3),
            "survival {survival} se {se}"
        );
    }

    #[test]
    fn decomposable_holding_time_is_exponential_at_the_frozen_rate() {
        // rate Φ̂(x) = 1 − e^{−x} and unit jumps: before the first jump the
        // state sits at 1, so the holding time is Exp(1 − e^{−1}); the
        // horizon-truncated mean (1 − e^{−λT})/λ is the exact oracle, close
        // to the untruncated 1/λ ≈ 1.5819767068693264244
        let unit_atom = JumpMeasureSpec::from_atoms(0.0, vec![Atom::new(1.0, 1.0)]);
        let pair = UncompensatedPair {
            rate: SubordinatorMechanism {
                measure: unit_atom.clone(),
                ..SubordinatorMechanism::zero()
            },
            jumps: SubordinatorMechanism {
                measure: unit_atom,
                ..SubordinatorMechanism::zero()
            },
        };
        let cfg = SimConfig::new(5e-3, 12.0, 4000, 103);
        let lambda = 0.63212055882855767840f64;
        let mut first_jumps = Vec::new();
        let spec_pairs = [pair];
        for i in 0..cfg.paths {
            let mut rng = path_rng(cfg.seed, i as u64);
            let mut state = PathState::new(1.0, f64::INFINITY);
            let mut t = 0.0;
            let mut jumped_at = cfg.horizon;
            for _ in 0..((cfg.horizon / cfg.step).round() as usize) {
                t += cfg.step;
                step_decomposable(&mut state, &[], &spec_pairs, cfg.step, &cfg, &mut rng);
                if state.value != 1.0 {
                    jumped_at = t;
                    break;
                }
            }
            first_jumps.push(jumped_at);
        }
        let (mean, se, _) = mean_se(first_jumps.into_iter());
        let truncated_mean = (1.0 - (-lambda * 12.0).exp()) / lambda;
        assert!(
            (mean - truncated_mean).abs() <= 3.0 * se.max(3e-3),
            "mean {mean} vs {truncated_mean} (se {se})"
        );
    }

    #[test]
    fn empty_decomposable_system_is_constant() {
        let spec = ProcessSpec::Decomposable { compensated: vec![], uncompensated: vec![] };
        let cfg = SimConfig::new(0.01, 1.0, 20, 107);
        let terms = run_paths(&spec, 2.5, &cfg).unwrap();
        assert!(terms.iter().all(|t| t.value == 2.5));
    }

    #[test]
    fn state_rate_decomposable_matches_branching_in_law() {
        // a compensated pair with rate Σ̂(x) = x and an atomic jump law on
        // (0,1] is the same process as branching with that pure-jump
        // exponent; compare Laplace transforms at y = 1
        let atom_measure = JumpMeasureSpec::from_atoms(0.0, vec![Atom::new(0.5, 0.8)]);
        let pair = CompensatedPair {
            rate: NotUpMechanism { d: 1.0, ..NotUpMechanism::zero() },
            jumps: NotUpMechanism { measure: atom_measure.clone(), ..NotUpMechanism::zero() },
        };
        let decomposable =
            ProcessSpec::Decomposable { compensated: vec![pair], uncompensated: vec![] };
        let cb = ProcessSpec::Cb {
            psi: SpLpMechanism { measure: atom_measure, ..SpLpMechanism::zero() },
        };
        let cfg_a = SimConfig::new(0.01, 1.0, 20_000, 109);
        let cfg_b = SimConfig::new(0.01, 1.0, 20_000, 113);
        let (m1, se1) = laplace_mean(&run_paths(&decomposable, 1.0, &cfg_a).unwrap(), 1.0);
        let (m2, se2) = laplace_mean(&run_paths(&cb, 1.0, &cfg_b).unwrap(), 1.0);
        let z = (m1 - m2).abs() / (se1 * se1 + se2 * se2).sqrt();
        assert!(z <= 3.0, "laplace means {m1} vs {m2}, z = {z}");
    }

    #[test]
    fn terminal_samples_are_seed_deterministic() {
        let spec = ProcessSpec::Cb { psi: feller() };
        let cfg = SimConfig::new(0.01, 1.0, 500, 127);
        let a = run_paths(&spec, 1.0, &cfg).unwrap();
        let b = run_paths(&spec, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg;
        other.seed = 128;
        assert_ne!(run_paths(&spec, 1.0, &other).unwrap(), a);
    }

    #[test]
    fn shared_streams_preserve_initial_value_ordering() {
        let spec = ProcessSpec::Cb { psi: feller() };
        let cfg = SimConfig::new(0.01, 1.0, 2000, 131);
        let low = run_paths(&spec, 1.0, &cfg).unwrap();
        let high = run_paths(&spec, 2.0, &cfg).unwrap();
        for (l, h) in low.iter().zip(&high) {
            assert!(
                l.value <= h.value || (l.value.is_infinite() && h.value.is_infinite()),
                "ordering lost: {} vs {}",
                l.value,
                h.value
            );
        }
    }

    #[test]
    fn infinite_start_is_absorbed_immediately() {
        let spec = ProcessSpec::Cb { psi: feller() };
        let cfg = SimConfig::new(0.01, 1.0, 5, 137);
        let terms = run_paths(&spec, f64::INFINITY, &cfg).unwrap();
        assert!(terms
            .iter()
            .all(|t| t.value.is_infinite() && t.status == PathStatus::AbsorbedInf));
    }

    #[test]
    fn dual_mapping_is_an_involution_over_all_kinds() {
        let phi = SubordinatorMechanism { d: 0.5, ..SubordinatorMechanism::zero() };
        let sigma = NotUpMechanism { a: 1.0, ..NotUpMechanism::zero() };
        let kappa = EnvMechanism { a: 0.2, ..EnvMechanism::zero() };
        let pair = UncompensatedPair {
            rate: phi.clone(),
            jumps: SubordinatorMechanism { d: 2.0, ..SubordinatorMechanism::zero() },
        };
        let specs = [
            ProcessSpec::Cb { psi: feller() },
            ProcessSpec::Subordinator { phi: phi.clone() },
            ProcessSpec::KilledConstant { phi: phi.clone() },
            ProcessSpec::DeterministicFlow { psi: feller() },
            ProcessSpec::Cbc { psi: feller(), sigma: sigma.clone() },
            ProcessSpec::DiffusionDual { sigma: sigma.clone(), psi: feller() },
            ProcessSpec::Cbci { psi: feller(), sigma: sigma.clone(), phi: phi.clone() },
            ProcessSpec::CbciDual { sigma, psi: feller(), phi: phi.clone() },
            ProcessSpec::Cbre { psi: feller(), kappa: kappa.clone() },
            ProcessSpec::CbreDual { psi: feller(), kappa },
            ProcessSpec::Decomposable { compensated: vec![], uncompensated: vec![pair] },
        ];
        for spec in specs {
            assert_eq!(spec.dual().dual(), spec);
        }
    }

    #[test]
    fn explosion_screen_rules() {
        assert!(non_explosion_screen(&ProcessSpec::Cb { psi: feller() }));
        let atomic_phi = SubordinatorMechanism {
            measure: JumpMeasureSpec::from_atoms(0.0, vec![Atom::new(1.0, 0.4)]),
            d: 0.3,
            ..SubordinatorMechanism::zero()
        };
        assert!(non_explosion_screen(&ProcessSpec::Cbci {
            psi: feller(),
            sigma: NotUpMechanism::zero(),
            phi: atomic_phi.clone(),
        }));
        let killed_psi = SpLpMechanism { c: 0.1, ..SpLpMechanism::zero() };
        assert!(!non_explosion_screen(&ProcessSpec::Cbci {
            psi: killed_psi,
            sigma: NotUpMechanism::zero(),
            phi: atomic_phi.clone(),
        }));
        let killed_pair = UncompensatedPair {
            rate: atomic_phi.clone(),
            jumps: SubordinatorMechanism { c: 0.2, ..SubordinatorMechanism::zero() },
        };
        assert!(!non_explosion_screen(&ProcessSpec::Decomposable {
            compensated: vec![],
            uncompensated: vec![killed_pair],
        }));
        let clean_pair =
            UncompensatedPair { rate: atomic_phi.clone(), jumps: atomic_phi.clone() };
        assert!(non_explosion_screen(&ProcessSpec::Decomposable {
            compensated: vec![],
            uncompensated: vec![clean_pair],
        }));
    }

    #[test]
    fn trajectories_start_at_the_initial_value_and_keep_absorption() {
        let psi = SpLpMechanism { c: 2.0, ..SpLpMechanism::zero() };
        let cfg = SimConfig::new(0.05, 2.0, 50, 139);
        let rows = sample_trajectories(&ProcessSpec::Cb { psi }, 1.0, &cfg, 5).unwrap();
        assert!(rows.iter().filter(|r| r.t == 0.0).all(|r| r.value == 1.0));
        for path in 0..5 {
            let mut seen_inf = false;
            for row in rows.iter().filter(|r| r.path == path) {
                if seen_inf {
                    assert_eq!(row.status, PathStatus::AbsorbedInf);
                    assert!(row.value.is_infinite());
                }
                if row.status == PathStatus::AbsorbedInf {
                    seen_inf = true;
                }
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_budgets() {
        assert!(SimConfig::new(0.0, 1.0, 10, 1).validate().is_err());
        assert!(SimConfig::new(0.1, 0.05, 10, 1).validate().is_err());
        assert!(SimConfig::new(0.01, 1.0, 0, 1).validate().is_err());
        let mut cfg = SimConfig::new(0.01, 1.0, 10, 1);
        cfg.small_jump_cut = 1.5;
        assert!(cfg.validate().is_err());
        cfg.small_jump_cut = 0.5;
        cfg.absorption_floor = f64::INFINITY;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stable_window_sampler_matches_its_moments() {
        let st = StablePart { alpha: 0.6, scale: 1.0 };
        let w = StableWindow::new(&st, 1e-3);
        let mut rng = path_rng(5, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| w.sample(&mut rng)).collect();
        let (mean, se, _) = mean_se(draws.iter().copied());
        let want = w.mean_window / w.mass_above;
        assert!((mean - want).abs() <= 3.0 * se, "sample mean {mean} vs {want}");
        assert!(draws.iter().all(|&u| (1e-3..=1.0).contains(&u)));
    }

    #[test]
    fn truncated_stable_branching_keeps_its_mean() {
        // compensated stable jumps: the compensator removes the window
        // mean, the sub-ε residual is dropped, so the value is a martingale
        let psi = SpLpMechanism {
            measure: JumpMeasureSpec {
                atoms: vec![],
                stable: Some(StablePart { alpha: 1.4, scale: 0.5 }),
                support_floor: 0.0,
            },
            ..SpLpMechanism::zero()
        };
        let cfg = SimConfig::new(0.01, 1.0, 20_000, 149);
        let terms = run_paths(&ProcessSpec::Cb { psi }, 1.0, &cfg).unwrap();
        let (mean, se, _) = mean_se(terms.iter().map(|t| t.value));
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }
}
