//! Deterministic SIR dynamics on a weekly grid.
//!
//! The recursion advances `(S, I, R)` by one classical fourth-order
//! Runge-Kutta step per week. Week 1 of a trajectory holds the initial
//! condition itself; week `t` is `t - 1` steps past it.

use crate::error::{Error, Result};
use crate::num::Real;

/// Negative compartment values above this threshold are treated as round-off and clamped to 0.
pub const CLAMP_SLACK: f64 = 1e-8;

/// Initial conditions and rates of one SIR curve.
///
/// `r0` is derived as `1 - s0 - i0`, `gamma` as `rho * beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirParams<T> {
    s0: T,
    i0: T,
    r0: T,
    beta: T,
    rho: T,
}

impl<T: Real> SirParams<T> {
    pub fn new(s0: T, i0: T, beta: T, rho: T) -> Result<Self> {
        if [s0, i0, beta, rho].iter().any(|v| v.is_nan()) {
            return Err(Error::NanInput("SirParams::new"));
        }
        if !(s0 >= T::zero() && s0 <= T::one()) {
            return Err(Error::InvalidParams(format!("s0 = {s0} outside [0, 1]")));
        }
        if !(i0 >= T::zero() && s0 + i0 <= T::one()) {
            return Err(Error::InvalidParams(format!("i0 = {i0} must be >= 0 with s0 + i0 <= 1")));
        }
        if !(beta > T::zero() && beta.is_finite()) {
            return Err(Error::InvalidParams(format!("beta = {beta} must be positive")));
        }
        if !(rho > T::zero() && rho.is_finite()) {
            return Err(Error::InvalidParams(format!("rho = {rho} must be positive")));
        }
        Ok(Self { s0, i0, r0: T::one() - s0 - i0, beta, rho })
    }

    pub fn s0(&self) -> T {
        self.s0
    }
    pub fn i0(&self) -> T {
        self.i0
    }
    pub fn r0(&self) -> T {
        self.r0
    }
    pub fn beta(&self) -> T {
        self.beta
    }
    pub fn rho(&self) -> T {
        self.rho
    }
    pub fn gamma(&self) -> T {
        self.rho * self.beta
    }
}

/// Compartment proportions at one week.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirState<T> {
    pub s: T,
    pub i: T,
    pub r: T,
}

impl<T: Real> SirState<T> {
    pub fn new(s: T, i: T, r: T) -> Self {
        Self { s, i, r }
    }

    pub fn total(&self) -> T {
        self.s + self.i + self.r
    }
}

/// The twelve stage increments of one weekly step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RkStage<T> {
    pub ks: [T; 4],
    pub ki: [T; 4],
    pub kr: [T; 4],
}

impl<T: Real> RkStage<T> {
    /// Stage increments for a step of length `h` weeks (the weekly recursion uses `h = 1`).
    pub fn compute(state: SirState<T>, beta: T, gamma: T, h: T) -> Self {
        let half = T::lit(0.5);
        let (s, i) = (state.s, state.i);

        let ks1 = -beta * s * i * h;
        let ki1 = (beta * s * i - gamma * i) * h;
        let kr1 = gamma * i * h;

        let (s2, i2) = (s + half * ks1, i + half * ki1);
        let ks2 = -beta * s2 * i2 * h;
        let ki2 = (beta * s2 * i2 - gamma * i2) * h;
        let kr2 = gamma * i2 * h;

        let (s3, i3) = (s + half * ks2, i + half * ki2);
        let ks3 = -beta * s3 * i3 * h;
        let ki3 = (beta * s3 * i3 - gamma * i3) * h;
        let kr3 = gamma * i3 * h;

        let (s4, i4) = (s + ks3, i + ki3);
        let ks4 = -beta * s4 * i4 * h;
        let ki4 = (beta * s4 * i4 - gamma * i4) * h;
        let kr4 = gamma * i4 * h;

        Self { ks: [ks1, ks2, ks3, ks4], ki: [ki1, ki2, ki3, ki4], kr: [kr1, kr2, kr3, kr4] }
    }

    fn combine(k: &[T; 4]) -> T {
        let two = T::lit(2.0);
        (k[0] + two * k[1] + two * k[2] + k[3]) / T::lit(6.0)
    }

    pub fn apply(&self, state: SirState<T>) -> SirState<T> {
        SirState {
            s: state.s + Self::combine(&self.ks),
            i: state.i + Self::combine(&self.ki),
            r: state.r + Self::combine(&self.kr),
        }
    }
}

/// Advances the state by one week.
pub fn rk4_step<T: Real>(state: SirState<T>, beta: T, gamma: T) -> Result<SirState<T>> {
    if [state.s, state.i, state.r, beta, gamma].iter().any(|v| v.is_nan()) {
        return Err(Error::NanInput("rk4_step"));
    }
    Ok(RkStage::compute(state, beta, gamma, T::one()).apply(state))
}

/// Weekly infectious (and S, R) paths for one season.
#[derive(Debug, Clone, PartialEq)]
pub struct SirTrajectory<T> {
    pub s: Vec<T>,
    pub i: Vec<T>,
    pub r: Vec<T>,
    pub params: SirParams<T>,
}

impl<T: Real> SirTrajectory<T> {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Infectious proportion at 1-based season week `week`.
    pub fn infectious(&self, week: usize) -> T {
        self.i[week - 1]
    }

    /// 1-based week of the maximum infectious value (earliest on ties) and the value.
    pub fn peak(&self) -> (usize, T) {
        let mut best = (1, self.i[0]);
        for (idx, &v) in self.i.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (idx + 1, v);
            }
        }
        best
    }
}

/// Solves the SIR recursion for `weeks` weeks, one RK4 step per week.
pub fn solve_sir<T: Real>(params: &SirParams<T>, weeks: usize) -> Result<SirTrajectory<T>> {
    solve_sir_substeps(params, weeks, 1)
}

/// Same as [`solve_sir`] with `substeps` equal RK4 steps inside each week.
pub fn solve_sir_substeps<T: Real>(
    params: &SirParams<T>,
    weeks: usize,
    substeps: usize,
) -> Result<SirTrajectory<T>> {
    if weeks == 0 {
        return Err(Error::InvalidParams("trajectory length must be >= 1".into()));
    }
    if substeps == 0 {
        return Err(Error::InvalidParams("substeps must be >= 1".into()));
    }
    let (beta, gamma) = (params.beta(), params.gamma());
    let h = T::one() / T::from_usize(substeps).unwrap();
    let mut s = Vec::with_capacity(weeks);
    let mut i = Vec::with_capacity(weeks);
    let mut r = Vec::with_capacity(weeks);
    let mut state = SirState::new(params.s0(), params.i0(), params.r0());
    for week in 1..=weeks {
        if week > 1 {
            for _ in 0..substeps {
                state = RkStage::compute(state, beta, gamma, h).apply(state);
            }
            state = check_state(state, week)?;
        }
        s.push(state.s);
        i.push(state.i);
        r.push(state.r);
    }
    Ok(SirTrajectory { s, i, r, params: *params })
}

fn check_state<T: Real>(state: SirState<T>, week: usize) -> Result<SirState<T>> {
    let slack = T::lit(CLAMP_SLACK);
    let fix = |v: T, name: &'static str| -> Result<T> {
        if v.is_nan() || v < -slack || v > T::one() + slack {
            Err(Error::NumericalBlowUp { week, compartment: name, value: v.to_f64().unwrap_or(f64::NAN) })
        } else if v < T::zero() {
            Ok(T::zero())
        } else {
            Ok(v)
        }
    };
    Ok(SirState { s: fix(state.s, "S")?, i: fix(state.i, "I")?, r: fix(state.r, "R")? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpidemicClass {
    Epidemic,
    NonEpidemic,
}

/// Epidemic iff `s0 > rho`; ties are non-epidemic.
pub fn classify_epidemic<T: Real>(params: &SirParams<T>) -> EpidemicClass {
    if params.s0() > params.rho() {
        EpidemicClass::Epidemic
    } else {
        EpidemicClass::NonEpidemic
    }
}
