//! Noise levels, timestep plan and the time-dependent fusion weight.
//!
//! The fusion weight gates how much of the relit appearance enters the flow
//! target at time `t` (t runs from 1 at pure noise down to 0):
//!
//! ```text
//! lambda(t) = 0                                         t in (tau_g, 1]
//!           = lambda_max * sqrt((tau_g - t)/(tau_g - tau_r))  t in [tau_r, tau_g]
//!           = lambda_max                                t in [tau_s, tau_r)
//!           = (lambda_max - lambda_end)/tau_s * t + lambda_end   t in [0, tau_s)
//! ```
//!
//! A second, step-indexed preset holds the weight at zero for the first 60% of
//! a `K`-step trajectory and ramps linearly to the peak on the last step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the probe used by [`FusionSchedule::check_continuity`].
///
/// The ramp has a square-root cusp at `tau_g`, so a symmetric probe of width
/// `eps` reads `lambda_max * sqrt(eps / (tau_g - tau_r))` there. Keeping that
/// below `1e-6 * lambda_max` for ramps down to 0.05 long needs `eps <= 5e-14`.
pub const CONTINUITY_EPS: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    FourPhase,
    /// Zero for the first 60% of `steps`, then a linear ramp to the peak.
    TwoPhase { steps: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionSchedule {
    tau_g: f64,
    tau_r: f64,
    tau_s: f64,
    lambda_max: f64,
    lambda_end: f64,
    mode: ScheduleMode,
}

impl Default for FusionSchedule {
    fn default() -> Self {
        Self::four_phase(0.7, 0.5, 0.2, 0.5, 0.25).expect("default schedule is valid")
    }
}

impl FusionSchedule {
    pub fn four_phase(tau_g: f64, tau_r: f64, tau_s: f64, lambda_max: f64, lambda_end: f64) -> Result<Self> {
        let s = Self {
            tau_g,
            tau_r,
            tau_s,
            lambda_max,
            lambda_end,
            mode: ScheduleMode::FourPhase,
        };
        s.validate()?;
        Ok(s)
    }

    /// Two-phase preset over a `steps`-step plan peaking at `lambda_max`.
    pub fn two_phase(steps: usize, lambda_max: f64) -> Result<Self> {
        let s = Self {
            tau_g: 1.0,
            tau_r: 0.5,
            tau_s: 0.2,
            lambda_max,
            lambda_end: lambda_max,
            mode: ScheduleMode::TwoPhase { steps },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let in01 = |v: f64| (0.0..=1.0).contains(&v);
        if !in01(self.lambda_max) {
            return Err(Error::config(format!("lambda_max {} outside [0, 1]", self.lambda_max)));
        }
        match self.mode {
            ScheduleMode::FourPhase => {
                if !(0.0 < self.tau_s && self.tau_s < self.tau_r && self.tau_r < self.tau_g && self.tau_g <= 1.0) {
                    return Err(Error::config(format!(
                        "need 0 < tau_s < tau_r < tau_g <= 1, got tau_s={} tau_r={} tau_g={}",
                        self.tau_s, self.tau_r, self.tau_g
                    )));
                }
                if !(0.0..=self.lambda_max).contains(&self.lambda_end) {
                    return Err(Error::config(format!(
                        "lambda_end {} outside [0, lambda_max={}]",
                        self.lambda_end, self.lambda_max
                    )));
                }
            }
            ScheduleMode::TwoPhase { steps } => {
                if steps == 0 {
                    return Err(Error::config("two-phase preset needs at least one step"));
                }
            }
        }
        Ok(())
    }

    pub fn tau_g(&self) -> f64 {
        self.tau_g
    }

    pub fn tau_r(&self) -> f64 {
        self.tau_r
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_end(&self) -> f64 {
        self.lambda_end
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    /// `(t_zero, t_peak)` of the two-phase ramp: the weight is 0 at `t_zero`
    /// (the last zero step) and reaches the peak at `t_peak` (the last step).
    fn two_phase_knots(steps: usize) -> (f64, f64) {
        let k = steps as f64;
        let zero_steps = (0.6 * k).ceil().max(1.0);
        (1.0 - (zero_steps - 1.0) / k, 1.0 / k)
    }

    pub fn lambda_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(self.eval(t))
    }

    fn eval(&self, t: f64) -> f64 {
        match self.mode {
            ScheduleMode::FourPhase => {
                if t > self.tau_g {
                    0.0
                } else if t >= self.tau_r {
                    self.lambda_max * ((self.tau_g - t) / (self.tau_g - self.tau_r)).sqrt()
                } else if t >= self.tau_s {
                    self.lambda_max
                } else {
                    (self.lambda_max - self.lambda_end) / self.tau_s * t + self.lambda_end
                }
            }
            ScheduleMode::TwoPhase { steps } => {
                let (t_zero, t_peak) = Self::two_phase_knots(steps);
                if t >= t_zero {
                    0.0
                } else if t <= t_peak || t_zero <= t_peak {
                    self.lambda_max
                } else {
                    self.lambda_max * (t_zero - t) / (t_zero - t_peak)
                }
            }
        }
    }

    /// Phase boundaries inside (0, 1).
    pub fn boundaries(&self) -> Vec<f64> {
        match self.mode {
            ScheduleMode::FourPhase => vec![self.tau_g, self.tau_r, self.tau_s],
            ScheduleMode::TwoPhase { steps } => {
                let (a, b) = Self::two_phase_knots(steps);
                vec![a, b].into_iter().filter(|t| *t > 0.0 && *t < 1.0).collect()
            }
        }
    }

    /// Largest `|lambda(b + eps) - lambda(b - eps)|` over the phase boundaries
    /// and over a `grid`-point sweep of (0, 1), with `eps = CONTINUITY_EPS`.
    pub fn check_continuity(&self, grid: usize) -> Result<f64> {
        self.continuity_jump(grid, CONTINUITY_EPS)
    }

    pub fn continuity_jump(&self, grid: usize, eps: f64) -> Result<f64> {
        if grid < 1000 {
            return Err(Error::InvalidArgument(format!("grid {grid} < 1000")));
        }
        let probe = |t: f64| (self.eval((t + eps).min(1.0)) - self.eval((t - eps).max(0.0))).abs();
        let at_bounds = self.boundaries().into_iter().map(probe).fold(0.0, f64::max);
        let on_grid = (1..grid)
            .map(|i| probe(i as f64 / grid as f64))
            .fold(0.0, f64::max);
        Ok(at_bounds.max(on_grid))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaForm {
    /// sigma(t) = t
    #[default]
    Linear,
    /// sigma(t) = 1 - cos(pi t / 2)
    Cosine,
}

impl SigmaForm {
    pub fn sigma(self, t: f64) -> f64 {
        match self {
            SigmaForm::Linear => t,
            SigmaForm::Cosine => 1.0 - (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }
}

/// Discrete solver plan: `steps` Euler steps from t = 1 to t = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    /// `steps + 1` knots, `times[0] = 1`, `times[steps] = 0`.
    times: Vec<f64>,
    sigmas: Vec<f64>,
    delta: f64,
    form: SigmaForm,
}

impl StepPlan {
    pub fn new(steps: usize, form: SigmaForm, delta: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("step plan needs K >= 1"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::config(format!("stabilizer delta {delta} must be > 0")));
        }
        let k = steps as f64;
        let times: Vec<f64> = (0..=steps).map(|i| 1.0 - i as f64 / k).collect();
        let mut sigmas: Vec<f64> = times.iter().map(|&t| form.sigma(t)).collect();
        sigmas[steps] = 0.0;
        Ok(Self {
            times,
            sigmas,
            delta,
            form,
        })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Time at the start of step `k` (0-based).
    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn t_next(&self, k: usize) -> f64 {
        self.times[k + 1]
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigmas[k]
    }

    pub fn sigma_next(&self, k: usize) -> f64 {
        self.sigmas[k + 1]
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn form(&self) -> SigmaForm {
        self.form
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// Convenience constructor mirroring the other operations' naming.
pub fn make_step_plan(steps: usize, form: SigmaForm, delta: f64) -> Result<StepPlan> {
    StepPlan::new(steps, form, delta)
}
