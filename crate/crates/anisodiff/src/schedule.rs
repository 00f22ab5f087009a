//! The geometric noise-injection schedule.
//!
//! A run uses `T` discrete steps. The cumulative injection level
//! `alpha_bar(t)` starts near zero, ends near one, and interpolates
//! geometrically with a warp exponent `p` that spends more of the
//! budget near the start:
//!
//! ```text
//! alpha_bar(t) = a1 * (aT / a1) ^ (((t - 1) / (T - 1)) ^ p)
//! ```
//!
//! Both endpoints are assigned exactly (the closed form evaluates to
//! them mathematically, but floating-point exponentiation can drift in
//! the last bit). Per-step increments `alpha(t)` are the first
//! differences, with `alpha(1) = alpha_bar(1)`, and the reverse-process
//! interpolation weight is `beta(t) = alpha(t) / alpha_bar(t)`, which
//! makes `beta(1) = 1` identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs that determine a schedule. Stored in checkpoints so a loaded
/// model rebuilds exactly the schedule it was trained with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Number of diffusion steps T.
    pub steps: usize,
    pub alpha_bar_1: f64,
    pub alpha_bar_t: f64,
    /// Warp exponent p in (0, inf); values below 1 front-load noise.
    pub warp: f64,
    /// Global noise magnitude kappa.
    pub kappa: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 6,
            alpha_bar_1: 0.001,
            alpha_bar_t: 0.999,
            warp: 0.3,
            kappa: 0.5,
        }
    }
}

/// Which closed form supplies the reverse-step noise level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `kappa^2 * beta_t * (1 - beta_t)` per unit guidance.
    Paper,
    /// `kappa^2 * beta_t * alpha_bar(t-1)`, the variance of the exact
    /// Gaussian posterior of the forward chain. Differs from `Paper`
    /// by a factor `1 / alpha_bar(t)`.
    ExactPosterior,
}

impl std::fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VarianceMode::Paper => write!(f, "paper"),
            VarianceMode::ExactPosterior => write!(f, "exact_posterior"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl NoiseSchedule {
    pub fn geometric(config: ScheduleConfig) -> Result<Self> {
        let cfg_err = |field: &str, message: String| Error::Config {
            field: field.into(),
            message,
        };
        let ScheduleConfig {
            steps,
            alpha_bar_1: a1,
            alpha_bar_t: at,
            warp,
            kappa,
        } = config;
        if steps < 2 {
            return Err(cfg_err("steps", format!("need at least 2 steps, got {steps}")));
        }
        if !(a1 > 0.0 && a1 < 1.0) {
            return Err(cfg_err("alpha_bar_1", format!("{a1} outside (0, 1)")));
        }
        if !(at > 0.0 && at < 1.0) {
            return Err(cfg_err("alpha_bar_t", format!("{at} outside (0, 1)")));
        }
        if a1 >= at {
            return Err(cfg_err(
                "alpha_bar_1",
                format!("{a1} must be strictly below alpha_bar_t = {at}"),
            ));
        }
        if !(warp > 0.0) || !warp.is_finite() {
            return Err(cfg_err("warp", format!("{warp} must be positive and finite")));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(cfg_err("kappa", format!("{kappa} must be positive and finite")));
        }

        let ratio = at / a1;
        let mut alpha_bar = Vec::with_capacity(steps);
        for t in 1..=steps {
            let v = if t == 1 {
                a1
            } else if t == steps {
                at
            } else {
                let frac = (t - 1) as f64 / (steps - 1) as f64;
                a1 * ratio.powf(frac.powf(warp))
            };
            alpha_bar.push(v);
        }
        for pair in alpha_bar.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Invariant(format!(
                    "schedule is not strictly increasing: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }

        let mut alpha = Vec::with_capacity(steps);
        let mut beta = Vec::with_capacity(steps);
        for t in 0..steps {
            let a = if t == 0 {
                alpha_bar[0]
            } else {
                alpha_bar[t] - alpha_bar[t - 1]
            };
            alpha.push(a);
            beta.push(a / alpha_bar[t]);
        }

        Ok(NoiseSchedule {
            config,
            alpha_bar,
            alpha,
            beta,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn kappa(&self) -> f64 {
        self.config.kappa
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                value: t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// Cumulative level at step t (1-based).
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    /// Cumulative level at step t-1, defined as 0 for t = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(if t == 1 { 0.0 } else { self.alpha_bar[t - 2] })
    }

    /// Per-step increment at step t.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha[t - 1])
    }

    /// Reverse interpolation weight at step t.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta[t - 1])
    }

    /// Standard deviation of the forward marginal at step t, per unit
    /// of guidance: `kappa * sqrt(alpha_bar(t))`.
    pub fn marginal_std_coeff(&self, t: usize) -> Result<f64> {
        Ok(self.kappa() * self.alpha_bar(t)?.sqrt())
    }

    /// Standard deviation injected by the reverse transition at step t,
    /// per unit of guidance. The last transition (t = 1) is
    /// deterministic, so its coefficient is zero.
    pub fn reverse_std_coeff(&self, t: usize, mode: VarianceMode) -> Result<f64> {
        self.check_t(t)?;
        if t == 1 {
            return Ok(0.0);
        }
        let beta = self.beta[t - 1];
        let var_unit = match mode {
            VarianceMode::Paper => beta * (1.0 - beta),
            VarianceMode::ExactPosterior => beta * self.alpha_bar[t - 2],
        };
        Ok(self.kappa() * var_unit.sqrt())
    }

    /// Full table of per-step values, for inspection and golden files.
    pub fn rows(&self, mode: VarianceMode) -> Vec<ScheduleRow> {
        (1..=self.steps())
            .map(|t| ScheduleRow {
                t,
                alpha_bar: self.alpha_bar[t - 1],
                alpha: self.alpha[t - 1],
                beta: self.beta[t - 1],
                reverse_std_coeff: self.reverse_std_coeff(t, mode).expect("t in range"),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t: usize,
    pub alpha_bar: f64,
    pub alpha: f64,
    pub beta: f64,
    pub reverse_std_coeff: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Expected values for the default schedule, computed with 50-digit
    // arithmetic from the closed form and rounded to f64.
    const ALPHA_BAR: [f64; 6] = [
        0.001,
        0.0709305748697933745,
        0.18995174979700131859,
        0.37443705966471612287,
        0.63876184553991044151,
        0.999,
    ];
    const BETA: [f64; 6] = [
        1.0,
        0.98590170738308985784,
        0.62658635708491313381,
        0.49270045553960209836,
        0.41380803772300306744,
        0.36059875321330286135,
    ];
    const REV_PAPER_T2: f64 = 0.058948135598588101441;
    const REV_PAPER_T6: f64 = 0.24008711564467300703;
    const REV_EXACT_T6: f64 = 0.23996704206094638524;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::geometric(ScheduleConfig::default()).unwrap()
    }

    #[test]
    fn endpoints_are_bit_exact() {
        let s = default_schedule();
        assert_eq!(s.alpha_bar(1).unwrap().to_bits(), 0.001f64.to_bits());
        assert_eq!(s.alpha_bar(6).unwrap().to_bits(), 0.999f64.to_bits());
        assert_eq!(s.beta(1).unwrap().to_bits(), 1.0f64.to_bits());
    }

    #[test]
    fn interior_values_match_high_precision_reference() {
        let s = default_schedule();
        for t in 1..=6 {
            let got = s.alpha_bar(t).unwrap();
            let want = ALPHA_BAR[t - 1];
            // powf and the first-difference each cost a few ulps.
            assert!(
                (got - want).abs() <= 8.0 * f64::EPSILON * want,
                "alpha_bar({t}): got {got:.20}, want {want:.20}"
            );
            let got_b = s.beta(t).unwrap();
            let want_b = BETA[t - 1];
            assert!(
                (got_b - want_b).abs() <= 8.0 * f64::EPSILON * want_b,
                "beta({t}): got {got_b:.20}, want {want_b:.20}"
            );
        }
    }

    #[test]
    fn reverse_std_coeff_matches_reference_in_both_modes() {
        let s = default_schedule();
        let p2 = s.reverse_std_coeff(2, VarianceMode::Paper).unwrap();
        let p6 = s.reverse_std_coeff(6, VarianceMode::Paper).unwrap();
        let e6 = s.reverse_std_coeff(6, VarianceMode::ExactPosterior).unwrap();
        assert!((p2 - REV_PAPER_T2).abs() < 1e-15, "{p2:.20}");
        assert!((p6 - REV_PAPER_T6).abs() < 1e-15, "{p6:.20}");
        assert!((e6 - REV_EXACT_T6).abs() < 1e-15, "{e6:.20}");
        assert_eq!(s.reverse_std_coeff(1, VarianceMode::Paper).unwrap(), 0.0);
        assert_eq!(
            s.reverse_std_coeff(1, VarianceMode::ExactPosterior).unwrap(),
            0.0
        );
    }

    #[test]
    fn increments_telescope_back_to_cumulative_levels() {
        let s = default_schedule();
        let mut acc = 0.0;
        for t in 1..=6 {
            acc += s.alpha(t).unwrap();
            assert!((acc - s.alpha_bar(t).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_t_is_rejected() {
        let s = default_schedule();
        assert!(matches!(s.alpha_bar(0), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(s.alpha_bar(7), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(
            s.reverse_std_coeff(7, VarianceMode::Paper),
            Err(Error::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |f: fn(&mut ScheduleConfig)| {
            let mut c = ScheduleConfig::default();
            f(&mut c);
            NoiseSchedule::geometric(c)
        };
        assert!(bad(|c| c.steps = 1).is_err());
        assert!(bad(|c| c.alpha_bar_1 = 0.0).is_err());
        assert!(bad(|c| c.alpha_bar_t = 1.0).is_err());
        assert!(bad(|c| {
            c.alpha_bar_1 = 0.9;
            c.alpha_bar_t = 0.1;
        })
        .is_err());
        assert!(bad(|c| c.warp = 0.0).is_err());
        assert!(bad(|c| c.kappa = -1.0).is_err());
    }

    #[test]
    fn rows_cover_every_step_once() {
        let s = default_schedule();
        let rows = s.rows(VarianceMode::Paper);
        assert_eq!(rows.len(), 6);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.t, i + 1);
            assert_eq!(row.alpha_bar, s.alpha_bar(row.t).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_schedule_is_monotone_and_betas_in_unit_interval(
            steps in 2usize..40,
            a1_exp in -5.0f64..-0.5,
            gap in 0.01f64..0.9,
            warp in 0.05f64..3.0,
        ) {
            let a1 = 10f64.powf(a1_exp);
            let at = (1.0 - gap * (1.0 - a1)).max(a1 * 1.0001).min(0.9999);
            prop_assume!(a1 < at && at < 1.0);
            let s = NoiseSchedule::geometric(ScheduleConfig {
                steps,
                alpha_bar_1: a1,
                alpha_bar_t: at,
                warp,
                kappa: 0.5,
            }).unwrap();
            let mut prev = 0.0;
            for t in 1..=steps {
                let ab = s.alpha_bar(t).unwrap();
                prop_assert!(ab > prev);
                prev = ab;
                let beta = s.beta(t).unwrap();
                prop_assert!(beta > 0.0 && beta <= 1.0, "beta({}) = {}", t, beta);
                prop_assert!(s.alpha(t).unwrap() > 0.0);
            }
            prop_assert_eq!(s.beta(1).unwrap(), 1.0);
        }
    }
}
