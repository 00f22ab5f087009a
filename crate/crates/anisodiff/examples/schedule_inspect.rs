//! Prints the default noise schedule and how its reverse-process noise
//! coefficients change between the two variance conventions.
//!
//! Run with: cargo run --example schedule_inspect

use anisodiff::schedule::{NoiseSchedule, ScheduleConfig, VarianceMode};

fn main() -> anisodiff::Result<()> {
    let config = ScheduleConfig::default();
    let schedule = NoiseSchedule::geometric(config)?;

    println!("geometric schedule: T = {}, kappa = {}", schedule.steps(), schedule.kappa());
    println!();
    println!("{:>2}  {:>22}  {:>22}  {:>22}", "t", "alpha_bar", "alpha", "beta");
    for t in 1..=schedule.steps() {
        println!(
            "{:>2}  {:>22.16e}  {:>22.16e}  {:>22.16e}",
            t,
            schedule.alpha_bar(t)?,
            schedule.alpha(t)?,
            schedule.beta(t)?
        );
    }

    println!();
    println!("reverse noise coefficient per step (scales g at each transition):");
    println!("{:>2}  {:>22}  {:>22}", "t", "default", "exact_posterior");
    for t in (1..=schedule.steps()).rev() {
        println!(
            "{:>2}  {:>22.16e}  {:>22.16e}",
            t,
            schedule.reverse_std_coeff(t, VarianceMode::Paper)?,
            schedule.reverse_std_coeff(t, VarianceMode::ExactPosterior)?
        );
    }

    println!();
    println!(
        "forward marginal std coefficient at T: {:.6} (fraction of a unit-guidance bin)",
        schedule.marginal_std_coeff(schedule.steps())?
    );
    println!("the t = 1 reverse transition is deterministic: the chain lands on the estimate");
    Ok(())
}
