//! Stochastic Gumbel Annealing: as the temperature falls, relaxed values
//! collapse onto the integer each one is closest to.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sanr::quant::{sga_sample, SgaSchedule, SgaState};

fn main() -> sanr::Result<()> {
    let y = [0.1f32, 0.45, 0.55, 0.9, -1.3, 2.5];
    let schedule = SgaSchedule { total_steps: 1000, ..SgaSchedule::default() };
    let mut state = SgaState::new(schedule, ChaCha8Rng::seed_from_u64(5))?;
    for step in 0..=1000 {
        if step % 250 == 0 {
            let tau = state.temperature();
            let s = sga_sample(&y, tau, &mut state.rng)?;
            let rounded: Vec<String> = s.values.iter().map(|v| format!("{v:6.3}")).collect();
            println!("step {step:>4}  tau {tau:.3}  {}", rounded.join(" "));
        }
        state.advance();
    }
    Ok(())
}
