//! Range codes Laplace-distributed integers and compares the payload with
//! the rate the Laplace model predicts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use sanr::coder::{range_decode, range_encode, LaplaceCdf};
use sanr::entropy::{fit_laplace, laplace_rate};

fn main() -> sanr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for b in [0.3, 1.0, 4.0, 25.0] {
        let e = Exp::new(1.0 / b).unwrap();
        let symbols: Vec<i32> = (0..20_000)
            .map(|_| {
                let x: f64 = e.sample(&mut rng);
                (if rng.gen_bool(0.5) { x } else { -x }).round() as i32
            })
            .collect();
        let params = fit_laplace(&symbols)?;
        let lo = *symbols.iter().min().unwrap();
        let hi = *symbols.iter().max().unwrap();
        let cdf = |_| LaplaceCdf::new(lo, hi, params.mu as f64, params.b as f64);

        let bytes = range_encode(&symbols, cdf)?;
        assert_eq!(range_decode(&bytes, symbols.len(), cdf)?, symbols);
        let estimate = laplace_rate(&symbols, params).bits;
        println!(
            "b = {b:>5}: fit b = {:.3}, estimate {:>8.0} bits, coded {:>8} bits ({:+.2}%)",
            params.b,
            estimate,
            bytes.len() * 8,
            ((bytes.len() * 8) as f64 / estimate - 1.0) * 100.0
        );
    }
    Ok(())
}
