use proptest::prelude::*;
use sanr::coder::{range_decode, range_encode, Cdf, LaplaceCdf};

fn case() -> impl Strategy<Value = (i32, i32, f64, f64, Vec<i32>)> {
    (-50i32..50, 0i32..120, -80.0f64..80.0, -3.0f64..2.5).prop_flat_map(|(lo, span, mu, log_b)| {
        let hi = lo + span;
        (Just(lo), Just(hi), Just(mu), Just(10f64.powf(log_b)), prop::collection::vec(lo..=hi, 0..200))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn range_coder_round_trip((lo, hi, mu, b, symbols) in case()) {
        let cdf = |_| LaplaceCdf::new(lo, hi, mu, b);
        let bytes = range_encode(&symbols, cdf).unwrap();
        prop_assert_eq!(range_decode(&bytes, symbols.len(), cdf).unwrap(), symbols);
    }

    #[test]
    fn every_symbol_is_codable(lo in -1000i32..1000, span in 0i32..3000, mu in -5000.0f64..5000.0, log_b in -6.0f64..4.0) {
        let cdf = LaplaceCdf::new(lo, lo + span, mu, 10f64.powf(log_b)).unwrap();
        prop_assert_eq!(cdf.cum(lo), 0);
        prop_assert_eq!(cdf.cum(lo + span + 1), sanr::coder::TOTAL);
        for s in lo..=lo + span {
            prop_assert!(cdf.cum(s + 1) > cdf.cum(s));
        }
    }
}

#[test]
fn varying_models_per_symbol() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let models: Vec<(f64, f64)> = (0..5000).map(|_| (rng.gen_range(-30.0..30.0), rng.gen_range(0.01..30.0))).collect();
    let symbols: Vec<i32> = (0..5000).map(|_| rng.gen_range(-40..=40)).collect();
    let cdf = |i: usize| LaplaceCdf::new(-40, 40, models[i].0, models[i].1);
    let bytes = range_encode(&symbols, cdf).unwrap();
    assert_eq!(range_decode(&bytes, symbols.len(), cdf).unwrap(), symbols);
}
