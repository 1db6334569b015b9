//! Latent rate under the channel-wise autoregressive context model: the
//! first channel uses its own Laplace fit, every later channel is predicted
//! from the one before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sanr::entropy::{fit_laplace, latent_rate, ContextModel, LatentView};

fn main() -> sanr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (channels, h, w) = (4, 16, 16);
    let plane = h * w;

    // each channel repeats the previous one with a little noise
    let mut data = vec![0.0f32; channels * plane];
    for i in 0..plane {
        data[i] = rng.gen_range(-3i32..=3) as f32;
    }
    for c in 1..channels {
        for i in 0..plane {
            data[c * plane + i] = data[(c - 1) * plane + i] + rng.gen_range(-1i32..=1) as f32;
        }
    }

    let view = LatentView::new(channels, h, w, &data)?;
    let first = fit_laplace(view.channel(0))?;
    let untrained = ContextModel::new(8, &mut rng);
    let flat = ContextModel::constant(8, 0.0, 3.0);
    for (name, ctx) in [("random context", &untrained), ("constant N(0, 3)", &flat)] {
        let est = latent_rate(view, ctx, first)?;
        let per: Vec<f64> = est.per_element.unwrap().chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect();
        println!("{name:>18}: {:.0} bits, bits/element by channel {per:.2?}", est.bits);
    }
    Ok(())
}
