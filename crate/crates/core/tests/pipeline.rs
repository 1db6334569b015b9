use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sanr::bitstream::{self, SectionKind};
use sanr::entropy::{latent_rate, ContextModel, LaplaceParams, LatentView};
use sanr::eval;
use sanr::lightfield::{load_lightfield, make_synthetic_lightfield, save_lightfield, ViewNaming};
use sanr::model::{ModelConfig, SanrModel};
use sanr::nn::Feature;
use sanr::train::{self, TrainConfig};
use sanr::Error;

#[test]
fn lightfield_png_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let lf = make_synthetic_lightfield(24, 40, 2, 3, 0.5, 9).unwrap();
    let naming = ViewNaming::new("sai_{u}-{v}.png").unwrap();
    save_lightfield(&lf, tmp.path(), &naming, "t").unwrap();
    let back = load_lightfield(tmp.path(), &naming).unwrap();
    assert_eq!(back, lf);
    assert_eq!(eval::psnr(&lf, &back).unwrap().mean, eval::PSNR_CAP_DB);

    std::fs::remove_file(tmp.path().join("sai_01-02.png")).unwrap();
    assert!(matches!(load_lightfield(tmp.path(), &naming), Err(Error::MissingView(1, 2))));
}

#[test]
fn latent_channel_cost_ignores_later_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ctx = ContextModel::new(5, &mut rng);
    let (c, h, w) = (5, 4, 6);
    let plane = h * w;
    let first = LaplaceParams::new(0.5, 1.0).unwrap();
    let mut data: Vec<f32> = (0..c * plane).map(|_| rng.gen_range(-3i32..=3) as f32).collect();
    let before = latent_rate(LatentView::new(c, h, w, &data).unwrap(), &ctx, first).unwrap().per_element.unwrap();
    for v in &mut data[3 * plane..] {
        *v += 17.0;
    }
    let after = latent_rate(LatentView::new(c, h, w, &data).unwrap(), &ctx, first).unwrap().per_element.unwrap();
    assert_eq!(before[..3 * plane], after[..3 * plane]);
    assert_ne!(before[3 * plane..], after[3 * plane..]);

    let f = Feature::from_vec(c, h, w, data.clone());
    let (payload, lo, hi) = bitstream::encode_latent_level(&f, &ctx, first).unwrap();
    let back = bitstream::decode_latent_level(&payload, c, h, w, &ctx, first, lo, hi).unwrap();
    assert_eq!(back.data, data);
}

#[test]
fn reported_rate_tracks_the_stream() {
    let lf = make_synthetic_lightfield(32, 32, 2, 2, 1.0, 5).unwrap();
    let mcfg = ModelConfig { rank: 3, c_l: 3, ctx_width: 4, ..ModelConfig::new(6, 2, 2, 32, 32) };
    let tcfg = TrainConfig { lambda: 1e-3, max_epochs: 3, sga_epochs: 1, samples_per_sai: 10, seed: 2, ..TrainConfig::default() };
    let (m, report) = train::fit(&lf, &mcfg, &tcfg).unwrap();
    let fin = bitstream::finalize(&m).unwrap();
    let bytes = bitstream::serialize_model(&fin).unwrap();
    let info = bitstream::inspect(&bytes).unwrap();
    let coded: usize = info.bytes_of(SectionKind::Weights) + info.bytes_of(SectionKind::Latents);

    // entropy-coded sections against the estimator's bits, with the per-record
    // headers as the only slack
    let est: f64 = bitstream::tensor_costs(&fin).unwrap().iter().map(|c| c.estimated_bits).sum();
    let records = 20 * 40 + 4 * 40;
    assert!(((coded * 8) as f64 - est).abs() <= 0.05 * est + (records * 8) as f64, "{coded} bytes vs {est} bits");
    assert!(report.estimated_bpp > 0.0 && report.epochs.last().unwrap().phase == "sga");
    assert_eq!(report.epochs.len(), 4);
}

#[test]
fn base_model_is_not_a_stream() {
    let cfg = ModelConfig { scene_codes: false, ..ModelConfig::new(4, 1, 2, 16, 16) };
    let m = SanrModel::new(cfg.clone(), 1).unwrap();
    assert_eq!(m.latent_count(), 0);
    assert!(bitstream::finalize(&m).is_err());
    let lf = make_synthetic_lightfield(16, 16, 1, 2, 1.0, 1).unwrap();
    let (point, _) = eval::ptq_point(&m, &lf, 8).unwrap();
    assert_eq!(point.bits, eval::ptq_bits(&cfg, 8).unwrap());
    assert!(point.psnr_db > 0.0);
}
