mod common;

use common::{crop, fixture};
use n2l::bitstream::format::{bpp, Header, HEADER_LEN};
use n2l::bitstream::search::{evaluate, mesh_search};
use n2l::bitstream::{deserialize, quantize_model};
use n2l::codec::{decode, decode_model, dump_latent, encode, EncodeOptions};
use n2l::model::{count_params, Setting};
use n2l::noise::{CodecInputs, Seed};
use n2l::train::{overfit, psnr};
use n2l::Error;

fn quick(setting: Setting, steps: usize) -> EncodeOptions {
    let mut o = EncodeOptions::new(setting, steps);
    o.train.eval_every = 0;
    o
}

#[test]
fn decoder_reproduces_encoder_psnr_and_rate() {
    let img = crop(&fixture("chelsea_64.png"), 24, 32);
    let mut opts = quick(Setting::S0, 60);
    opts.seed = 11;
    opts.lambda = Some(50.0);
    let enc = encode(&img, &opts, |_| {}).unwrap();

    let dec = decode(&enc.stream).unwrap();
    let p = psnr(&dec.image, &img).unwrap();
    assert!((p - enc.psnr_db).abs() < 0.01, "{p} vs {}", enc.psnr_db);
    assert_eq!(enc.bpp, 8.0 * enc.stream.len() as f64 / (24.0 * 32.0));
    assert_eq!(dec.parsed.bpp(), enc.bpp);
    assert_eq!(dec.parsed.header, enc.header);
    assert_eq!(dec.parsed.total_bytes(), enc.stream.len());

    let again = decode(&enc.stream).unwrap();
    assert_eq!(again.image.data(), dec.image.data());
}

#[test]
fn larger_setting_costs_more_bytes() {
    let img = crop(&fixture("coffee_64.png"), 16, 16);
    let mut s0 = quick(Setting::S0, 20);
    s0.lambda = Some(0.0);
    s0.exponents = -8..=-8;
    let mut s4 = s0.clone();
    s4.setting = Setting::S4;
    let a = encode(&img, &s0, |_| {}).unwrap();
    let b = encode(&img, &s4, |_| {}).unwrap();
    assert!(count_params(&Setting::S4.config()) > count_params(&Setting::S0.config()));
    assert!(
        b.stream.len() > a.stream.len(),
        "{} vs {}",
        b.stream.len(),
        a.stream.len()
    );
}

#[test]
fn ablation_flags_survive_the_round_trip() {
    let img = crop(&fixture("astronaut_64.png"), 16, 16);
    for (no_gpp, single) in [(true, false), (false, true), (true, true)] {
        let mut o = quick(Setting::S1, 10);
        o.no_gpp = no_gpp;
        o.single_scale = single;
        o.exponents = -6..=-6;
        let enc = encode(&img, &o, |_| {}).unwrap();
        let d = decode_model(&enc.stream).unwrap();
        assert_eq!(d.config, o.config());
        assert_eq!(d.config.has_gpp(), !no_gpp);
        assert_eq!(d.config.is_single_scale(), single);
        let p = psnr(&decode(&enc.stream).unwrap().image, &img).unwrap();
        assert!((p - enc.psnr_db).abs() < 0.01);
    }
}

#[test]
fn latent_dump_has_image_sized_planes() {
    let img = crop(&fixture("astronaut_64.png"), 16, 24);
    let mut o = quick(Setting::S0, 5);
    o.exponents = -6..=-6;
    let enc = encode(&img, &o, |_| {}).unwrap();
    let d = decode_model(&enc.stream).unwrap();
    let dump = dump_latent(&d, 13).unwrap();
    assert_eq!(dump.noise.len(), 16 * 24);
    assert_eq!(dump.latent.len(), 16 * 24);
    assert_eq!(dump.noise, d.inputs.fused().channel(13));
    assert_ne!(dump.latent, dump.noise);
    let again = dump_latent(&decode_model(&enc.stream).unwrap(), 13).unwrap();
    assert_eq!(again.noise, dump.noise);
    assert_eq!(again.latent, dump.latent);
    assert!(dump_latent(&d, 48).is_err());
}

#[test]
fn corrupted_streams_are_rejected() {
    let img = crop(&fixture("coffee_64.png"), 16, 16);
    let mut o = quick(Setting::S0, 5);
    o.exponents = -5..=-5;
    let stream = encode(&img, &o, |_| {}).unwrap().stream;

    let mut bad = stream.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::Unsupported(_))));
    let mut bad = stream.clone();
    bad[4] = 9;
    assert!(matches!(decode(&bad), Err(Error::Unsupported(_))));
    let mut bad = stream.clone();
    bad[5] = 7;
    assert!(matches!(decode(&bad), Err(Error::Unsupported(_))));
    for cut in [0, 3, HEADER_LEN - 1, HEADER_LEN, stream.len() - 1] {
        let e = decode(&stream[..cut]).err().unwrap();
        assert!(matches!(e, Error::Malformed { .. }), "cut {cut}: {e}");
        assert_eq!(e.exit_code(), 3);
    }
    let mut long = stream.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(Error::Malformed { .. })));
    // 4x4 cannot host four noise scales
    let mut tiny = stream.clone();
    tiny[7..11].copy_from_slice(&[0, 4, 0, 4]);
    assert!(decode(&tiny).is_err());
}

fn trained(h: usize, w: usize, steps: usize) -> (n2l::Tensor, n2l::model::CodecModel, CodecInputs, Header) {
    let img = crop(&fixture("chelsea_64.png"), h, w);
    let cfg = Setting::S0.config();
    let mut tc = n2l::train::TrainConfig::with_steps(steps);
    tc.eval_every = 0;
    let (model, _) = overfit(&img, &cfg, &tc, Seed(3)).unwrap();
    let inputs = CodecInputs::build(Seed(3), &cfg, h, w).unwrap();
    let header = Header {
        version: 1,
        setting_id: 0,
        flags: 0,
        height: h as u16,
        width: w as u16,
        seed: 3,
        init_seed: 0,
        gpp_step_exp: 0,
        synth_step_exp: 0,
    };
    (img, model, inputs, header)
}

#[test]
fn mesh_search_matches_brute_force() {
    let (img, model, inputs, header) = trained(16, 16, 40);
    for lambda in [0.0, 3.0, 40.0, 1e9] {
        let r = mesh_search(&model, &img, &inputs, &header, lambda, -10..=-5).unwrap();
        let mut best: Option<(f64, usize, u8, u8, i8, i8)> = None;
        for g in -10..=-5i8 {
            for s in -10..=-5i8 {
                let q = quantize_model(&model, g, s).unwrap();
                let recon = q.dequantize(model.config).unwrap().render(&inputs).unwrap();
                let m = n2l::train::mse(&recon, &img).unwrap();
                let h = Header {
                    gpp_step_exp: g,
                    synth_step_exp: s,
                    ..header
                };
                let n = n2l::bitstream::serialize(&h, &q).unwrap().len();
                let key = (bpp(n, 16, 16) + lambda * m, n, g.unsigned_abs(), s.unsigned_abs(), g, s);
                if best.is_none_or(|b| (key.0, key.1, key.2, key.3) < (b.0, b.1, b.2, b.3)) {
                    best = Some(key);
                }
            }
        }
        let b = best.unwrap();
        assert_eq!(
            (r.chosen.gpp_step_exp, r.chosen.synth_step_exp),
            (b.4, b.5),
            "lambda {lambda}"
        );
        assert_eq!(r.candidates.len(), 36);
        assert_eq!(deserialize(&r.stream).unwrap().header.gpp_step_exp, b.4);
    }
}

#[test]
fn mesh_search_limits() {
    let (img, model, inputs, header) = trained(16, 16, 40);
    let rate_only = mesh_search(&model, &img, &inputs, &header, 0.0, -10..=-4).unwrap();
    let min_bytes = rate_only.candidates.iter().map(|c| c.bytes).min().unwrap();
    assert_eq!(rate_only.chosen.bytes, min_bytes);

    let dist_only = mesh_search(&model, &img, &inputs, &header, 1e12, -10..=-4).unwrap();
    let min_mse = dist_only.candidates.iter().map(|c| c.mse).fold(f64::INFINITY, f64::min);
    assert!(dist_only.chosen.mse <= min_mse * (1.0 + 1e-9));
    assert!(dist_only.chosen.bytes >= rate_only.chosen.bytes);

    let one = evaluate(&model, &img, &inputs, &header, 2.0, -7, -9)
        .unwrap()
        .unwrap()
        .0;
    let found = rate_only
        .candidates
        .iter()
        .find(|c| (c.gpp_step_exp, c.synth_step_exp) == (-7, -9))
        .unwrap();
    assert_eq!(one.bytes, found.bytes);
    assert_eq!(one.mse, found.mse);
    assert!(mesh_search(&model, &img, &inputs, &header, -1.0, -5..=-5).is_err());
}

#[test]
fn image_size_bounds() {
    let img = n2l::Tensor::zeros(n2l::Shape::new(3, 7, 16));
    let e = encode(&img, &quick(Setting::S0, 1), |_| {}).err().unwrap();
    assert!(matches!(e, Error::Dimensions(_)));
    assert_eq!(e.exit_code(), 5);
}
