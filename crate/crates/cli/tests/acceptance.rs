//! Acceptance run: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criteria 4, 5, 6, 9 and 10 train models and take
//! over an hour on one core.
//!
//! `cargo test --release -p hairshift-cli --test acceptance`
//!
//! `ACCEPTANCE_ONLY=1,2,3` restricts the run to the listed criteria.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hairshift_core::checkpoint::save_generator;
use hairshift_core::data_synth::{build_hair_bank, generate_portrait_video_sized, PortraitSpec, PortraitVideo};
use hairshift_core::decoder::{gated_fuse, DecoderConfig, MsgSpadeDecoder};
use hairshift_core::encoders::{EncoderConfig, FeatureEncoder, MotionRegressor};
use hairshift_core::frame::{Frame, HairMask};
use hairshift_core::graph::check::{numerical_grad, param_grad_error, random_projection, relative_error};
use hairshift_core::graph::Graph;
use hairshift_core::metrics::{
    amortized_cost, frechet_distance, identity_similarity, masked_ssim, motion_smoothness, temporal_flicker, CostModel, IdentityEmbedder,
};
use hairshift_core::model::Generator;
use hairshift_core::params::{ParamId, ParamStore};
use hairshift_core::pipeline::{run_inference_frames, PipelineConfig, Reference};
use hairshift_core::tensor::Tensor;
use hairshift_core::training::losses::{localized_l1_var, reconstruction_l1_var};
use hairshift_core::training::trainer::TrainSinks;
use hairshift_core::training::{
    localized_l1, reconstruction_l1, run_setting_from_warmup, total_loss, train_warmup, L1Convention, LossTerms, LossWeights,
    PatchDiscriminator, PerceptualNet, TrainConfig, TrainingData,
};
use hairshift_core::video_io::save_video;

const WARMUP_STEPS: usize = 4000;
const DECOUPLE_STEPS: usize = 4000;
const EVAL_SAMPLES: usize = 200;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn rand_frame(h: usize, w: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
}

fn small_decoder(seed: u64) -> (ParamStore<f64>, MsgSpadeDecoder) {
    let cfg = DecoderConfig {
        num_scales: 2,
        channels: vec![4, 3],
        spade_hidden: vec![4, 4],
        cond_channels: 3,
        ..DecoderConfig::default()
    };
    let mut store = ParamStore::new();
    let dec = MsgSpadeDecoder::new(&mut store, &cfg, 2, (8, 8), (2, 2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    jitter(&mut store, seed + 1);
    (store, dec)
}

fn test_mask() -> HairMask {
    HairMask::from_fn(8, 8, |y, x| if y < 4 && x > 1 { 1.0 } else { 0.0 })
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let (store, dec) = small_decoder(3);
    let (fw, fc) = (rand_tensor(&[2, 2, 2], 1), rand_tensor(&[2, 2, 2], 2));
    let mut worst_one = 0.0f64;
    let mut worst_zero = 0.0f64;
    let mut envelope = 0.0f64;
    for gate in [Some(1.0), Some(0.0), None] {
        let mut g = Graph::new(&store);
        let (a, b) = (g.constant(fw.clone()), g.constant(fc.clone()));
        let out = dec.forward(&mut g, a, b, &test_mask(), gate).unwrap();
        for s in &out.scales {
            let hw = g.value(s.h_w);
            let hc = g.value(s.h_c_mod.unwrap());
            let fused = g.value(s.fused.unwrap());
            match gate {
                Some(v) if v == 1.0 => worst_one = worst_one.max(fused.max_abs_diff(hw)),
                Some(_) => worst_zero = worst_zero.max(fused.max_abs_diff(hc)),
                None => {
                    for ((f, w), c) in fused.data().iter().zip(hw.data()).zip(hc.data()) {
                        envelope = envelope.max(w.min(*c) - f).max(f - w.max(*c));
                    }
                }
            }
        }
    }
    let (hc, hw) = (rand_tensor(&[3, 4, 4], 5), rand_tensor(&[3, 4, 4], 6));
    let gate = rand_tensor(&[3, 4, 4], 7).map(|v| (v + 1.0) / 2.0);
    let f = gated_fuse(&hc, &hw, &gate).unwrap();
    for i in 0..f.len() {
        let (c, w, m) = (hc.data()[i], hw.data()[i], gate.data()[i]);
        envelope = envelope.max(c.min(w) - f.data()[i]).max(f.data()[i] - c.max(w));
        worst_one = worst_one.max(((1.0 - m) * c + m * w - f.data()[i]).abs());
    }
    let dt = t0.elapsed().as_secs_f64();
    let pass = worst_one <= 1e-6 && worst_zero <= 1e-6 && envelope <= 1e-6 && dt < 1.0;
    outcome(pass, format!("gate=1 dev {worst_one:.1e}, gate=0 dev {worst_zero:.1e}, envelope excess {envelope:.1e}, {dt:.2}s"))
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut results: Vec<(String, f64)> = Vec::new();

    let (mut store, dec) = small_decoder(31);
    let (fw, fc) = (rand_tensor(&[2, 2, 2], 1), rand_tensor(&[2, 2, 2], 2));
    let dloss = |g: &mut Graph<'_, f64>| {
        let a = g.constant(fw.clone());
        let b = g.constant(fc.clone());
        let out = dec.forward(g, a, b, &test_mask(), None).unwrap();
        random_projection(g, out.image, 33)
    };
    for (label, prefix) in [
        ("SPADE (synthesis)", "decoder.synthesis."),
        ("SPADE (context)", "decoder.context."),
        ("GF-SPADE", "decoder.gf."),
        ("gate conv", "decoder.gf.block0.gate"),
    ] {
        let ids: Vec<ParamId> = store.ids().filter(|&i| store.name(i).starts_with(prefix)).collect();
        assert!(!ids.is_empty(), "no parameters under {prefix}");
        results.push((label.into(), param_grad_error(&mut store, &ids, 1e-6, 24, dloss)));
    }
    let (h_w, h_c) = (rand_tensor(&[4, 2, 2], 43), rand_tensor(&[4, 2, 2], 44));
    let gate_of = |g: &mut Graph<'_, f64>, a, b| {
        let m = dec.compute_gate(g, 0, a, b);
        random_projection(g, m, 45)
    };
    let mut g = Graph::new(&store);
    let (a, b) = (g.input(h_w.clone(), true), g.constant(h_c.clone()));
    let l = gate_of(&mut g, a, b);
    let analytic = g.backward(l).wrt(a).unwrap().clone();
    let numeric = numerical_grad(&h_w, 1e-6, |p| {
        let mut g = Graph::new(&store);
        let (a, b) = (g.constant(p.clone()), g.constant(h_c.clone()));
        let l = gate_of(&mut g, a, b);
        g.value(l).item()
    });
    results.push(("gate input".into(), relative_error(&analytic, &numeric, 1e-8)));

    let mut store = ParamStore::<f64>::new();
    let enc = FeatureEncoder::new(&mut store, "enc", &EncoderConfig { depth: 2, base_channels: 3 }, &mut ChaCha8Rng::seed_from_u64(5));
    let x = rand_frame(8, 8, 6).to_tensor::<f64>();
    let ids: Vec<ParamId> = store.ids().collect();
    results.push((
        "encoder".into(),
        param_grad_error(&mut store, &ids, 1e-6, 40, |g| {
            let v = g.constant(x.clone());
            let y = enc.forward(g, v);
            random_projection(g, y, 7)
        }),
    ));
    let mut store = ParamStore::<f64>::new();
    let net = MotionRegressor::new(&mut store, "m", (8, 8), &mut ChaCha8Rng::seed_from_u64(8));
    let mx = MotionRegressor::input_tensor::<f64>(&rand_frame(8, 8, 9));
    let ids: Vec<ParamId> = store.ids().collect();
    results.push((
        "motion estimator".into(),
        param_grad_error(&mut store, &ids, 1e-6, 40, |g| {
            let v = g.constant(mx.clone());
            let y = net.forward(g, v);
            random_projection(g, y, 10)
        }),
    ));

    let target = rand_frame(8, 8, 11).to_tensor::<f64>();
    let pred = rand_frame(8, 8, 12).to_tensor::<f64>();
    let mask = HairMask::from_fn(8, 8, |y, x| if (y + x) % 3 == 0 { 1.0 } else { 0.3 }).to_tensor::<f64>();
    let store = ParamStore::<f64>::new();
    for (label, local) in [("rec L1", false), ("localized L1", true)] {
        let f = |g: &mut Graph<'_, f64>, p| if local { localized_l1_var(g, &target, p, &mask, L1Convention::Mean) } else { reconstruction_l1_var(g, &target, p) };
        let mut g = Graph::new(&store);
        let p = g.input(pred.clone(), true);
        let l = f(&mut g, p);
        let analytic = g.backward(l).wrt(p).unwrap().clone();
        let numeric = numerical_grad(&pred, 1e-6, |q| {
            let mut g = Graph::new(&store);
            let p = g.constant(q.clone());
            let l = f(&mut g, p);
            g.value(l).item()
        });
        results.push((label.into(), relative_error(&analytic, &numeric, 1e-8)));
    }
    let perc = PerceptualNet::<f64>::new();
    let (_, analytic) = perc.loss_and_grad(&target, &pred);
    results.push(("perceptual".into(), relative_error(&analytic, &numerical_grad(&pred, 1e-6, |q| perc.loss(&target, q)), 1e-8)));
    let disc = PatchDiscriminator::<f64>::new(6);
    let (_, analytic) = disc.gen_loss_and_grad(&pred);
    results.push(("adversarial".into(), relative_error(&analytic, &numerical_grad(&pred, 1e-6, |q| disc.gen_loss_and_grad(q).0), 1e-8)));

    let dt = t0.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0f64, f64::max);
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(worst <= 1e-4 && dt < 120.0, format!("max rel err {worst:.1e} [{detail}], {dt:.1}s"))
}

fn criterion_3() -> Outcome {
    let f = rand_frame(16, 16, 21);
    let hair = HairMask::from_fn(16, 16, |y, _| if y < 5 { 1.0 } else { 0.0 });
    let face = HairMask::from_fn(16, 16, |y, x| if y >= 5 && (4..12).contains(&x) { 1.0 } else { 0.0 });
    let rec = reconstruction_l1(&f, &f).unwrap();
    let h = localized_l1(&f, &f, &hair, L1Convention::Mean).unwrap();
    let m = localized_l1(&f, &f, &face, L1Convention::Mean).unwrap();
    let p = PerceptualNet::<f32>::new().frame_loss(&f, &f);
    let zero = rec == 0.0 && h == 0.0 && m == 0.0 && p == 0.0;
    let w = LossWeights { lambda_adv: 0.7, lambda_p: 1.3, lambda_rec: 2.0, lambda_hair: 0.5, lambda_face: 3.0 };
    let terms = LossTerms { adv: -0.4, perceptual: 0.21, rec: 0.11, hair: 0.07, face: 0.02 };
    let r = total_loss(terms, &w, 0);
    let sum = 0.7 * -0.4 + 1.3 * 0.21 + 2.0 * 0.11 + 0.5 * 0.07 + 3.0 * 0.02;
    let d = LossWeights::default();
    let defaults = [d.lambda_adv, d.lambda_p, d.lambda_rec, d.lambda_hair, d.lambda_face] == [1.0; 5];
    let pass = zero && (r.total - sum).abs() <= 1e-6 && defaults;
    outcome(pass, format!("terms at I_p=I_d ({rec}, {p}, {h}, {m}), total dev {:.1e}, default weights all 1: {defaults}", (r.total - sum).abs()))
}

fn criterion_7() -> Outcome {
    let t0 = Instant::now();
    let m = CostModel::default();
    let c1 = amortized_cost(1, &m).unwrap();
    let lim = amortized_cost(1_000_000, &m).unwrap();
    let mut decreasing = true;
    let mut prev = c1;
    for n in 2..=5000u64 {
        let c = amortized_cost(n, &m).unwrap();
        decreasing &= c < prev && c > 1.57;
        prev = c;
    }
    let dt = t0.elapsed().as_secs_f64();
    let pass = format!("{c1:.2}") == "75.80" && (c1 - 75.80).abs() < 1e-9 && (lim - 1.57).abs() <= 1e-4 && decreasing && dt < 1.0;
    outcome(pass, format!("C(1) = {c1:.4}, C(1e6) = {lim:.6}, strictly decreasing over 1..5000: {decreasing}, {dt:.3}s"))
}

fn criterion_8() -> Outcome {
    let a = rand_frame(32, 32, 41);
    let all = HairMask::from_fn(32, 32, |_, _| 1.0);
    let ssim = masked_ssim(&a, &a, &all).unwrap().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let set: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let fr_self = frechet_distance(&set, &set).unwrap();
    let delta = [0.3, -1.2, 0.5, 2.0, -0.7];
    let shifted: Vec<Vec<f64>> = set.iter().map(|v| v.iter().zip(&delta).map(|(x, d)| x + d).collect()).collect();
    let fr_shift = frechet_distance(&set, &shifted).unwrap();
    let want: f64 = delta.iter().map(|d| d * d).sum();
    let embedder = IdentityEmbedder::bundled().unwrap();
    let portrait = generate_portrait_video_sized(&PortraitSpec::random(43, 1), 1, 64).unwrap().frames.remove(0);
    let ids = identity_similarity(&portrait, &portrait, &embedder);
    let flicker = temporal_flicker(&vec![a.clone(); 6]).unwrap();
    let pass = (ssim - 1.0).abs() <= 1e-9 && fr_self.abs() <= 1e-6 && (fr_shift - want).abs() <= 1e-6 && (ids - 1.0).abs() <= 1e-6 && flicker == 1.0;
    outcome(
        pass,
        format!("SSIM self {ssim:.9}, Frechet self {fr_self:.1e}, shifted {fr_shift:.6} vs {want:.6}, IDS self {ids:.9}, flicker {flicker}"),
    )
}

fn acceptance_config(seed: u64, setting: u8) -> TrainConfig {
    TrainConfig {
        seed,
        ablation_setting: setting,
        encoder_depth: 1,
        decoder_channels: vec![16, 8],
        warmup_learning_rate: 1e-3,
        learning_rate: 1e-3,
        disc_learning_rate: 1e-4,
        steps_per_epoch: 500,
        warmup_epochs: WARMUP_STEPS / 500,
        epochs: DECOUPLE_STEPS / 500,
        log_every: 500,
        ..TrainConfig::default()
    }
}

struct SeedRun {
    ssim: [f64; 4],
    blend_violations: Option<usize>,
    stats5: hairshift_core::training::HeldOutStats,
    model5: Generator<f32>,
    train_minutes: f64,
}

fn run_seed(seed: u64) -> SeedRun {
    let cfg = acceptance_config(seed, 1);
    let data = TrainingData::generate(seed, cfg.num_videos, cfg.video_length, cfg.image_size).unwrap();
    let held_out = TrainingData::generate(1000 + seed, 16, cfg.video_length, cfg.image_size).unwrap();
    let t0 = Instant::now();
    let (warm, _) = train_warmup(&cfg, &data, &mut TrainSinks::default()).unwrap();
    let warm_minutes = t0.elapsed().as_secs_f64() / 60.0;
    eprintln!("seed {seed}: warm-up done in {warm_minutes:.1} min");
    let mut ssim = [0.0; 4];
    let mut blend_violations = None;
    let mut five = None;
    for (slot, setting) in [1u8, 2, 3, 5].into_iter().enumerate() {
        let t1 = Instant::now();
        let cfg = acceptance_config(seed, setting);
        let out = run_setting_from_warmup(&warm, &cfg, &data, &held_out, EVAL_SAMPLES).unwrap();
        eprintln!("seed {seed} setting {setting}: {:?} ({:.1} min)", out.stats, t1.elapsed().as_secs_f64() / 60.0);
        ssim[slot] = out.stats.ssim_nonhair_mean;
        if setting == 2 {
            blend_violations = out.stats.blend_violations;
        }
        if setting == 5 {
            five = Some((out, warm_minutes + t1.elapsed().as_secs_f64() / 60.0));
        }
    }
    let (out, train_minutes) = five.unwrap();
    SeedRun { ssim, blend_violations, stats5: out.stats, model5: out.model, train_minutes }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_4(r: &SeedRun) -> Outcome {
    let s = r.stats5.source_hair_corr.unwrap_or(f64::NAN);
    let p = r.stats5.pseudo_hair_corr.unwrap_or(f64::NAN);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get()).min(4);
    let budget = 30.0 * 4.0 / cores as f64;
    let pass = s >= 0.8 && p.abs() <= 0.3 && r.train_minutes <= budget;
    outcome(
        pass,
        format!("corr(source) {s:.3}, corr(pseudo) {p:.3}, {} samples, training {:.1} min (budget {budget:.0} min on {cores} core(s))", r.stats5.samples, r.train_minutes),
    )
}

fn criterion_5(r: &SeedRun) -> Outcome {
    let s = r.stats5.ssim_nonhair_mean;
    let l = r.stats5.l1_nonhair_mean;
    outcome(s >= 0.90 && l <= 0.05, format!("non-hair SSIM {s:.4} (median {:.4}), non-hair L1 {l:.4}", r.stats5.ssim_nonhair_median))
}

fn criterion_6(runs: &[SeedRun]) -> Outcome {
    let med = |slot: usize| median(runs.iter().map(|r| r.ssim[slot]).collect());
    let (s1, s3, s5) = (med(0), med(2), med(3));
    let violations: Vec<Option<usize>> = runs.iter().map(|r| r.blend_violations).collect();
    let exact = violations.iter().all(|v| *v == Some(0));
    outcome(s5 >= s3 && s3 >= s1 && exact, format!("median SSIM setting1 {s1:.4}, setting3 {s3:.4}, setting5 {s5:.4}; setting2 off-band mismatches {violations:?}"))
}

fn reference_from_bank(seed: u64, avoid: &PortraitSpec) -> Reference {
    let bank = build_hair_bank(seed, 64);
    let e = bank.iter().find(|e| !e.style.same_as(&avoid.hair_style())).unwrap();
    Reference { frame: e.frame.clone(), hair_mask: e.hair_mask.clone(), face_mask: e.face_mask.clone(), pose: Some(e.pose) }
}

fn criterion_9(model: &Generator<f32>) -> Outcome {
    let spec = PortraitSpec::random(4242, 24);
    let v = generate_portrait_video_sized(&spec, 24, 64).unwrap();
    let r = reference_from_bank(4243, &spec);
    let (_, out) = run_inference_frames(model, &v.frames, &v.hair_masks, &v.face_masks, &v.poses, &r, &PipelineConfig::default()).unwrap();
    let gen: Vec<Frame> = out.into_iter().map(|a| a.frame).collect();
    let (tf_g, tf_d) = (temporal_flicker(&gen).unwrap(), temporal_flicker(&v.frames).unwrap());
    let (ms_g, ms_d) = (motion_smoothness(&gen).unwrap(), motion_smoothness(&v.frames).unwrap());
    let pass = (tf_g - tf_d).abs() <= 0.05 && (ms_g - ms_d).abs() <= 0.05;
    outcome(pass, format!("flicker {tf_g:.4} vs driving {tf_d:.4}, smoothness {ms_g:.4} vs driving {ms_d:.4}"))
}

fn peak_rss(bin: &str, ckpt: &Path, video: &Path, reference: &Path, out: &Path) -> Result<u64, String> {
    let o = Command::new(bin)
        .args(["infer", "--checkpoint"])
        .arg(ckpt)
        .arg("--video")
        .arg(video)
        .arg("--reference")
        .arg(reference)
        .arg("--out")
        .arg(out)
        .arg("--report-memory")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    text.lines()
        .find_map(|l| l.strip_prefix("peak_rss_kib ").and_then(|v| v.trim().parse().ok()))
        .ok_or_else(|| format!("no peak_rss_kib line in {text:?}"))
}

fn criterion_10(model: &Generator<f32>) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    save_generator(&ckpt, model).unwrap();
    let spec = PortraitSpec::random(5151, 300);
    let r = reference_from_bank(5152, &spec);
    let ref_dir = dir.path().join("reference");
    let rp = r.pose.unwrap();
    let rv = PortraitVideo {
        frames: vec![r.frame.clone()],
        hair_masks: vec![r.hair_mask.clone()],
        face_masks: vec![r.face_mask.clone()],
        poses: vec![rp],
        spec: PortraitSpec { pose_trajectory: vec![rp], ..spec.clone() },
    };
    save_video(&ref_dir, &rv).unwrap();
    let bin = env!("CARGO_BIN_EXE_hairshift");
    let mut rss = Vec::new();
    for t in [16usize, 300] {
        let vdir = dir.path().join(format!("video_{t}"));
        save_video(&vdir, &generate_portrait_video_sized(&spec, t, 64).unwrap()).unwrap();
        let t0 = Instant::now();
        match peak_rss(bin, &ckpt, &vdir, &ref_dir, &dir.path().join(format!("out_{t}"))) {
            Ok(k) => rss.push((k, t0.elapsed().as_secs_f64())),
            Err(e) => return outcome(false, format!("infer on T = {t} failed: {e}")),
        }
    }
    let ratio = rss[1].0 as f64 / rss[0].0 as f64;
    outcome(ratio <= 1.25, format!("peak RSS T=16 {} KiB ({:.1}s), T=300 {} KiB ({:.1}s), ratio {ratio:.3}", rss[0].0, rss[0].1, rss[1].0, rss[1].1))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().map_or(true, |o| o.contains(&n));
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        eprintln!("criterion {n} done: {}", if o.pass { "PASS" } else { "FAIL" });
        results.push((n, name, o));
    };
    let quick: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "equation fidelity", criterion_1),
        (2, "gradient correctness", criterion_2),
        (3, "loss contract", criterion_3),
        (7, "cost model", criterion_7),
        (8, "metric sanity", criterion_8),
    ];
    for (n, name, f) in quick {
        if wanted(n) {
            report(n, name, f());
        }
    }
    if [4, 5, 6, 9, 10].into_iter().any(wanted) {
        let seeds: &[u64] = if wanted(6) { &SEEDS } else { &SEEDS[..1] };
        let runs: Vec<SeedRun> = seeds.iter().map(|&s| run_seed(s)).collect();
        report(4, "decoupling", criterion_4(&runs[0]));
        report(5, "non-hair preservation", criterion_5(&runs[0]));
        if wanted(6) {
            report(6, "ablation trend", criterion_6(&runs));
        }
        report(9, "temporal property", criterion_9(&runs[0].model5));
        report(10, "scalability", criterion_10(&runs[0].model5));
    }

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name:<22} {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
