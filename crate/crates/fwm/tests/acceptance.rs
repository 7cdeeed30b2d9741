//! Acceptance suite: one line per criterion, nonzero exit on any
//! unexplained failure.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use fwm::config::{PredictorId, RunConfig};
use fwm::harness::{cmd_evaluate, cmd_generate};
use fwm::llm::{LlmClient, LlmError};
use fwm::report::load_results;
use fwm_core::envsim::{Action, CartPoleState, EnvId, EnvParams, LanderState, SimState};
use fwm_core::metrics::{angle_from_centroids, centroid_distance, image_mse, ssim_global, Norm};
use fwm_core::observation::Observation;
use fwm_core::predictor::{assemble_prompt, format_latent_list, parse_prediction, PredictionRequest, PromptFragments, SamplingParams};
use fwm_core::reconstruct::disassemble;
use fwm_core::render::{labels, render, Palette};
use fwm_core::safety::{confusion_stats, phi_state, SafetySpec, SafetyVerdict};
use fwm_core::segment::{centroid, extract_latent, segment, Centroid, LatentState, SegmentMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;
const EPISODES: usize = 200;
const GOLDEN: &str = include_str!("../../core/tests/fixtures/prompt_m0_cart.txt");

struct Outcome {
    pass: bool,
    detail: String,
    /// A failure whose every instance the check itself has traced to a
    /// documented limit; it is still reported as FAIL.
    explained: bool,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into(), explained: false }
    }
}

fn verdict(predicted_safe: bool, actual_safe: bool) -> SafetyVerdict {
    SafetyVerdict {
        predicted_safe,
        actual_safe,
        per_step_predicted: Vec::new(),
        per_step_actual: Vec::new(),
        horizon: 0,
        input_length: 0,
    }
}

struct Corpus {
    cfg: RunConfig,
    oracle: fwm::report::ResultsFile,
}

fn build_corpus(root: &Path, env: EnvId) -> anyhow::Result<(Corpus, Duration)> {
    let cfg = RunConfig {
        env,
        episodes: EPISODES,
        m: vec![1, 2],
        k: vec![10, 30],
        seed: SEED,
        out: root.join(env.name()).join("corpus"),
        workers: 1,
        ..Default::default()
    };
    let started = Instant::now();
    cmd_generate(&cfg)?;
    let mut eval = cfg.clone();
    eval.corpus = Some(cfg.out.clone());
    eval.out = root.join(env.name()).join("oracle");
    eval.predictor.id = PredictorId::Oracle;
    let summary = cmd_evaluate(&eval)?;
    let elapsed = started.elapsed();
    if summary.errors > 0 {
        anyhow::bail!("{} oracle windows failed: {}", summary.errors, fs::read_to_string(&summary.errors_path)?);
    }
    Ok((Corpus { cfg, oracle: load_results(&summary.results_path)? }, elapsed))
}

/// Oracle verdicts can only disagree with the simulator where the frame
/// cannot resolve the threshold: some step of the window has `|θ|` within
/// this distance of π/4.
const RASTER_BAND: f64 = 0.05;

fn near_threshold(corpus: &Corpus, episode_dir: &str, first: usize, last: usize) -> anyhow::Result<bool> {
    let path = corpus.cfg.out.join(episode_dir).join("states.csv");
    let mut reader = csv::Reader::from_path(path)?;
    for (t, row) in reader.records().enumerate() {
        let row = row?;
        if (first..=last).contains(&t) {
            let theta: f64 = row[3].parse()?;
            let wrapped = theta.sin().atan2(theta.cos()).abs();
            if (wrapped - FRAC_PI_4).abs() <= RASTER_BAND {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn criterion_1(corpora: &[(EnvId, Corpus)], elapsed: Duration) -> anyhow::Result<Outcome> {
    let mut problems = Vec::new();
    let mut boundary = Vec::new();
    let mut unexplained = 0;
    let mut windows = 0;
    for (env, corpus) in corpora {
        let mut cells: BTreeMap<(usize, usize), Vec<SafetyVerdict>> = BTreeMap::new();
        for r in &corpus.oracle.records {
            for w in &r.windows {
                windows += 1;
                let m = &w.metrics;
                if m.per_object_cd.values().any(|&cd| cd != 0.0) || m.mse != 0.0 || (m.ssim - 1.0).abs() > 1e-9 {
                    problems.push(format!("{} ep{} m{} k{} t{}: nonzero image/CD error", env.name(), r.episode, r.m, r.k, w.start));
                }
                if w.predicted_safe != w.actual_safe {
                    let last = w.start + r.m + r.k;
                    if *env == EnvId::CartPole && near_threshold(corpus, &r.episode_dir, w.start + r.m, last)? {
                        boundary.push(format!("ep{} m{} k{} t{}", r.episode, r.m, r.k, w.start));
                    } else {
                        unexplained += 1;
                    }
                }
                cells.entry((r.m, r.k)).or_default().push(verdict(w.predicted_safe, w.actual_safe));
            }
        }
        for ((m, k), vs) in &cells {
            let s = confusion_stats(vs)?;
            if s.tp + s.fn_ == 0 || s.fp + s.tn == 0 {
                problems.push(format!("{} m{m} k{k}: only one class present", env.name()));
            } else if s.f1 != Some(1.0) || s.fpr != Some(0.0) {
                problems.push(format!(
                    "{} m{m} k{k}: F1 {:.4} FPR {:.4}",
                    env.name(),
                    s.f1.unwrap_or(f64::NAN),
                    s.fpr.unwrap_or(f64::NAN)
                ));
            }
        }
    }
    if elapsed >= Duration::from_secs(120) {
        problems.push(format!("runtime {:.1}s", elapsed.as_secs_f64()));
    }
    let pass = problems.is_empty();
    let hard = problems.iter().filter(|p| !p.contains("F1")).count() + unexplained;
    let mut detail = format!("{windows} windows, {:.1}s single-threaded", elapsed.as_secs_f64());
    if !pass {
        detail.push_str(&format!("; {}", problems.join("; ")));
    }
    if !boundary.is_empty() {
        detail.push_str(&format!(
            "; {} cart-pole verdict(s) differ with |θ| within {RASTER_BAND} rad of π/4: {}",
            boundary.len(),
            boundary.join(", ")
        ));
    }
    Ok(Outcome { pass, detail, explained: !pass && hard == 0 })
}

fn criterion_2(corpora: &[(EnvId, Corpus)]) -> anyhow::Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (env, corpus) in corpora {
        let forced: Vec<SafetyVerdict> =
            corpus.oracle.records.iter().flat_map(|r| &r.windows).map(|w| verdict(true, w.actual_safe)).collect();
        let s = confusion_stats(&forced)?;
        pass &= s.fp + s.tn > 0 && s.fpr == Some(1.0);
        parts.push(format!("{} FPR {} over {} unsafe windows", env.name(), s.fpr.unwrap_or(f64::NAN), s.fp + s.tn));
    }
    Ok(Outcome::check(pass, parts.join("; ")))
}

fn criterion_3() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (96usize, 96usize);
    let palette = Palette::new(&[("object", [250, 10, 10]), ("rest", [10, 10, 250])])?;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=500);
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < n {
            picked.insert((rng.gen_range(0..h), rng.gen_range(0..w)));
        }
        let (sum_r, sum_c) = picked.iter().fold((0u64, 0u64), |(a, b), &(r, c)| (a + r as u64, b + c as u64));
        let expected = Centroid::new(sum_c as f64 / n as f64, sum_r as f64 / n as f64);

        let mut bits = vec![false; w * h];
        let mut obs = Observation::filled(w, h, [10, 10, 250]);
        for &(r, c) in &picked {
            bits[r * w + c] = true;
            obs.set(r, c, [250, 10, 10]);
        }
        let direct = centroid(&SegmentMask::new("object", w, h, bits)?)?;
        let latent = extract_latent(&obs, &palette, 0)?;
        let extracted = *latent.get("object").expect("object present");
        for c in [direct, extracted] {
            worst = worst.max((c.cx - expected.cx).abs()).max((c.cy - expected.cy).abs());
        }
    }
    Ok(Outcome::check(worst <= 1e-9, format!("1000 masks, max deviation {worst:.2e}")))
}

fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Observation {
    let pixels = (0..w * h * 3).map(|_| rng.gen()).collect();
    Observation::from_pixels(w, h, pixels).expect("sized buffer")
}

fn criterion_4() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = Vec::new();
    let point = |rng: &mut ChaCha8Rng| Centroid::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
    for _ in 0..10_000 {
        let (a, b, c) = (point(&mut rng), point(&mut rng), point(&mut rng));
        for norm in [Norm::L1, Norm::L2] {
            let d = |x: &Centroid, y: &Centroid| centroid_distance(x, y, norm);
            if d(&a, &a) != 0.0 || d(&a, &b) != d(&b, &a) || d(&a, &c) > d(&a, &b) + d(&b, &c) + 1e-12 || d(&a, &b) < 0.0 {
                bad.push(format!("CD axiom violated for {norm:?}"));
            }
        }
    }
    let mut ssim_worst_self: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..1000 {
        let (w, h) = (rng.gen_range(4..40), rng.gen_range(4..40));
        let y = random_frame(&mut rng, w, h);
        let z = if i % 2 == 0 {
            random_frame(&mut rng, w, h)
        } else {
            let mut inv = y.clone();
            inv.pixels.iter_mut().for_each(|p| *p = 255 - *p);
            inv
        };
        ssim_worst_self = ssim_worst_self.max((ssim_global(&y, &y)? - 1.0).abs());
        let s = ssim_global(&y, &z)?;
        lo = lo.min(s);
        hi = hi.max(s);
        if image_mse(&y, &y)? != 0.0 {
            bad.push("MSE(y,y) != 0".into());
        }
    }
    if ssim_worst_self > 1e-9 || lo < -1.0 || hi > 1.0 {
        bad.push(format!("SSIM out of bounds: self {ssim_worst_self:.1e}, range [{lo:.4}, {hi:.4}]"));
    }
    let mse_bw = image_mse(&Observation::filled(16, 16, [0; 3]), &Observation::filled(16, 16, [255; 3]))?;
    if mse_bw != 1.0 {
        bad.push(format!("MSE(black, white) = {mse_bw}"));
    }
    bad.dedup();
    Ok(Outcome::check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("10000 triples x2 norms; SSIM(y,y) within {ssim_worst_self:.1e}, SSIM range [{lo:.4}, {hi:.4}]; MSE(black,white) = 1")
        } else {
            bad.join("; ")
        },
    ))
}

fn random_state(rng: &mut ChaCha8Rng, env: EnvId) -> SimState {
    match env {
        EnvId::CartPole => SimState::CartPole(CartPoleState {
            cart_pos: rng.gen_range(-1.5..1.5),
            pole_angle: rng.gen_range(-1.2..1.2),
            ..Default::default()
        }),
        EnvId::Lander => SimState::Lander(LanderState { px: rng.gen_range(1.0..19.0), py: rng.gen_range(1.0..19.0), ..Default::default() }),
    }
}

fn color_histogram(obs: &Observation) -> BTreeMap<[u8; 3], usize> {
    let mut h = BTreeMap::new();
    for p in obs.pixels.chunks_exact(3) {
        *h.entry([p[0], p[1], p[2]]).or_insert(0) += 1;
    }
    h
}

fn label_counts(obs: &Observation, palette: &Palette) -> anyhow::Result<BTreeMap<String, usize>> {
    let mut counts = BTreeMap::new();
    for m in segment(obs, palette)? {
        *counts.entry(m.label).or_insert(0) += 1;
    }
    Ok(counts)
}

fn criterion_5() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = EnvParams::default();
    let mut bad = Vec::new();
    for i in 0..100 {
        let env = if i % 2 == 0 { EnvId::CartPole } else { EnvId::Lander };
        let palette = Palette::for_env(env);
        let obs = render(&random_state(&mut rng, env), &params, &palette, 0)?;
        let z = extract_latent(&obs, &palette, 0)?;
        let (rebuilt, _) = disassemble(&z, &z, &obs, &palette)?;
        if rebuilt.pixels != obs.pixels {
            bad.push(format!("identity broke on frame {i}"));
        }
    }
    let (mut trials, mut skipped) = (0, 0);
    while trials < 1000 {
        let env = if rng.gen_bool(0.5) { EnvId::CartPole } else { EnvId::Lander };
        let palette = Palette::for_env(env);
        let obs = render(&random_state(&mut rng, env), &params, &palette, 0)?;
        if obs.clipped {
            skipped += 1;
            continue;
        }
        let z = extract_latent(&obs, &palette, 0)?;
        let movable: &[&str] = match env {
            EnvId::CartPole => &[labels::CART, labels::POLE],
            EnvId::Lander => &[labels::LANDER],
        };
        let label = movable[rng.gen_range(0..movable.len())];
        let c = *z.get(label).expect("object rendered");
        let moved = Centroid::new(c.cx + rng.gen_range(-20.0..20.0), c.cy + rng.gen_range(-20.0..20.0));
        let pred = LatentState::new(
            1,
            z.entries.iter().map(|e| (e.label.clone(), if e.label == label { moved } else { e.centroid })).collect::<Vec<_>>(),
        );
        let (rebuilt, log) = disassemble(&pred, &z, &obs, &palette)?;
        if log.iter().any(|d| d.clipped) {
            skipped += 1;
            continue;
        }
        trials += 1;
        if color_histogram(&rebuilt) != color_histogram(&obs) {
            bad.push(format!("colour multiset changed moving {label}"));
        }
        if label_counts(&rebuilt, &palette)? != label_counts(&obs, &palette)? {
            bad.push(format!("label multiplicities changed moving {label}"));
        }
    }
    Ok(Outcome::check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("100 identity frames bit-exact; {trials} unclipped moves conserve colours and labels ({skipped} clipped draws skipped)")
        } else {
            bad.join("; ")
        },
    ))
}

fn criterion_6() -> anyhow::Result<Outcome> {
    let req = PredictionRequest {
        latents: vec![LatentState::new(0, [("cart".to_string(), Centroid::new(48.0, 71.25))])],
        actions: vec![Action::PushLeft],
        fragments: PromptFragments::default(),
        sampling: SamplingParams::default(),
    };
    let (prompt, _) = assemble_prompt(&req)?;
    let golden = prompt == GOLDEN;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=6);
        let labels: Vec<String> = (0..n).map(|i| format!("obj{i}")).collect();
        let two_dp = |rng: &mut ChaCha8Rng| rng.gen_range(-99_999i64..=99_999) as f64 / 100.0;
        let z = LatentState::new(
            1,
            labels.iter().map(|l| (l.clone(), Centroid::new(two_dp(&mut rng), two_dp(&mut rng)))).collect::<Vec<_>>(),
        );
        match parse_prediction(&format_latent_list(&z), 2 * n, &labels) {
            Ok(back) if back.entries == z.entries => {}
            _ => failures += 1,
        }
    }
    Ok(Outcome::check(
        golden && failures == 0,
        format!("golden prompt {}; {} of 1000 latents round-trip", if golden { "matches" } else { "differs" }, 1000 - failures),
    ))
}

fn mean_angle_error(root: &Path, corpus: &Corpus, predictor: PredictorId) -> anyhow::Result<f64> {
    let mut cfg = corpus.cfg.clone();
    cfg.corpus = Some(corpus.cfg.out.clone());
    cfg.out = root.join(predictor.name());
    cfg.predictor.id = predictor;
    cfg.m = vec![2];
    cfg.k = vec![10];
    let summary = cmd_evaluate(&cfg)?;
    if summary.errors > 0 {
        anyhow::bail!("{} {} windows failed", summary.errors, predictor.name());
    }
    let errors: Vec<f64> = load_results(&summary.results_path)?
        .records
        .iter()
        .flat_map(|r| &r.windows)
        .filter_map(|w| w.metrics.angle_error_deg)
        .collect();
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

fn criterion_7(root: &Path, cartpole: &Corpus) -> anyhow::Result<Outcome> {
    let cv = mean_angle_error(root, cartpole, PredictorId::Constvel)?;
    let pe = mean_angle_error(root, cartpole, PredictorId::Persistence)?;
    Ok(Outcome::check(
        cv.is_finite() && pe.is_finite() && cv <= pe,
        format!("m=2 k=10 angle MAE: constvel {cv:.3} deg, persistence {pe:.3} deg"),
    ))
}

fn criterion_8() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (params, palette) = (EnvParams::default(), Palette::cartpole());
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta = rng.gen_range(-60.0f64..=60.0).to_radians();
        let state = SimState::CartPole(CartPoleState { cart_pos: rng.gen_range(-1.0..=1.0), pole_angle: theta, ..Default::default() });
        let z = extract_latent(&render(&state, &params, &palette, 0)?, &palette, 0)?;
        let est = angle_from_centroids(z.get(labels::CART).expect("cart"), z.get(labels::POLE).expect("pole"))?;
        worst = worst.max((est - theta.to_degrees()).abs());
    }
    Ok(Outcome::check(worst <= 3.0, format!("100 states, worst error {worst:.3} deg")))
}

fn criterion_9() -> anyhow::Result<Outcome> {
    let cp = |theta: f64| SimState::CartPole(CartPoleState { pole_angle: theta, ..Default::default() });
    let ld = |px: f64| SimState::Lander(LanderState { px, py: 10.0, ..Default::default() });
    let (cs, ls) = (SafetySpec::for_env(EnvId::CartPole), SafetySpec::for_env(EnvId::Lander));
    let probes = [
        (cp(FRAC_PI_4), &cs, false),
        (cp(-FRAC_PI_4), &cs, false),
        (cp(FRAC_PI_4.next_down()), &cs, true),
        (cp((-FRAC_PI_4).next_up()), &cs, true),
        (cp(FRAC_PI_4.next_up()), &cs, false),
        (ld(8.0), &ls, false),
        (ld(12.0), &ls, false),
        (ld(8.0f64.next_up()), &ls, true),
        (ld(12.0f64.next_down()), &ls, true),
        (ld(8.0f64.next_down()), &ls, false),
        (ld(12.0f64.next_up()), &ls, false),
    ];
    let wrong = probes.iter().filter(|(s, spec, want)| phi_state(s, spec).ok() != Some(*want)).count();
    Ok(Outcome::check(wrong == 0, format!("{} probes, {wrong} wrong", probes.len())))
}

fn criterion_10() -> anyhow::Result<Outcome> {
    let req = PredictionRequest {
        latents: vec![
            LatentState::new(0, [("lander".to_string(), Centroid::new(47.5, 30.0))]),
            LatentState::new(1, [("lander".to_string(), Centroid::new(47.5, 31.0))]),
        ],
        actions: vec![Action::Noop, Action::Noop],
        fragments: PromptFragments::default(),
        sampling: SamplingParams::default(),
    };
    let mut checks = Vec::new();

    let stub = common::spawn(vec![common::chat("[48.00, 71.25]")]);
    let p = LlmClient::new(stub.endpoint())?.predict(&req);
    checks.push(("happy path", matches!(&p, Ok(p) if p.attempts == 1 && p.latent.get("lander") == Some(&Centroid::new(48.0, 71.25)))));

    let stub = common::spawn(vec![common::chat("garbage"), common::chat("more garbage"), common::chat("[1.5, 2.5]")]);
    let p = LlmClient::new(stub.endpoint())?.predict(&req);
    checks.push(("2-failure retry", matches!(&p, Ok(p) if p.attempts == 3)));

    let stub = common::spawn(vec![common::chat("never a list")]);
    let e = LlmClient::new(stub.endpoint())?.predict(&req);
    checks.push(("exhaustion", matches!(e, Err(LlmError::RetriesExhausted { attempts: 3, .. }))));

    let e = LlmClient::new(common::endpoint(&common::refused_url()))?.predict(&req);
    checks.push(("transport", matches!(&e, Err(e) if e.kind() == "llm_transport")));

    let stub = common::spawn(vec![common::status(500)]);
    let e = LlmClient::new(stub.endpoint())?.predict(&req);
    checks.push(("HTTP 500", matches!(e, Err(LlmError::Status { code: 500, .. }))));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail = checks.iter().map(|(name, ok)| format!("{name} {}", if *ok { "ok" } else { "FAILED" })).collect::<Vec<_>>().join(", ");
    Ok(Outcome::check(pass, detail))
}

fn run(n: usize, f: impl FnOnce() -> anyhow::Result<Outcome>) -> Outcome {
    let outcome = f().unwrap_or_else(|e| Outcome::check(false, format!("error: {e:#}")));
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2}: {tag}  {}", outcome.detail);
    outcome
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut outcomes = Vec::new();

    let mut corpora = Vec::new();
    let mut elapsed = Duration::ZERO;
    let mut setup_error = None;
    for env in [EnvId::CartPole, EnvId::Lander] {
        match build_corpus(root.path(), env) {
            Ok((c, t)) => {
                corpora.push((env, c));
                elapsed += t;
            }
            Err(e) => setup_error = Some(format!("{e:#}")),
        }
    }
    match setup_error {
        Some(e) => {
            for n in [1, 2, 7] {
                outcomes.push(run(n, || anyhow::bail!("corpus setup failed: {e}")));
            }
        }
        None => {
            outcomes.push(run(1, || criterion_1(&corpora, elapsed)));
            outcomes.push(run(2, || criterion_2(&corpora)));
        }
    }
    outcomes.push(run(3, criterion_3));
    outcomes.push(run(4, criterion_4));
    outcomes.push(run(5, criterion_5));
    outcomes.push(run(6, criterion_6));
    if let Some((_, cartpole)) = corpora.iter().find(|(env, _)| *env == EnvId::CartPole) {
        outcomes.push(run(7, || criterion_7(&root.path().join("baselines"), cartpole)));
    }
    outcomes.push(run(8, criterion_8));
    outcomes.push(run(9, criterion_9));
    outcomes.push(run(10, criterion_10));

    let passed = outcomes.iter().filter(|o| o.pass).count();
    let explained = outcomes.iter().filter(|o| !o.pass && o.explained).count();
    println!("acceptance: {passed}/{} criteria pass; {explained} failure(s) traced to the cart-pole rasterization band", outcomes.len());
    if outcomes.iter().any(|o| !o.pass && !o.explained) {
        std::process::exit(1);
    }
}
