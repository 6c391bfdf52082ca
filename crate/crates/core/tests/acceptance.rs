//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Pass criterion ids (`C1 C7 ...`) as arguments to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risloc::agents::{ris_distribution, AgentSizes, Estimator, FeedbackMessage, ObservationFormat, TargetNormalization};
use risloc::baselines::FingerprintDb;
use risloc::channel::{circular_gaussian, synthesize_observation, ChannelParams, ChannelRealization, PhaseSet, Position, RisProfile};
use risloc::config::{ExperimentConfig, FingerprintPower, Method};
use risloc::cosyne::{budget_fitness, FitnessReport, GenerationStats, NeProblem};
use risloc::experiment::Experiment;
use risloc::nn::Network;
use risloc::pipeline::{block_fitness, AgentProblem, Pipeline, Scheme, BUDGET_SLACK};
use risloc::rollout::{episode_rngs, run_episode_at, Episode, FixedPowerMode, FixedSequenceController};

const SEEDS: u64 = 10;

type Check = (&'static str, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- C1

fn fd_worst(net: &Network, params: &[f64], seq: &[f64], target: &[f64], coords: &[usize], dirs: &[Vec<f64>]) -> f64 {
    const EPS: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let (_, grad) = net.backward_bptt(params, seq, target).unwrap();
    let loss = |p: &[f64]| net.pooled_loss(p, seq, target).unwrap();
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(FLOOR);
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for &k in coords {
        let orig = p[k];
        p[k] = orig + EPS;
        let lp = loss(&p);
        p[k] = orig - EPS;
        let lm = loss(&p);
        p[k] = orig;
        worst = worst.max(rel((lp - lm) / (2.0 * EPS), grad[k]));
    }
    for d in dirs {
        let plus: Vec<f64> = params.iter().zip(d).map(|(a, b)| a + EPS * b).collect();
        let minus: Vec<f64> = params.iter().zip(d).map(|(a, b)| a - EPS * b).collect();
        let an: f64 = grad.iter().zip(d).map(|(g, v)| g * v).sum();
        worst = worst.max(rel((loss(&plus) - loss(&minus)) / (2.0 * EPS), an));
    }
    worst
}

/// Every draw checks a random subset of coordinates plus random directions;
/// the first two draws check every coordinate.
fn gradient_check(net: &Network, seq_len: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    let n = net.param_count();
    for draw in 0..100 {
        let params = net.init_params(rng).0;
        let seq: Vec<f64> = (0..seq_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coords: Vec<usize> = if draw < 2 { (0..n).collect() } else { (0..400).map(|_| rng.random_range(0..n)).collect() };
        let dirs: Vec<Vec<f64>> = (0..8).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        worst = worst.max(fd_worst(net, &params, &seq, &target, &coords, &dirs));
    }
    worst
}

fn c1() -> Outcome {
    let sizes = AgentSizes::desk();
    let target = TargetNormalization { center: [0.0; 3], scale: [1.0; 3] };
    let horizon = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rec = Estimator::recurrent(&sizes, ObservationFormat::Stacked, target).unwrap();
    let ff = Estimator::feed_forward(&sizes, ObservationFormat::Stacked, horizon, target).unwrap();
    let e_rec = gradient_check(&rec.net, 2 * horizon, &mut rng);
    let e_ff = gradient_check(&ff.net, 2 * horizon, &mut rng);
    outcome(
        e_rec < 1e-4 && e_ff < 1e-4,
        format!("max relative error estimator {e_rec:.2e}, supervised {e_ff:.2e} (100 draws each, bound 1e-4)"),
    )
}

// ---------------------------------------------------------------- C2

fn c2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..10_000 {
        let n = rng.random_range(1..=64);
        let levels = if trial % 2 == 0 { 2 } else { rng.random_range(2..=8) };
        let phase_set = PhaseSet::uniform(levels).unwrap();
        let scale = 10f64.powf(rng.random_range(-6.0..0.0));
        let ch = ChannelRealization {
            h_direct: circular_gaussian(&mut rng) * scale,
            h_bs_ris: (0..n).map(|_| circular_gaussian(&mut rng) * scale).collect(),
            h_ris_ue: (0..n).map(|_| circular_gaussian(&mut rng)).collect(),
        };
        let profile = RisProfile::random(n, &phase_set, &mut rng);
        let params = ChannelParams { noise_enabled: trial % 3 != 0, ..ExperimentConfig::paper().channel };
        let power = rng.random_range(0.0..=params.max_power_watt());
        let noise_seed: u64 = rng.random();

        let y = synthesize_observation(&ch, &profile, &phase_set, power, &params, &mut ChaCha8Rng::seed_from_u64(noise_seed)).unwrap();

        let mut acc = ch.h_direct;
        for i in 0..n {
            let theta = phase_set.values()[profile.indices()[i] as usize];
            let phi = Complex64::new((std::f64::consts::PI * theta).cos(), (std::f64::consts::PI * theta).sin());
            acc += ch.h_bs_ris[i] * phi * ch.h_ris_ue[i];
        }
        let mut expected = acc * power.sqrt();
        if params.noise_enabled {
            expected += circular_gaussian(&mut ChaCha8Rng::seed_from_u64(noise_seed)) * params.noise_watt().sqrt();
        }
        let denom = expected.norm().max(acc.norm() * power.sqrt()).max(f64::MIN_POSITIVE);
        worst = worst.max((y - expected).norm() / denom);
    }
    outcome(worst <= 1e-12, format!("max relative error {worst:.2e} over 10^4 triples (bound 1e-12)"))
}

// ---------------------------------------------------------------- C3

fn c3() -> Outcome {
    let p = Pipeline::new(ExperimentConfig::desk()).unwrap();
    let policy = p.policy_net(Scheme::MultiAgent).unwrap();
    let power = p.power_net().unwrap();
    let target = p.cfg.target_normalization();
    let estimator = Estimator::recurrent(&p.cfg.networks, p.rollout.format, target).unwrap();
    let est_params = estimator.net.init_params(&mut ChaCha8Rng::seed_from_u64(0)).0;
    let problem = AgentProblem {
        policy: &policy,
        power: Some(&power),
        estimator: &estimator,
        estimator_params: &est_params,
        rollout: &p.rollout,
        scenario: &p.scenario,
        episodes: 1,
        budget: p.cfg.power_budget(),
    };
    let levels = p.scenario.phase_set.len();
    let p_max = p.scenario.max_power_watt();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = BTreeMap::<&str, usize>::new();
    let mut worst_softmax: f64 = 0.0;
    let mut frames = 0;
    for i in 0..10_000u64 {
        let mut genome = problem.random_individual(&mut risloc::util::rng_from(i));
        let gain = 10f64.powf(rng.random_range(-1.0..1.5));
        genome.iter_mut().for_each(|w| *w *= gain);
        let ep = match problem.episodes(&genome, i) {
            Ok(mut v) => v.pop().unwrap(),
            Err(_) => {
                *violations.entry("episode error").or_default() += 1;
                continue;
            }
        };
        frames += ep.horizon();
        for prof in &ep.profiles {
            if prof.len() != p.scenario.n_ris() || prof.indices().iter().any(|&k| k as usize >= levels) {
                *violations.entry("phase outside set").or_default() += 1;
            }
        }
        if ep.powers.iter().any(|&w| !(0.0..=p_max).contains(&w)) {
            *violations.entry("power outside [0, P_max]").or_default() += 1;
        }
        if ep.feedback.iter().any(|m| !matches!(m, FeedbackMessage::Bit(_))) {
            *violations.entry("feedback not one bit").or_default() += 1;
        }
        let (wp, _) = problem.split(&genome);
        let mut state = policy.net.zero_state();
        let obs: Vec<f64> = (0..policy.net.spec().input_dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = policy.forward(wp, &mut state, &obs).unwrap();
        for group in ris_distribution(&out.ris_logits, levels).chunks(levels) {
            worst_softmax = worst_softmax.max((group.iter().sum::<f64>() - 1.0).abs());
        }
    }
    if worst_softmax > 1e-9 {
        violations.insert("softmax group sum", 1);
    }
    outcome(
        violations.is_empty(),
        format!("10^4 episodes, {frames} frames; violations {violations:?}; worst softmax deviation {worst_softmax:.1e}"),
    )
}

// ---------------------------------------------------------------- C4

fn hand_episode(powers: &[f64], truth: Position, estimate: Position) -> Episode {
    Episode {
        true_position: truth,
        observations: vec![Complex64::new(0.0, 0.0); powers.len()],
        profiles: vec![RisProfile::zeros(4); powers.len()],
        powers: powers.to_vec(),
        feedback: vec![FeedbackMessage::None; powers.len()],
        estimate: Some(estimate),
    }
}

fn c4() -> Outcome {
    let o = Position::new(0.0, 0.0, 0.0);
    let budget = 2.5;
    // Σ P = 3.0 and 2.0, mean 2.5: within budget; errors 3 and 5, mean 4.
    let within =
        [hand_episode(&[1.0, 1.0, 1.0], o, Position::new(3.0, 0.0, 0.0)), hand_episode(&[0.5, 1.0, 0.5], o, Position::new(0.0, 3.0, 4.0))];
    // Σ P = 3.0 and 2.5, mean 2.75: over budget.
    let over =
        [hand_episode(&[1.0, 1.0, 1.0], o, Position::new(3.0, 0.0, 0.0)), hand_episode(&[1.0, 1.0, 0.5], o, Position::new(0.0, 3.0, 4.0))];
    let a = block_fitness(&within, budget).unwrap();
    let b = block_fitness(&over, budget).unwrap();
    let branches = a.fitness == -4.0 && b.fitness == -2.75;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut positive = 0;
    for _ in 0..100_000 {
        let pw = rng.random_range(0.0..100.0);
        let d = rng.random_range(0.0..1000.0);
        let bp = rng.random_range(0.0..50.0);
        if budget_fitness(pw, d, bp) > 0.0 || FitnessReport::new(pw, d, bp).fitness > 0.0 {
            positive += 1;
        }
    }
    let edge = budget_fitness(2.5, 7.0, 2.5) == -7.0;
    outcome(
        branches && positive == 0 && edge,
        format!(
            "within budget {} (expect -4), over budget {} (expect -2.75), at budget {}, positive fitness in fuzzing: {positive}",
            a.fitness,
            b.fitness,
            if edge { "-D" } else { "wrong" }
        ),
    )
}

// ---------------------------------------------------------------- desk runs

struct SeedRun {
    stats: Vec<GenerationStats>,
    audit: f64,
    ma: f64,
    ma_initial: f64,
    uniform: f64,
    supervised: f64,
    fingerprint: f64,
    single_agent: Option<f64>,
}

fn desk_run(seed: u64, root: &Path, single_agent: bool) -> SeedRun {
    let cfg = ExperimentConfig { seed, ..ExperimentConfig::desk() };
    let mut ex = Experiment::open(cfg, root).unwrap();
    ex.gen_stage1_data().unwrap();
    let initial = ex.train_estimator().unwrap();
    let (agents, run) = ex.evolve(Scheme::MultiAgent).unwrap();
    ex.retrain(Scheme::MultiAgent).unwrap();
    let decode = ex.pipeline.rollout.decode;
    let ma = ex.eval(Method::MultiAgent, decode).unwrap().rmse_m;
    let ma_initial = ex.pipeline.evaluate_agents(&agents, &initial, decode).unwrap().rmse;
    let uniform = ex.baseline_uniform().unwrap().rmse_m;
    let supervised = ex.baseline_supervised().unwrap().rmse_m;
    let fingerprint = ex.baseline_fingerprint().unwrap().rmse_m;
    let single_agent = single_agent.then(|| ex.baseline_single_agent().unwrap().rmse_m);
    let audit = ex.dir.manifest.metrics["multi-agent.audit_power"];
    SeedRun { stats: run.stats, audit, ma, ma_initial, uniform, supervised, fingerprint, single_agent }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c5(runs: &[SeedRun]) -> Outcome {
    let monotone = runs.iter().all(|r| r.stats.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
    let improved = runs.iter().filter(|r| r.stats.last().unwrap().best_so_far > r.stats[0].best).count();
    let detail: Vec<String> = runs.iter().map(|r| format!("{:.3}->{:.3}", r.stats[0].best, r.stats.last().unwrap().best_so_far)).collect();
    outcome(
        monotone && improved * 10 >= 9 * runs.len(),
        format!("best-so-far monotone: {monotone}; improved in {improved}/{} seeds [{}]", runs.len(), detail.join(" ")),
    )
}

fn c6(runs: &[SeedRun], budget: f64) -> Outcome {
    let worst = runs.iter().map(|r| r.audit).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst <= BUDGET_SLACK * budget,
        format!("worst audited mean episodic power {worst:.4} over {} seeds, bound {:.4}", runs.len(), BUDGET_SLACK * budget),
    )
}

fn c7(runs: &[SeedRun]) -> Outcome {
    let diff = median(runs.iter().map(|r| r.ma - r.supervised).collect());
    let m = |f: fn(&SeedRun) -> f64| median(runs.iter().map(f).collect());
    let wins = runs.iter().filter(|r| r.ma < r.supervised).count();
    outcome(
        diff < 0.0,
        format!(
            "median RMSE multi-agent {:.3} m, supervised {:.3} m, fingerprint {:.3} m, uniform {:.3} m; median paired difference {diff:.3} m; multi-agent ahead in {wins}/{}",
            m(|r| r.ma),
            m(|r| r.supervised),
            m(|r| r.fingerprint),
            m(|r| r.uniform),
            runs.len()
        ),
    )
}

fn c8(stacked: &SeedRun) -> Outcome {
    let cfg = ExperimentConfig::desk().at_point(16, -80.0, ObservationFormat::Rss);
    let p = Pipeline::new(cfg).unwrap();
    let rows = p.run_methods(&[Method::MultiAgent, Method::Supervised]).unwrap().rows;
    let finite = rows.iter().all(|r| r.rmse_m.is_finite()) && stacked.ma.is_finite();
    outcome(
        finite,
        format!("stacked multi-agent {:.3} m; rss multi-agent {:.3} m, rss supervised {:.3} m", stacked.ma, rows[0].rmse_m, rows[1].rmse_m),
    )
}

fn c9(run: &SeedRun) -> Outcome {
    match run.single_agent {
        Some(sa) if sa.is_finite() => outcome(true, format!("seed 0: single-agent {sa:.3} m beside multi-agent {:.3} m", run.ma)),
        other => outcome(false, format!("single-agent RMSE {other:?}")),
    }
}

fn c10(first: &Path, second: &Path) -> Outcome {
    let (a, b) = (snapshot(first), snapshot(second));
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let csvs = a.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    let ckpts = a.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    outcome(
        a.len() == b.len() && differing.is_empty(),
        format!("{} files ({csvs} CSVs, {ckpts} checkpoints) compared; differing: {differing:?}", a.len()),
    )
}

// ---------------------------------------------------------------- C11

fn c11() -> Outcome {
    let mut cfg = ExperimentConfig::desk();
    cfg.channel.noise_enabled = false;
    cfg.channel.ricean_kappa_db = f64::INFINITY;
    cfg.fingerprint.samples_per_block = 1;
    cfg.fingerprint.db_power = FingerprintPower::Max;
    cfg.fingerprint.query_power = FingerprintPower::Max;
    let p = Pipeline::new(cfg).unwrap();
    let db = FingerprintDb::build(&p).unwrap();
    let max = p.scenario.max_power_watt();
    let mut errors = Vec::with_capacity(db.blocks());
    for b in 0..db.blocks() {
        let (mut env, mut pol) = episode_rngs(b as u64);
        let mut c = FixedSequenceController::new(&db.profiles, FixedPowerMode::Constant(max), max);
        let ep = run_episode_at(&mut c, &p.rollout, &p.scenario, db.center(b), &mut env, &mut pol).unwrap();
        errors.push(db.localize(&ep.rss()).unwrap().distance(&db.center(b)));
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let within = errors.iter().filter(|&&e| e <= 2.0).count();
    outcome(worst <= 2.0, format!("{} block-center queries: worst error {worst:.2} m, mean {mean:.2} m, {within} within 2 m", errors.len()))
}

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    let want = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let mut lines = Vec::new();
    let mut report = |id: &str, name: &str, started: Instant, o: Outcome| {
        let line = format!("{id} {} {name}: {} [{:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, started.elapsed().as_secs_f64());
        println!("{line}");
        lines.push((id.to_string(), o.pass));
    };
    let simple: [Check; 4] = [
        ("C1", "gradient correctness", c1),
        ("C2", "signal-model oracle", c2),
        ("C3", "constraint suite", c3),
        ("C4", "fitness branches", c4),
    ];
    for (id, name, f) in simple {
        if want(id) {
            let t = Instant::now();
            report(id, name, t, f());
        }
    }

    if ["C5", "C6", "C7", "C8", "C9", "C10"].iter().any(|id| want(id)) {
        let t = Instant::now();
        let tmp = tempfile::tempdir().unwrap();
        let root_a = tmp.path().join("a");
        let root_b = tmp.path().join("b");
        let runs: Vec<SeedRun> = (0..SEEDS).map(|s| desk_run(s, &root_a, s == 0)).collect();
        let budget = ExperimentConfig::desk().power_budget();
        for (i, r) in runs.iter().enumerate() {
            println!(
                "   seed {i}: multi-agent {:.3} (initial estimator {:.3}), uniform {:.3}, supervised {:.3}, fingerprint {:.3}, audit power {:.4}",
                r.ma, r.ma_initial, r.uniform, r.supervised, r.fingerprint, r.audit
            );
        }
        let stage2_gain = runs.iter().filter(|r| r.ma_initial <= r.uniform).count();
        let stage3_gain = runs.iter().filter(|r| r.ma <= r.ma_initial).count();
        println!("   evolved agents beat random sensing with the initial estimator in {stage2_gain}/{SEEDS} seeds; retraining helped in {stage3_gain}/{SEEDS}");
        if want("C5") {
            report("C5", "NE improvement", t, c5(&runs));
        }
        if want("C6") {
            report("C6", "budget feasibility", t, c6(&runs, budget));
        }
        if want("C7") {
            report("C7", "ordering vs supervised", t, c7(&runs));
        }
        if want("C8") {
            let t8 = Instant::now();
            report("C8", "both observation formats", t8, c8(&runs[0]));
        }
        if want("C9") {
            report("C9", "single-agent variant", t, c9(&runs[0]));
        }
        if want("C10") {
            let t10 = Instant::now();
            let cfg = ExperimentConfig { seed: 0, ..ExperimentConfig::desk() };
            desk_run(0, &root_b, true);
            report("C10", "reproducibility", t10, c10(&cfg.run_dir(&root_a), &cfg.run_dir(&root_b)));
        }
    }
    if want("C11") {
        let t = Instant::now();
        report("C11", "fingerprinting sanity", t, c11());
    }
    let passed = lines.iter().filter(|(_, p)| *p).count();
    println!("{passed}/{} criteria passed", lines.len());
}
