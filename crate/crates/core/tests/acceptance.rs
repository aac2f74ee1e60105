//! End-to-end acceptance suite. Every test writes one `PASS`/`FAIL` line
//! straight to stdout (bypassing the harness capture) before asserting.
//!
//! The foraging comparison trains ten agents for 200k environment steps
//! each and dominates the runtime. Tests hold a shared lock so that the
//! reported wall-clock times are not inflated by each other.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use cmq_core::autodiff::{Tape, Tensor};
use cmq_core::env::{Env, EnvConfig, LbfConfig, MatrixGame};
use cmq_core::mixer::{
    concept_embeddings, concept_probs, concept_q, credits, init_mixer_params, mix,
    mixed_embeddings, temporal_q, InterventionMask, MixerConfig, RowOverrides,
};
use cmq_core::nets::ParamSet;
use cmq_core::runio::{
    read_metrics_jsonl, resume_training, run_sweep, run_training, RunConfig, CHECKPOINT_FILE,
    METRICS_CSV, METRICS_JSONL,
};
use cmq_core::training::{
    intervention_mix, pipeline_grad_check, predict_concepts, sample_overrides, Episode, Inspector,
    MetricsRow, Model, ModelConfig, TinyPipeline, TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn verdict(name: &str, pass: bool, detail: String) {
    report(name, pass, &detail);
    assert!(pass, "{name}: {detail}");
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn random_mixer(rng: &mut ChaCha8Rng, max_agents: usize) -> (MixerConfig, ParamSet) {
    let cfg = MixerConfig {
        n_agents: rng.gen_range(1..=max_agents),
        state_dim: rng.gen_range(1..=6),
        concepts: rng.gen_range(1..=6),
        embed: rng.gen_range(1..=6),
        attn: rng.gen_range(1..=6),
        bias_hidden: rng.gen_range(1..=6),
    };
    let mut p = init_mixer_params(&cfg, rng.gen()).unwrap();
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
    }
    (cfg, p)
}

fn draw(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_mask(rng: &mut ChaCha8Rng, concepts: usize) -> InterventionMask {
    let mut iv = InterventionMask::new();
    for k in 0..concepts {
        if rng.gen_bool(0.3) {
            iv.set(k, rng.gen_range(0.0..=1.0)).unwrap();
        }
    }
    iv
}

/// `Q_tot` for each row of `q` (all rows share state `s`).
fn q_tot_rows(
    cfg: &MixerConfig,
    p: &ParamSet,
    q: &[f64],
    s: &[f64],
    iv: &InterventionMask,
) -> Vec<f64> {
    let rows = q.len() / cfg.n_agents;
    let mut tape = Tape::new();
    let bound = p.bind_frozen(&mut tape);
    let qn = tape.constant(Tensor::matrix(rows, cfg.n_agents, q.to_vec()).unwrap());
    let states: Vec<f64> = (0..rows).flat_map(|_| s.iter().copied()).collect();
    let sn = tape.constant(Tensor::matrix(rows, cfg.state_dim, states).unwrap());
    let o = RowOverrides::broadcast(iv, rows, cfg.concepts).unwrap();
    let nodes = mix(&mut tape, &bound, cfg, qn, sn, Some(&o)).unwrap();
    tape.value(nodes.q_tot).data().to_vec()
}

#[test]
fn gradient_correctness() {
    let _serial = serial();
    let start = Instant::now();
    let shape = TinyPipeline::default();
    assert_eq!((shape.agents, shape.concepts, shape.embed), (3, 4, 8));
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for seed in 0..20 {
        let r = pipeline_grad_check(shape, seed, 1e-5).unwrap();
        worst = worst.max(r.max_relative_error);
        coords += r.coordinates;
    }
    let took = start.elapsed();
    verdict(
        "gradient correctness",
        worst <= 1e-4 && took < Duration::from_secs(60),
        format!("20 configs, {coords} coordinates, max relative error {worst:.2e} (<= 1e-4), {}", secs(took)),
    );
}

#[test]
fn monotonicity() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f6e6f);
    let mut min_grad = f64::INFINITY;
    let mut min_step = f64::INFINITY;
    for draw_i in 0..1000 {
        let (cfg, p) = random_mixer(&mut rng, 4);
        let s = draw(&mut rng, cfg.state_dim, 2.0);
        let q = draw(&mut rng, cfg.n_agents, 5.0);
        let iv = if draw_i % 2 == 0 { InterventionMask::new() } else { random_mask(&mut rng, cfg.concepts) };

        let mut tape = Tape::new();
        let bound = p.bind_frozen(&mut tape);
        let qn = tape.param(Tensor::matrix(1, cfg.n_agents, q.clone()).unwrap());
        let sn = tape.constant(Tensor::matrix(1, cfg.state_dim, s.clone()).unwrap());
        let o = RowOverrides::broadcast(&iv, 1, cfg.concepts).unwrap();
        let nodes = mix(&mut tape, &bound, &cfg, qn, sn, Some(&o)).unwrap();
        let root = tape.sum(nodes.q_tot);
        let grads = tape.backward(root).unwrap();
        let g = grads.get_or_zeros(&tape, qn);
        min_grad = g.data().iter().fold(min_grad, |m, &v| m.min(v));

        // Independent check by direct perturbation.
        let base = q_tot_rows(&cfg, &p, &q, &s, &iv)[0];
        for i in 0..cfg.n_agents {
            let mut up = q.clone();
            up[i] += 0.25;
            min_step = min_step.min(q_tot_rows(&cfg, &p, &up, &s, &iv)[0] - base);
        }
    }
    verdict(
        "monotonicity",
        min_grad >= -1e-10 && min_step >= -1e-10,
        format!("1000 draws, min dQtot/dq_i {min_grad:.3e}, min finite increase {min_step:.3e} (>= -1e-10)"),
    );
}

#[test]
fn individual_global_max() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1617);
    let mut mismatches = 0;
    let mut ties = 0;
    let mut joint_total = 0;
    for inst in 0..500 {
        let (cfg, p) = random_mixer(&mut rng, 3);
        let n = cfg.n_agents;
        let acts = rng.gen_range(2..=5);
        let utilities: Vec<Vec<f64>> = (0..n).map(|_| draw(&mut rng, acts, 3.0)).collect();
        let s = draw(&mut rng, cfg.state_dim, 2.0);
        let iv = if inst % 2 == 0 { InterventionMask::new() } else { random_mask(&mut rng, cfg.concepts) };

        let joints: Vec<Vec<usize>> = (0..acts.pow(n as u32))
            .map(|mut code| {
                (0..n)
                    .map(|_| {
                        let a = code % acts;
                        code /= acts;
                        a
                    })
                    .collect()
            })
            .collect();
        let q: Vec<f64> = joints
            .iter()
            .flat_map(|j| j.iter().enumerate().map(|(i, &a)| utilities[i][a]).collect::<Vec<_>>())
            .collect();
        let values = q_tot_rows(&cfg, &p, &q, &s, &iv);
        joint_total += joints.len();

        let mut best = 0;
        for (j, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = j;
            }
        }
        let greedy: Vec<usize> = utilities
            .iter()
            .map(|u| (0..acts).fold(0, |b, a| if u[a] > u[b] { a } else { b }))
            .collect();
        let g = joints.iter().position(|j| *j == greedy).unwrap();
        let top = values.iter().filter(|&&v| v == values[best]).count();
        if top > 1 {
            ties += 1;
        }
        if values[g] != values[best] || (top == 1 && joints[best] != greedy) {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        "IGM",
        mismatches == 0 && took < Duration::from_secs(60),
        format!(
            "500 instances ({joint_total} joint actions), {mismatches} mismatches, {ties} exact ties, {}",
            secs(took)
        ),
    );
}

/// Forced pipeline versus one wired directly through the chosen path of
/// concept `k`; returns `(bit identical, blocked path gradient all zero,
/// open path gradient nonzero)`.
fn intervention_case(rng: &mut ChaCha8Rng, value: f64) -> (bool, bool, bool) {
    let (cfg, p) = loop {
        let (c, p) = random_mixer(rng, 4);
        if c.concepts >= 2 {
            break (c, p);
        }
    };
    let (kk, m, n, sd) = (cfg.concepts, cfg.embed, cfg.n_agents, cfg.state_dim);
    let k = rng.gen_range(0..kk);
    let s = draw(rng, sd, 2.0);
    let q = draw(rng, n, 5.0);
    let mut iv = random_mask(rng, kk);
    iv.remove(k);
    let mut forced_iv = iv.clone();
    forced_iv.set(k, value).unwrap();

    // Forced pipeline, with gradients.
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let qn = tape.constant(Tensor::matrix(1, n, q.clone()).unwrap());
    let sn = tape.constant(Tensor::matrix(1, sd, s.clone()).unwrap());
    let o = RowOverrides::broadcast(&forced_iv, 1, kk).unwrap();
    let nodes = mix(&mut tape, &bound, &cfg, qn, sn, Some(&o)).unwrap();
    let forced = tape.value(nodes.q_tot).data()[0];
    let bias = tape.value(nodes.bias).clone();
    let root = tape.sum(nodes.q_tot);
    let grads = bound.gradients(&tape, &tape.backward(root).unwrap());

    // Hard-wired pipeline: concept k uses one path directly, others unchanged.
    let mut tape = Tape::new();
    let bound = p.bind_frozen(&mut tape);
    let qn = tape.constant(Tensor::matrix(1, n, q).unwrap());
    let sn = tape.constant(Tensor::matrix(1, sd, s).unwrap());
    let (pos, neg) = concept_embeddings(&mut tape, &bound, &cfg, sn).unwrap();
    let (_, p_pred) = concept_probs(&mut tape, &bound, pos, neg).unwrap();
    let o = RowOverrides::broadcast(&iv, 1, kk).unwrap();
    let p_other = cmq_core::mixer::override_probs(&mut tape, p_pred, &o).unwrap();
    let mixed = mixed_embeddings(&mut tape, p_other, pos, neg).unwrap();
    let (q_pos, q_neg) = temporal_q(&mut tape, &bound, &cfg, sn, qn).unwrap();
    let q_hat = concept_q(&mut tape, p_other, q_pos, q_neg).unwrap();
    let path_embed = tape.value(if value == 1.0 { pos } else { neg }).row(k).to_vec();
    let path_q = tape.value(if value == 1.0 { q_pos } else { q_neg }).data()[k];
    let mut wired_embed = tape.value(mixed).data().to_vec();
    wired_embed[k * m..(k + 1) * m].copy_from_slice(&path_embed);
    let mut wired_q = tape.value(q_hat).data().to_vec();
    wired_q[k] = path_q;
    let wired_embed = tape.constant(Tensor::matrix(kk, m, wired_embed).unwrap());
    let wired_q = tape.constant(Tensor::matrix(1, kk, wired_q).unwrap());
    let alpha = credits(&mut tape, &bound, &cfg, wired_embed, sn).unwrap();
    let weighted = tape.mul(alpha, wired_q).unwrap();
    let mixed_q = tape.row_sum(weighted).unwrap();
    let bias = tape.constant(bias);
    let total = tape.add(mixed_q, bias).unwrap();
    let wired = tape.value(total).data()[0];

    let (blocked, open) = if value == 1.0 { ("neg", "pos") } else { ("pos", "neg") };
    let rows = |name: &str, width: usize, cols: usize| -> Vec<f64> {
        grads[name].data()[k * width * cols..(k + 1) * width * cols].to_vec()
    };
    let blocked_grads: Vec<f64> = [
        rows(&format!("mixer.{blocked}.w"), m, sd),
        rows(&format!("mixer.{blocked}.b"), m, 1),
        rows(&format!("mixer.hyper_{blocked}.w"), n, sd),
        rows(&format!("mixer.hyper_{blocked}.b"), n, 1),
    ]
    .concat();
    let open_grads = rows(&format!("mixer.hyper_{open}.b"), n, 1);
    (
        forced.to_bits() == wired.to_bits(),
        blocked_grads.iter().all(|&g| g == 0.0),
        open_grads.iter().any(|&g| g != 0.0),
    )
}

#[test]
fn intervention_semantics() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1f1f);
    let (mut identical, mut zero, mut live) = (0, 0, 0);
    let cases = 400;
    for i in 0..cases {
        let value = if i % 2 == 0 { 1.0 } else { 0.0 };
        let (a, b, c) = intervention_case(&mut rng, value);
        identical += usize::from(a);
        zero += usize::from(b);
        live += usize::from(c);
    }
    verdict(
        "intervention semantics",
        identical == cases && zero == cases && live > cases / 2,
        format!(
            "{cases} cases (p=1 and p=0): {identical} bit-identical, {zero} zero blocked-path gradients, {live} live open paths"
        ),
    );
}

#[test]
fn replacement_rate() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e7);
    let mut details = Vec::new();
    let mut pass = true;
    for p_tilde in [0.1, 0.25, 0.3, 0.75] {
        // Direct rule: 4 supervised + 2 free concepts, p̂ never equals a label.
        let p_hat = [0.5, 0.4, 0.6, 0.3, 0.2, 0.7];
        let labels = [1.0, 0.0, 1.0, 0.0];
        let mut replaced = 0usize;
        let mut free_touched = 0usize;
        for _ in 0..25_000 {
            let out = intervention_mix(&p_hat, &labels, p_tilde, &mut rng);
            replaced += (0..4).filter(|&k| out[k] != p_hat[k]).count();
            free_touched += (4..6).filter(|&k| out[k] != p_hat[k]).count();
        }
        let rate = replaced as f64 / 1e5;
        pass &= (rate - p_tilde).abs() <= 0.01 && free_touched == 0;
        details.push(format!("p~={p_tilde}: {rate:.4}"));
    }

    // Training path: overrides drawn over real foraging episodes.
    let env_cfg = EnvConfig::default();
    let model = Model::new(&ModelConfig::default(), &env_cfg.info()).unwrap();
    let mut env = Env::new(&env_cfg, 0).unwrap();
    let mut episodes = Vec::new();
    let mut seed = 0;
    let mut draws = 0;
    while draws < 100_000 {
        env.reset(seed).unwrap();
        seed += 1;
        let i = env.info();
        let mut e = Episode::empty(i.n_agents, i.n_actions, i.obs_dim, i.state_dim, i.n_concepts);
        loop {
            e.push_view(&env.observations(), &env.state(), &env.concept_labels(), &env.avail_actions());
            if env.is_done() {
                break;
            }
            let a: Vec<usize> = (0..i.n_agents).map(|_| rng.gen_range(0..i.n_actions)).collect();
            let tr = env.step(&a).unwrap();
            e.push_transition(&a, tr.reward, tr.done);
        }
        draws += e.len * model.supervised;
        episodes.push(e);
    }
    let batch: Vec<&Episode> = episodes.iter().collect();
    let o = sample_overrides(&model, &batch, 0.25, &mut rng);
    let forced = o.mask.iter().filter(|&&m| m != 0.0).count();
    let rate = forced as f64 / draws as f64;
    pass &= (rate - 0.25).abs() <= 0.01;
    details.push(format!("batched p~=0.25 over {draws} draws: {rate:.4}"));
    verdict("replacement rate", pass, format!("{} (tolerance 0.01)", details.join(", ")));
}

#[test]
fn matrix_game_learning() {
    let _serial = serial();
    let start = Instant::now();
    let payoff = vec![vec![8.0, 3.0], vec![3.0, 0.0]];
    let game = MatrixGame::new(payoff.clone()).unwrap();
    let mut optimum = (0, 0);
    for a in 0..2 {
        for b in 0..2 {
            if payoff[a][b] > payoff[optimum.0][optimum.1] {
                optimum = (a, b);
            }
        }
    }
    let env = EnvConfig::Matrix(game);
    let mut hits = 0;
    let mut found = Vec::new();
    for seed in 0..5 {
        let mut t = Trainer::new(env.clone(), ModelConfig::default(), TrainConfig::default(), seed).unwrap();
        t.run_until(5_000, |_| {}).unwrap();
        let mut ins = Inspector::new(*t.model(), t.params().clone(), &env, 0).unwrap();
        let steps = ins.run_episode().unwrap();
        let a = &steps[0].view.actions;
        if (a[0], a[1]) == optimum {
            hits += 1;
        }
        found.push(format!("({},{})", a[0], a[1]));
    }
    let took = start.elapsed();
    verdict(
        "matrix game",
        hits >= 4 && took < Duration::from_secs(120),
        format!(
            "optimum ({},{}), greedy after 5k steps {}: {hits}/5 seeds, {}",
            optimum.0,
            optimum.1,
            found.join(" "),
            secs(took)
        ),
    );
}

fn area(rows: &[MetricsRow], budget: u64) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.env_steps <= budget)
        .map(|r| (r.env_steps as f64, r.mean_test_return))
        .collect();
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum::<f64>() / budget as f64
}

/// Random-policy states from reset seeds that training never uses.
fn held_out_states(env_cfg: &EnvConfig, count: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x401d);
    let mut env = Env::new(env_cfg, 0).unwrap();
    let n_actions = env.info().n_actions;
    let n_agents = env.info().n_agents;
    let (mut states, mut labels) = (Vec::new(), Vec::new());
    for i in 0..count {
        env.reset(u64::MAX - i as u64).unwrap();
        let stop = rng.gen_range(0..50);
        for _ in 0..stop {
            if env.is_done() {
                break;
            }
            let a: Vec<usize> = (0..n_agents).map(|_| rng.gen_range(0..n_actions)).collect();
            env.step(&a).unwrap();
        }
        states.push(env.state());
        labels.push(env.concept_labels());
    }
    (states, labels)
}

#[test]
fn foraging_cmq_vs_vdn_and_concept_accuracy() {
    let _serial = serial();
    const BUDGET: u64 = 200_000;
    let start = Instant::now();
    let env = EnvConfig::Lbf(LbfConfig::default());
    let cfg = RunConfig::default();
    assert_eq!((cfg.model.concepts, cfg.train.lambda_c, cfg.train.p_tilde), (16, 0.1, 0.25));
    let (held_states, held_labels) = held_out_states(&env, 1000);

    let mut reached = 0;
    let mut best = Vec::new();
    let (mut auc_cmq, mut auc_vdn) = (0.0, 0.0);
    let mut accuracies = Vec::new();
    for seed in 0..5u64 {
        for kind in [cmq_core::mixer::MixerKind::Cmq, cmq_core::mixer::MixerKind::Vdn] {
            let model = ModelConfig { kind, ..cfg.model };
            let mut t = Trainer::new(env.clone(), model, cfg.train.clone(), seed).unwrap();
            t.run_until(BUDGET, |_| {}).unwrap();
            let a = area(t.metrics(), BUDGET);
            if kind == cmq_core::mixer::MixerKind::Vdn {
                auc_vdn += a / 5.0;
                continue;
            }
            auc_cmq += a / 5.0;
            let top = t
                .metrics()
                .iter()
                .filter(|r| r.env_steps <= BUDGET)
                .map(|r| r.mean_test_return)
                .fold(f64::NEG_INFINITY, f64::max);
            reached += usize::from(top >= 0.8);
            best.push(format!("{top:.3}"));

            let probs = predict_concepts(t.model(), t.params(), &held_states).unwrap();
            let (mut hits, mut total) = (0, 0);
            for (p, c) in probs.iter().zip(&held_labels) {
                for k in 0..t.model().supervised {
                    total += 1;
                    hits += usize::from((p[k] > 0.5) == (c[k] > 0.5));
                }
            }
            accuracies.push(hits as f64 / total as f64);
        }
    }
    let took = start.elapsed();
    let lbf_pass = reached >= 3 && auc_cmq >= auc_vdn;
    report(
        "desk-scale foraging",
        lbf_pass,
        &format!(
            "best greedy return per seed [{}], {reached}/5 seeds >= 0.8 (need 3); normalized AUC cmq {auc_cmq:.4} vs vdn {auc_vdn:.4}; {}",
            best.join(", "),
            secs(took)
        ),
    );
    let min_acc = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    let acc_pass = min_acc >= 0.9;
    let acc: Vec<String> = accuracies.iter().map(|a| format!("{a:.3}")).collect();
    report(
        "concept accuracy",
        acc_pass,
        &format!("1000 held-out states, 4 supervised concepts, per-seed accuracy [{}] (min >= 0.9)", acc.join(", ")),
    );
    assert!(lbf_pass && acc_pass, "foraging criteria failed; see report lines");
}

fn sweep_base() -> RunConfig {
    RunConfig {
        seeds: vec![0, 1],
        ..RunConfig::default()
    }
}

#[test]
fn concept_count_sweep() {
    let _serial = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ks = [4, 8, 16];
    let steps = 12_000;
    let curves = run_sweep(&sweep_base(), &ks, Some(steps), dir.path()).unwrap();
    let interval = sweep_base().train.eval_interval;
    let grid = |rows: &[MetricsRow]| -> Vec<u64> { (0..rows.len() as u64).map(|i| i * interval).collect() };
    let reference = grid(&curves[0].rows);
    let mut pass = curves.len() == ks.len() * 2 && reference.len() >= 6;
    for c in &curves {
        pass &= grid(&c.rows) == reference;
        pass &= c.rows.iter().all(|r| r.mean_test_return.is_finite() && r.concept_p_mean.len() == c.concepts);
        // nominal and actual evaluation steps stay within one episode
        pass &= c.rows.iter().zip(&reference).all(|(r, &g)| r.env_steps >= g && r.env_steps < g + 50);
    }
    let csv = std::fs::read_to_string(dir.path().join("sweep_curves.csv")).unwrap();
    let bands = std::fs::read_to_string(dir.path().join("sweep_bands.csv")).unwrap();
    pass &= csv.lines().count() == 1 + curves.iter().map(|c| c.rows.len()).sum::<usize>();
    pass &= bands.lines().count() == 1 + ks.len() * reference.len();
    let finals: Vec<String> = curves
        .iter()
        .map(|c| format!("K{}s{}={:.3}", c.concepts, c.seed, c.rows.last().unwrap().mean_test_return))
        .collect();
    verdict(
        "concept-count sweep",
        pass,
        format!(
            "K in {{4,8,16}} x 2 seeds at {steps} steps, {} aligned evaluations each, final returns {}, {}",
            reference.len(),
            finals.join(" "),
            secs(start.elapsed())
        ),
    );
}

#[test]
fn determinism_and_resume() {
    let _serial = serial();
    let cfg = RunConfig {
        train: TrainConfig {
            total_steps: 7_000,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_training(&cfg, 11, &a, None).unwrap();
    run_training(&cfg, 11, &b, None).unwrap();
    run_training(&cfg, 11, &c, Some(5_500)).unwrap();
    resume_training(&c, 7_000).unwrap();

    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let mut same_runs = true;
    let mut same_resume = true;
    for f in [METRICS_JSONL, METRICS_CSV, CHECKPOINT_FILE] {
        same_runs &= read(&a, f) == read(&b, f);
        same_resume &= read(&a, f) == read(&c, f);
    }
    let rows = read_metrics_jsonl(&a.join(METRICS_JSONL)).unwrap();
    let trained = rows.iter().any(|r| r.loss.is_some());
    verdict(
        "determinism and resume",
        same_runs && same_resume && trained && rows.len() >= 4,
        format!(
            "{} metric rows; repeat run bit-identical: {same_runs}; 5.5k + resume to 7k bit-identical: {same_resume}",
            rows.len()
        ),
    );
}
