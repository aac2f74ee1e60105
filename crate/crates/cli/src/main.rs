use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cmq_bridge::Session;
use cmq_core::mixer::{InterventionMask, MixerKind};
use cmq_core::runio::{
    export_trace, load_checkpoint, load_config, resume_training, run_sweep, run_training,
    trace_episode, Checkpoint, RunConfig, CHECKPOINT_FILE,
};
use cmq_core::training::{pipeline_grad_check, Inspector, Model, TinyPipeline};

#[derive(Parser)]
#[command(name = "cmq", version, about = "Concept-bottleneck multi-agent Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train this seed only instead of the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Stop after this many environment steps; the configured budget is kept.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    mixer: Option<MixerKind>,
    #[arg(long)]
    concepts: Option<usize>,
}

#[derive(Args)]
struct PolicyArgs {
    /// Checkpoint file, or a run directory containing one.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Forced concept probabilities, e.g. "0=1,2=0".
    #[arg(long, default_value = "")]
    intervene: InterventionMask,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeds and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue the run in --out up to --steps.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy episodes from a checkpoint, one JSON line each.
    Eval {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 1)]
        episodes: u64,
    },
    /// Record one greedy episode with mixer introspection.
    Trace {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value = "trace")]
        out: PathBuf,
    },
    /// Finite-difference check of the full training loss on tiny models.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        configs: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every concept count in --ks for each configured seed.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
        ks: Vec<usize>,
    },
    /// Serve live sessions over TCP.
    Serve {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Exit after the first client disconnects.
        #[arg(long)]
        once: bool,
    },
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(k) = args.mixer {
        cfg.model.kind = k;
    }
    if let Some(k) = args.concepts {
        if k == 0 {
            bail!("--concepts must be at least 1");
        }
        cfg.model.concepts = k;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn checkpoint_at(path: &Path) -> Result<Checkpoint> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    Ok(load_checkpoint(&file)?)
}

fn model_of(ckpt: &Checkpoint) -> Result<Model> {
    Ok(Model::new(&ckpt.state.model, &ckpt.state.env.info())?)
}

fn last_return(rows: &[cmq_core::training::MetricsRow]) -> f64 {
    rows.last().map_or(f64::NAN, |r| r.mean_test_return)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { run, resume } => {
            if resume {
                let steps = run.steps.context("--resume needs --steps")?;
                let out = resume_training(&run.out, steps)?;
                println!("{}: final test return {:.4}", run.out.display(), last_return(&out.metrics));
                return Ok(());
            }
            let cfg = run_config(&run)?;
            let multi = cfg.seeds.len() > 1;
            for &seed in &cfg.seeds {
                let dir = if multi { run.out.join(format!("seed{seed}")) } else { run.out.clone() };
                let out = run_training(&cfg, seed, &dir, run.steps)?;
                println!("{}: final test return {:.4}", dir.display(), last_return(&out.metrics));
            }
        }
        Command::Eval { policy, episodes } => {
            let ckpt = checkpoint_at(&policy.checkpoint)?;
            let model = model_of(&ckpt)?;
            for seed in policy.seed..policy.seed + episodes {
                let mut ins = Inspector::new(model, ckpt.state.params.clone(), &ckpt.state.env, seed)?;
                ins.set_mask(policy.intervene.clone())?;
                let steps = ins.run_episode()?;
                let actions: Vec<&Vec<usize>> = steps.iter().map(|d| &d.view.actions).collect();
                let q_tot: Vec<f64> = steps.iter().map(|d| d.view.q_tot).collect();
                let line = serde_json::json!({
                    "seed": seed,
                    "return": ins.episode_return(),
                    "length": steps.len(),
                    "actions": actions,
                    "q_tot": q_tot,
                });
                println!("{line}");
            }
        }
        Command::Trace { policy, out } => {
            let ckpt = checkpoint_at(&policy.checkpoint)?;
            let model = model_of(&ckpt)?;
            let (header, records, embeds) =
                trace_episode(&model, &ckpt.state.params, &ckpt.state.env, policy.seed, &policy.intervene)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let trace = out.join("trace.jsonl");
            let emb = out.join("embeddings.csv");
            export_trace(&trace, Some(&emb), &header, &records, &embeds)?;
            println!("{} steps -> {} and {}", records.len(), trace.display(), emb.display());
        }
        Command::Gradcheck {
            configs,
            eps,
            tolerance,
            seed,
        } => {
            let mut worst: f64 = 0.0;
            for s in seed..seed + configs {
                let r = pipeline_grad_check(TinyPipeline::default(), s, eps)?;
                println!(
                    "config {s}: {} coordinates, max relative error {:.3e}",
                    r.coordinates, r.max_relative_error
                );
                worst = worst.max(r.max_relative_error);
            }
            if !(worst <= tolerance) {
                bail!("max relative error {worst:.3e} exceeds {tolerance:.1e}");
            }
            println!("ok: max relative error {worst:.3e}");
        }
        Command::Sweep { run, ks } => {
            let cfg = run_config(&run)?;
            if ks.iter().any(|&k| k == 0) {
                bail!("--ks entries must be at least 1");
            }
            let curves = run_sweep(&cfg, &ks, run.steps, &run.out)?;
            for c in &curves {
                println!("K={} seed={}: final test return {:.4}", c.concepts, c.seed, last_return(&c.rows));
            }
            println!("curves -> {}", run.out.join("sweep_curves.csv").display());
        }
        Command::Serve {
            policy,
            port,
            host,
            once,
        } => {
            let ckpt = checkpoint_at(&policy.checkpoint)?;
            let mut template = Session::from_checkpoint(&ckpt, policy.seed)?;
            if !policy.intervene.is_empty() {
                let set = policy.intervene.iter().collect();
                let req = cmq_bridge::Request::new(None, cmq_bridge::RequestBody::Intervene { set });
                if let cmq_bridge::Reply::Error(e) = template.handle(&req) {
                    bail!("--intervene: {}", e.message);
                }
            }
            let listener = TcpListener::bind((host.as_str(), port))
                .with_context(|| format!("binding {host}:{port}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            cmq_bridge::serve(listener, || template.clone(), once.then_some(1))?;
        }
    }
    Ok(())
}
