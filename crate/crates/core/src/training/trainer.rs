use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::learner::train_step;
use super::optim::OptimState;
use super::replay::ReplayBuffer;
use super::rollout::{collect_episode, concept_accuracy, evaluate, predict_concepts};
use super::{Model, ModelConfig, TrainConfig, TrainError};
use crate::env::{Env, EnvConfig};
use crate::nets::ParamSet;

/// One evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub episodes: u64,
    pub mean_test_return: f64,
    pub loss: Option<f64>,
    pub epsilon: f64,
    /// Mean `p̂_k` over evaluation states, one entry per concept.
    pub concept_p_mean: Vec<f64>,
    pub concept_accuracy: Option<f64>,
}

/// Exact position of a ChaCha stream, for checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Full resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub params: ParamSet,
    pub target: ParamSet,
    pub optim: OptimState,
    pub buffer: ReplayBuffer,
    pub rng: RngState,
    pub env_steps: u64,
    pub episodes: u64,
    pub train_steps: u64,
    pub last_loss: Option<f64>,
    pub next_eval: u64,
    pub metrics: Vec<MetricsRow>,
}

/// Seeds of the fixed greedy test episodes for a run.
pub fn eval_seeds(run_seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(0xe7a1);
    (0..count).map(|_| rng.gen()).collect()
}

/// Episode-driven training loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    state: TrainerState,
    model: Model,
    env: Env,
    rng: ChaCha8Rng,
    eval_seeds: Vec<u64>,
}

impl Trainer {
    pub fn new(
        env: EnvConfig,
        model_cfg: ModelConfig,
        train: TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        train.validate()?;
        env.validate()?;
        let model = Model::new(&model_cfg, &env.info())?;
        let params = model.init_params(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let state = TrainerState {
            target: params.clone(),
            params,
            optim: OptimState::new(train.lr, train.rms_alpha, train.rms_eps),
            buffer: ReplayBuffer::new(train.buffer_episodes),
            rng: RngState::capture(&rng),
            env_steps: 0,
            episodes: 0,
            train_steps: 0,
            last_loss: None,
            next_eval: 0,
            metrics: Vec::new(),
            env,
            model: model_cfg,
            train,
            seed,
        };
        Self::from_state(state)
    }

    pub fn from_state(state: TrainerState) -> Result<Self, TrainError> {
        let model = Model::new(&state.model, &state.env.info())?;
        let env = Env::new(&state.env, state.seed)?;
        let rng = state.rng.restore();
        let eval_seeds = eval_seeds(state.seed, state.train.eval_episodes);
        Ok(Self {
            state,
            model,
            env,
            rng,
            eval_seeds,
        })
    }

    /// Snapshot suitable for checkpointing.
    pub fn state(&self) -> TrainerState {
        let mut s = self.state.clone();
        s.rng = RngState::capture(&self.rng);
        s
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &ParamSet {
        &self.state.params
    }

    pub fn env_steps(&self) -> u64 {
        self.state.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.state.episodes
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.state.metrics
    }

    pub fn epsilon(&self) -> f64 {
        self.state.train.epsilon.value(self.state.env_steps)
    }

    /// Greedy evaluation with the current parameters.
    pub fn evaluate_now(&self) -> Result<MetricsRow, TrainError> {
        let summary = evaluate(&self.model, &self.state.params, &self.state.env, &self.eval_seeds)?;
        let probs = predict_concepts(&self.model, &self.state.params, &summary.states)?;
        let k = probs.first().map_or(0, Vec::len);
        let mut p_mean = vec![0.0; k];
        for p in &probs {
            for (m, v) in p_mean.iter_mut().zip(p) {
                *m += v / probs.len() as f64;
            }
        }
        Ok(MetricsRow {
            env_steps: self.state.env_steps,
            episodes: self.state.episodes,
            mean_test_return: summary.mean_return,
            loss: self.state.last_loss,
            epsilon: self.epsilon(),
            concept_p_mean: p_mean,
            concept_accuracy: concept_accuracy(&self.model, &probs, &summary.labels),
        })
    }

    fn record_eval(&mut self, on_row: &mut impl FnMut(&MetricsRow)) -> Result<(), TrainError> {
        let row = self.evaluate_now()?;
        on_row(&row);
        self.state.metrics.push(row);
        let interval = self.state.train.eval_interval;
        while self.state.next_eval <= self.state.env_steps {
            self.state.next_eval += interval;
        }
        Ok(())
    }

    /// Collects one episode and performs the scheduled updates.
    pub fn step_episode(&mut self, on_row: &mut impl FnMut(&MetricsRow)) -> Result<(), TrainError> {
        if self.state.metrics.is_empty() {
            self.record_eval(on_row)?;
        }
        let eps = self.epsilon();
        let episode_seed = self.rng.gen();
        self.env.reset(episode_seed)?;
        let episode = collect_episode(
            &self.model,
            &self.state.params,
            &mut self.env,
            eps,
            &mut self.rng,
        )?;
        self.state.env_steps += episode.len as u64;
        self.state.episodes += 1;
        self.state.buffer.push_episode(episode)?;

        let cfg = &self.state.train;
        let ready = self.state.buffer.len() >= cfg.batch_size.max(1)
            && self.state.episodes >= cfg.warmup_episodes;
        if ready {
            let batch = self.state.buffer.sample_batch(&mut self.rng, cfg.batch_size)?;
            let stats = train_step(
                &self.model,
                cfg,
                &mut self.state.params,
                &self.state.target,
                &mut self.state.optim,
                &batch,
                &mut self.rng,
            )?;
            self.state.last_loss = Some(stats.loss);
            self.state.train_steps += 1;
        }
        if self.state.episodes % self.state.train.target_interval == 0 {
            self.state.target = self.state.params.clone();
        }
        if self.state.env_steps >= self.state.next_eval {
            self.record_eval(on_row)?;
        }
        Ok(())
    }

    /// Trains until at least `env_steps` environment steps have been taken.
    pub fn run_until(
        &mut self,
        env_steps: u64,
        mut on_row: impl FnMut(&MetricsRow),
    ) -> Result<(), TrainError> {
        if self.state.metrics.is_empty() {
            self.record_eval(&mut on_row)?;
        }
        while self.state.env_steps < env_steps {
            self.step_episode(&mut on_row)?;
        }
        Ok(())
    }

    /// Ensures the last metrics row reflects the final parameters.
    pub fn finish(&mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<(), TrainError> {
        let stale = self
            .state
            .metrics
            .last()
            .map_or(true, |m| m.env_steps != self.state.env_steps);
        if stale {
            self.record_eval(&mut on_row)?;
        }
        Ok(())
    }
}
