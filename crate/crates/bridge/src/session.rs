use std::collections::BTreeMap;
use std::time::Duration;

use cmq_core::env::{EnvConfig, EnvError};
use cmq_core::mixer::InterventionMask;
use cmq_core::nets::ParamSet;
use cmq_core::runio::Checkpoint;
use cmq_core::training::{Inspector, Model, TrainError};

use crate::protocol::{ErrorCode, Frame, Grid, Mode, Reply, Request, RequestBody};

/// One client's episode, intervention mask and playback mode.
///
/// Requests are applied atomically: a request that yields an error reply
/// leaves the session exactly as it was.
#[derive(Debug, Clone)]
pub struct Session {
    inspector: Inspector,
    env: EnvConfig,
    seed: u64,
    mode: Mode,
    ms_per_step: u64,
    last: Option<(Vec<usize>, f64)>,
}

fn internal(e: TrainError) -> Reply {
    match e {
        TrainError::Env(EnvError::EpisodeOver) => {
            Reply::error(ErrorCode::EpisodeOver, "episode is over; send reset")
        }
        TrainError::Mixer(e) => Reply::error(ErrorCode::Range, e.to_string()),
        TrainError::InvalidConfig(m) => Reply::error(ErrorCode::Range, m),
        e => Reply::error(ErrorCode::Internal, e.to_string()),
    }
}

impl Session {
    pub fn new(model: Model, params: ParamSet, env: EnvConfig, seed: u64) -> Result<Self, TrainError> {
        Ok(Self {
            inspector: Inspector::new(model, params, &env, seed)?,
            env,
            seed,
            mode: Mode::Paused,
            ms_per_step: 0,
            last: None,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, seed: u64) -> Result<Self, TrainError> {
        let model = Model::new(&ckpt.state.model, &ckpt.state.env.info())?;
        Self::new(model, ckpt.state.params.clone(), ckpt.state.env.clone(), seed)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Delay between automatic steps, when in auto mode.
    pub fn auto_interval(&self) -> Option<Duration> {
        (self.mode == Mode::Auto).then(|| Duration::from_millis(self.ms_per_step))
    }

    pub fn mask(&self) -> &InterventionMask {
        self.inspector.mask()
    }

    fn interventions(&self) -> BTreeMap<usize, f64> {
        self.inspector.mask().iter().collect()
    }

    pub fn frame(&self) -> Result<Frame, TrainError> {
        let v = self.inspector.view()?;
        let grid = match (&self.env, v.grid) {
            (EnvConfig::Lbf(c), Some(g)) => Some(Grid {
                width: c.grid_w,
                height: c.grid_h,
                agents: g.agents,
                foods: g.foods,
            }),
            _ => None,
        };
        let cs = v.concepts;
        let pick = |f: fn(&cmq_core::mixer::ConceptState) -> &Vec<f64>| {
            cs.as_ref().map(f).cloned().unwrap_or_default()
        };
        Ok(Frame {
            seed: self.seed,
            t: v.t,
            mode: self.mode,
            grid,
            state: v.state,
            q: v.q,
            actions: v.actions,
            p_pred: pick(|c| &c.p_pred),
            p: pick(|c| &c.p),
            alpha: pick(|c| &c.alpha),
            q_hat: pick(|c| &c.q_hat),
            q_pos: pick(|c| &c.q_pos),
            q_neg: pick(|c| &c.q_neg),
            q_tot: v.q_tot,
            labels: v.labels,
            interventions: self.interventions(),
            last_actions: self.last.as_ref().map(|l| l.0.clone()),
            last_reward: self.last.as_ref().map(|l| l.1),
            episode_return: v.episode_return,
            done: v.done,
        })
    }

    fn frame_reply(&self) -> Reply {
        self.frame().map_or_else(internal, Reply::Frame)
    }

    fn ack(&self) -> Reply {
        Reply::Ack {
            mode: self.mode,
            interventions: self.interventions(),
        }
    }

    fn step(&mut self) -> Reply {
        let mut next = self.inspector.clone();
        match next.step() {
            Ok(d) => {
                self.inspector = next;
                self.last = Some((d.view.actions, d.reward));
                if self.inspector.is_done() {
                    self.mode = Mode::Paused;
                }
                self.frame_reply()
            }
            Err(e) => internal(e),
        }
    }

    pub fn handle(&mut self, req: &Request) -> Reply {
        match &req.body {
            RequestBody::Reset { seed } => {
                let mut next = self.inspector.clone();
                if let Err(e) = next.reset(*seed) {
                    return internal(e);
                }
                self.inspector = next;
                self.seed = *seed;
                self.last = None;
                self.mode = Mode::Paused;
                self.frame_reply()
            }
            RequestBody::Step => self.step(),
            RequestBody::Auto { ms_per_step } => {
                if self.inspector.is_done() {
                    return internal(TrainError::Env(EnvError::EpisodeOver));
                }
                self.mode = Mode::Auto;
                self.ms_per_step = *ms_per_step;
                self.ack()
            }
            RequestBody::Pause => {
                self.mode = Mode::Paused;
                self.ack()
            }
            RequestBody::Intervene { set } => {
                let mut mask = self.inspector.mask().clone();
                for (&k, &v) in set {
                    if let Err(e) = mask.set(k, v) {
                        return Reply::error(ErrorCode::Range, e.to_string());
                    }
                }
                match self.inspector.set_mask(mask) {
                    Ok(()) => self.ack(),
                    Err(e) => internal(e),
                }
            }
            RequestBody::ClearInterventions => {
                self.inspector
                    .set_mask(InterventionMask::new())
                    .expect("an empty mask is always valid");
                self.ack()
            }
            RequestBody::GetState => self.frame_reply(),
        }
    }

    /// Advances one step if in auto mode.
    pub fn tick(&mut self) -> Option<Reply> {
        (self.mode == Mode::Auto).then(|| self.step())
    }
}
