//! Step-by-step greedy playback with mixer introspection and interventions.

use serde::{Deserialize, Serialize};

use super::rollout::{act_batch, Actor};
use super::{Model, TrainError};
use crate::agents::greedy_action;
use crate::env::{Env, EnvConfig, LbfState};
use crate::mixer::{mix_values, vdn_mix_value, ConceptState, InterventionMask, MixerKind};
use crate::nets::ParamSet;

/// Everything the policy and mixer say about the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub t: usize,
    pub state: Vec<f64>,
    pub grid: Option<LbfState>,
    /// Per-agent utilities, one row per agent.
    pub q: Vec<Vec<f64>>,
    /// Greedy joint action that the next step will take (informational
    /// once the episode is over).
    pub actions: Vec<usize>,
    /// Mixer introspection at the chosen utilities; absent for the additive baseline.
    pub concepts: Option<ConceptState>,
    pub q_tot: f64,
    pub labels: Vec<f64>,
    pub episode_return: f64,
    pub done: bool,
}

/// Result of committing one greedy joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub view: StepView,
    pub reward: f64,
}

/// A single greedy episode that can be observed before each step.
#[derive(Debug, Clone)]
pub struct Inspector {
    model: Model,
    params: ParamSet,
    env: Env,
    actor: Actor,
    mask: InterventionMask,
    t: usize,
    episode_return: f64,
}

impl Inspector {
    pub fn new(model: Model, params: ParamSet, env: &EnvConfig, seed: u64) -> Result<Self, TrainError> {
        let env = Env::new(env, seed)?;
        let actor = Actor::new(&model);
        Ok(Self {
            model,
            params,
            env,
            actor,
            mask: InterventionMask::new(),
            t: 0,
            episode_return: 0.0,
        })
    }

    /// Starts a fresh episode. The intervention mask is kept.
    pub fn reset(&mut self, seed: u64) -> Result<(), TrainError> {
        self.env.reset(seed)?;
        self.actor = Actor::new(&self.model);
        self.t = 0;
        self.episode_return = 0.0;
        Ok(())
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn mask(&self) -> &InterventionMask {
        &self.mask
    }

    /// Replaces the mask after validating it against the concept count.
    pub fn set_mask(&mut self, mask: InterventionMask) -> Result<(), TrainError> {
        if self.model.kind != MixerKind::Cmq && !mask.is_empty() {
            return Err(TrainError::InvalidConfig("the additive mixer has no concepts".into()));
        }
        mask.validate(self.model.mixer.concepts)?;
        self.mask = mask;
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.env.is_done()
    }

    /// The view of the current state, leaving the session untouched.
    pub fn view(&self) -> Result<StepView, TrainError> {
        let mut scratch = self.actor.clone();
        self.view_with(&mut scratch)
    }

    fn view_with(&self, actor: &mut Actor) -> Result<StepView, TrainError> {
        let state = self.env.state();
        let grid = self.env.lbf_state().cloned();
        let labels = self.env.concept_labels();
        let done = self.env.is_done();
        let mut view = StepView {
            t: self.t,
            state,
            grid,
            q: Vec::new(),
            actions: Vec::new(),
            concepts: None,
            q_tot: 0.0,
            labels,
            episode_return: self.episode_return,
            done,
        };
        let q = act_batch(&self.model, &self.params, &mut [actor], &[self.env.observations()])?;
        let avail = self.env.avail_actions();
        let actions = q
            .iter()
            .zip(&avail)
            .map(|(q, m)| greedy_action(q, m))
            .collect::<Result<Vec<_>, _>>()?;
        let chosen: Vec<f64> = q.iter().zip(&actions).map(|(q, &a)| q[a]).collect();
        match self.model.kind {
            MixerKind::Cmq => {
                let cs = mix_values(&self.params, &self.model.mixer, &chosen, &view.state, &self.mask)?;
                view.q_tot = cs.q_tot;
                view.concepts = Some(cs);
            }
            MixerKind::Vdn => view.q_tot = vdn_mix_value(&chosen)?,
        }
        view.q = q;
        view.actions = actions;
        Ok(view)
    }

    /// Takes the greedy joint action from the current state. Returns the
    /// view it was chosen from together with the resulting reward.
    pub fn step(&mut self) -> Result<Decision, TrainError> {
        if self.env.is_done() {
            return Err(crate::env::EnvError::EpisodeOver.into());
        }
        let mut actor = self.actor.clone();
        let view = self.view_with(&mut actor)?;
        let tr = self.env.step(&view.actions)?;
        actor.last = view.actions.iter().map(|&a| Some(a)).collect();
        self.actor = actor;
        self.t += 1;
        self.episode_return += tr.reward;
        Ok(Decision {
            view,
            reward: tr.reward,
        })
    }

    /// Plays greedily to the end of the episode.
    pub fn run_episode(&mut self) -> Result<Vec<Decision>, TrainError> {
        let mut out = Vec::new();
        while !self.env.is_done() {
            out.push(self.step()?);
        }
        Ok(out)
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }
}
