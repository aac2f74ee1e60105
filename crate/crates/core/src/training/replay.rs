use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// One recorded episode of `len` transitions, stored as flat row-major
/// arrays. Per-step quantities observed before acting (observations,
/// states, labels, masks) have `len + 1` entries so the final next-state
/// is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_concepts: usize,
    pub len: usize,
    /// `(len+1) × n_agents × obs_dim`
    pub obs: Vec<f64>,
    /// `(len+1) × state_dim`
    pub states: Vec<f64>,
    /// `len × n_agents`
    pub actions: Vec<usize>,
    /// `len`
    pub rewards: Vec<f64>,
    /// Whether the last transition ended the episode (no bootstrap).
    pub terminated: bool,
    /// `(len+1) × n_concepts`, entries 0 or 1.
    pub concepts: Vec<f64>,
    /// `(len+1) × n_agents × n_actions`
    pub avail: Vec<bool>,
}

impl Episode {
    pub fn empty(
        n_agents: usize,
        n_actions: usize,
        obs_dim: usize,
        state_dim: usize,
        n_concepts: usize,
    ) -> Self {
        Self {
            n_agents,
            n_actions,
            obs_dim,
            state_dim,
            n_concepts,
            len: 0,
            obs: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            concepts: Vec::new(),
            avail: Vec::new(),
        }
    }

    /// Appends the pre-action view of step `len` (or the final state).
    pub fn push_view(
        &mut self,
        obs: &[Vec<f64>],
        state: &[f64],
        concepts: &[f64],
        avail: &[Vec<bool>],
    ) {
        for o in obs {
            self.obs.extend_from_slice(o);
        }
        self.states.extend_from_slice(state);
        self.concepts.extend_from_slice(concepts);
        for a in avail {
            self.avail.extend_from_slice(a);
        }
    }

    pub fn push_transition(&mut self, actions: &[usize], reward: f64, done: bool) {
        self.actions.extend_from_slice(actions);
        self.rewards.push(reward);
        self.terminated = done;
        self.len += 1;
    }

    pub fn obs_at(&self, t: usize, agent: usize) -> &[f64] {
        let start = (t * self.n_agents + agent) * self.obs_dim;
        &self.obs[start..start + self.obs_dim]
    }

    pub fn state_at(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action_at(&self, t: usize, agent: usize) -> usize {
        self.actions[t * self.n_agents + agent]
    }

    pub fn concepts_at(&self, t: usize) -> &[f64] {
        &self.concepts[t * self.n_concepts..(t + 1) * self.n_concepts]
    }

    pub fn avail_at(&self, t: usize, agent: usize) -> &[bool] {
        let start = (t * self.n_agents + agent) * self.n_actions;
        &self.avail[start..start + self.n_actions]
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::MalformedEpisode(msg));
        let (t, n) = (self.len, self.n_agents);
        if t == 0 {
            return bad("episode has no transitions".into());
        }
        let checks = [
            ("obs", self.obs.len(), (t + 1) * n * self.obs_dim),
            ("states", self.states.len(), (t + 1) * self.state_dim),
            ("actions", self.actions.len(), t * n),
            ("rewards", self.rewards.len(), t),
            ("concepts", self.concepts.len(), (t + 1) * self.n_concepts),
            ("avail", self.avail.len(), (t + 1) * n * self.n_actions),
        ];
        for (name, got, want) in checks {
            if got != want {
                return bad(format!("{name} has {got} entries, expected {want}"));
            }
        }
        if let Some(r) = self.rewards.iter().find(|r| !r.is_finite()) {
            return bad(format!("non-finite reward {r}"));
        }
        if self.obs.iter().chain(&self.states).any(|v| !v.is_finite()) {
            return bad("non-finite observation or state".into());
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= self.n_actions) {
            return bad(format!("action {a} out of range"));
        }
        if self.concepts.iter().any(|&c| c != 0.0 && c != 1.0) {
            return bad("concept labels must be 0 or 1".into());
        }
        Ok(())
    }
}

/// FIFO store of whole episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    pub fn push_episode(&mut self, episode: Episode) -> Result<(), TrainError> {
        episode.validate()?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        Ok(())
    }

    /// `size` distinct episodes chosen uniformly.
    pub fn sample_batch(
        &self,
        rng: &mut impl Rng,
        size: usize,
    ) -> Result<Vec<&Episode>, TrainError> {
        if size == 0 || size > self.episodes.len() {
            return Err(TrainError::InsufficientEpisodes {
                requested: size,
                available: self.episodes.len(),
            });
        }
        Ok(sample(rng, self.episodes.len(), size)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect())
    }
}
