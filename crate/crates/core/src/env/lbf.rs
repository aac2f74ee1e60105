//! Level-based foraging on a small grid.
//!
//! Agents and foods carry levels. A food disappears when the agents that
//! stand next to it and choose `eat` in the same step have a combined
//! level at least as high as the food's. Rewards are normalized so that
//! eating every food yields a return of exactly 1.0; every step in which
//! nothing is eaten costs `coop_penalty`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Eat,
    Noop,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Eat,
        Action::Noop,
    ];

    pub fn from_index(i: usize) -> Result<Self, EnvError> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(EnvError::InvalidAction { action: i, n_actions: 6 })
    }

    fn delta(self) -> Option<(i64, i64)> {
        match self {
            Action::Up => Some((0, -1)),
            Action::Down => Some((0, 1)),
            Action::Left => Some((-1, 0)),
            Action::Right => Some((1, 0)),
            Action::Eat | Action::Noop => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    pub n_agents: usize,
    pub n_foods: usize,
    pub max_agent_level: u32,
    pub episode_limit: usize,
    /// Half-width of the square egocentric view (2 gives a 5×5 window).
    pub view_range: usize,
    pub coop_penalty: f64,
    /// Make food 0 too heavy for any single agent.
    pub force_coop: bool,
}

impl Default for LbfConfig {
    fn default() -> Self {
        Self {
            grid_w: 8,
            grid_h: 8,
            n_agents: 2,
            n_foods: 2,
            max_agent_level: 2,
            episode_limit: 50,
            view_range: 2,
            coop_penalty: -0.002,
            force_coop: true,
        }
    }
}

impl LbfConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.grid_w < 4 || self.grid_h < 4 {
            return bad(format!("grid {}x{} smaller than 4x4", self.grid_w, self.grid_h));
        }
        if self.n_agents == 0 || self.n_foods == 0 {
            return bad("need at least one agent and one food".into());
        }
        if self.episode_limit == 0 {
            return bad("episode_limit must be at least 1".into());
        }
        if self.max_agent_level == 0 {
            return bad("max_agent_level must be at least 1".into());
        }
        if self.force_coop && self.n_agents < 2 {
            return bad("force_coop needs at least two agents".into());
        }
        if !self.coop_penalty.is_finite() || self.coop_penalty > 0.0 {
            return bad(format!("coop_penalty {} must be finite and <= 0", self.coop_penalty));
        }
        Ok(())
    }

    /// Upper bound on any food level this config can generate.
    pub fn max_food_level(&self) -> u32 {
        2 * self.max_agent_level
    }

    pub fn window(&self) -> usize {
        2 * self.view_range + 1
    }

    pub fn obs_dim(&self) -> usize {
        3 * self.window() * self.window() + 3
    }

    pub fn state_dim(&self) -> usize {
        3 * self.n_agents + 4 * self.n_foods + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCell {
    pub x: usize,
    pub y: usize,
    pub level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoodCell {
    pub x: usize,
    pub y: usize,
    pub level: u32,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfState {
    pub agents: Vec<AgentCell>,
    pub foods: Vec<FoodCell>,
    pub timestep: usize,
}

impl LbfState {
    pub fn total_food_level(&self) -> u32 {
        self.foods.iter().map(|f| f.level).sum()
    }

    pub fn all_eaten(&self) -> bool {
        self.foods.iter().all(|f| !f.alive)
    }

    pub fn max_agent_level(&self) -> u32 {
        self.agents.iter().map(|a| a.level).max().unwrap_or(0)
    }

    pub fn is_done(&self, cfg: &LbfConfig) -> bool {
        self.all_eaten() || self.timestep >= cfg.episode_limit
    }

    pub fn agent_at(&self, x: usize, y: usize) -> Option<usize> {
        self.agents.iter().position(|a| a.x == x && a.y == y)
    }

    pub fn alive_food_at(&self, x: usize, y: usize) -> Option<usize> {
        self.foods.iter().position(|f| f.alive && f.x == x && f.y == y)
    }

    /// Checks the structural invariants a reachable state satisfies.
    pub fn check(&self, cfg: &LbfConfig) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidState(msg));
        if self.agents.len() != cfg.n_agents || self.foods.len() != cfg.n_foods {
            return bad("entity counts differ from config".into());
        }
        if self.timestep > cfg.episode_limit {
            return bad(format!("timestep {} beyond limit", self.timestep));
        }
        let mut cells = Vec::new();
        for a in &self.agents {
            if a.x >= cfg.grid_w || a.y >= cfg.grid_h || a.level == 0 {
                return bad(format!("agent {a:?} invalid"));
            }
            cells.push((a.x, a.y));
        }
        for f in &self.foods {
            if f.x >= cfg.grid_w || f.y >= cfg.grid_h || f.level == 0 {
                return bad(format!("food {f:?} invalid"));
            }
            if f.alive {
                cells.push((f.x, f.y));
            }
        }
        let n = cells.len();
        cells.sort_unstable();
        cells.dedup();
        if cells.len() != n {
            return bad("overlapping entities".into());
        }
        Ok(())
    }
}

/// Per-agent feature vectors, all of equal length with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointObservation {
    pub agents: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfStep {
    pub state: LbfState,
    pub obs: JointObservation,
    pub reward: f64,
    pub done: bool,
    /// Indices of foods consumed during this step.
    pub eaten: Vec<usize>,
}

/// Samples a fresh episode; deterministic for a fixed `(cfg, seed)`.
///
/// All entities land on distinct uniformly chosen cells. Agent levels are
/// uniform in `1..=max_agent_level`. With `force_coop`, food 0 gets the
/// combined level of the two weakest agents (raised above the strongest
/// agent if needed); other foods are uniform in `1..=` the strongest
/// agent's level, so a single agent can always eat them.
pub fn lbf_reset(cfg: &LbfConfig, seed: u64) -> Result<(LbfState, JointObservation), EnvError> {
    cfg.validate()?;
    let cells = cfg.grid_w * cfg.grid_h;
    let needed = cfg.n_agents + cfg.n_foods;
    if needed > cells {
        return Err(EnvError::GridTooSmall { needed, cells });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, cells, needed).into_vec();
    let pos = |i: usize| (picks[i] % cfg.grid_w, picks[i] / cfg.grid_w);

    let agents: Vec<AgentCell> = (0..cfg.n_agents)
        .map(|i| {
            let (x, y) = pos(i);
            AgentCell {
                x,
                y,
                level: rng.gen_range(1..=cfg.max_agent_level),
            }
        })
        .collect();
    let mut levels: Vec<u32> = agents.iter().map(|a| a.level).collect();
    levels.sort_unstable();
    let strongest = *levels.last().expect("n_agents >= 1");

    let foods = (0..cfg.n_foods)
        .map(|j| {
            let (x, y) = pos(cfg.n_agents + j);
            let level = if cfg.force_coop && j == 0 {
                (levels[0] + levels[1]).max(strongest + 1)
            } else {
                rng.gen_range(1..=strongest)
            };
            FoodCell {
                x,
                y,
                level,
                alive: true,
            }
        })
        .collect();
    let state = LbfState {
        agents,
        foods,
        timestep: 0,
    };
    let obs = lbf_observe(cfg, &state);
    Ok((state, obs))
}

fn adjacent(ax: usize, ay: usize, bx: usize, by: usize) -> bool {
    ax.abs_diff(bx) + ay.abs_diff(by) == 1
}

/// Advances one step. Pure: the input state is not modified.
///
/// Moves are applied in ascending agent index; a move is blocked by the
/// grid edge, by alive food, and by any agent occupying the target at the
/// time the move is processed. Each eating agent commits to its
/// lowest-index adjacent alive food.
pub fn lbf_step(cfg: &LbfConfig, state: &LbfState, actions: &[usize]) -> Result<LbfStep, EnvError> {
    if actions.len() != state.agents.len() {
        return Err(EnvError::WrongActionCount {
            expected: state.agents.len(),
            actual: actions.len(),
        });
    }
    let actions: Vec<Action> = actions
        .iter()
        .map(|&a| Action::from_index(a))
        .collect::<Result<_, _>>()?;
    if state.is_done(cfg) {
        return Err(EnvError::EpisodeOver);
    }

    let mut next = state.clone();
    for (i, action) in actions.iter().enumerate() {
        let Some((dx, dy)) = action.delta() else {
            continue;
        };
        let nx = next.agents[i].x as i64 + dx;
        let ny = next.agents[i].y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= cfg.grid_w as i64 || ny >= cfg.grid_h as i64 {
            continue;
        }
        let (nx, ny) = (nx as usize, ny as usize);
        if next.alive_food_at(nx, ny).is_some() || next.agent_at(nx, ny).is_some() {
            continue;
        }
        next.agents[i].x = nx;
        next.agents[i].y = ny;
    }

    let mut committed = vec![0u32; next.foods.len()];
    for (i, action) in actions.iter().enumerate() {
        if *action != Action::Eat {
            continue;
        }
        let a = next.agents[i];
        if let Some(f) = next
            .foods
            .iter()
            .position(|f| f.alive && adjacent(a.x, a.y, f.x, f.y))
        {
            committed[f] += a.level;
        }
    }

    let total = state.total_food_level() as f64;
    let mut reward = 0.0;
    let mut eaten = Vec::new();
    for (j, food) in next.foods.iter_mut().enumerate() {
        if food.alive && committed[j] > 0 && committed[j] >= food.level {
            food.alive = false;
            reward += food.level as f64 / total;
            eaten.push(j);
        }
    }
    if eaten.is_empty() {
        reward += cfg.coop_penalty;
    }
    next.timestep += 1;
    let done = next.is_done(cfg);
    let obs = lbf_observe(cfg, &next);
    Ok(LbfStep {
        state: next,
        obs,
        reward,
        done,
        eaten,
    })
}

/// Egocentric window features per agent.
///
/// For every cell of the `(2r+1)²` window, row-major from the top-left:
/// food level, agent level, and an off-grid flag. Then the agent's own
/// level and its normalized `x`, `y`.
pub fn lbf_observe(cfg: &LbfConfig, state: &LbfState) -> JointObservation {
    let r = cfg.view_range as i64;
    let food_norm = cfg.max_food_level() as f64;
    let agent_norm = cfg.max_agent_level as f64;
    let agents = state
        .agents
        .iter()
        .map(|me| {
            let mut v = Vec::with_capacity(cfg.obs_dim());
            for dy in -r..=r {
                for dx in -r..=r {
                    let x = me.x as i64 + dx;
                    let y = me.y as i64 + dy;
                    if x < 0 || y < 0 || x >= cfg.grid_w as i64 || y >= cfg.grid_h as i64 {
                        v.extend_from_slice(&[0.0, 0.0, 1.0]);
                        continue;
                    }
                    let (x, y) = (x as usize, y as usize);
                    let food = state
                        .alive_food_at(x, y)
                        .map_or(0.0, |f| state.foods[f].level as f64 / food_norm);
                    let agent = state
                        .agent_at(x, y)
                        .map_or(0.0, |a| state.agents[a].level as f64 / agent_norm);
                    v.extend_from_slice(&[food, agent, 0.0]);
                }
            }
            v.push(me.level as f64 / agent_norm);
            v.push(me.x as f64 / (cfg.grid_w - 1) as f64);
            v.push(me.y as f64 / (cfg.grid_h - 1) as f64);
            v
        })
        .collect();
    JointObservation { agents }
}

/// Flat global state vector with entries in `[0, 1]`.
///
/// Per agent `(x/w, y/h, level/max_agent_level)`, per food
/// `(x/w, y/h, level/max_food_level, alive)`, then `timestep/limit`. Eaten
/// foods keep their last position.
pub fn encode_state(cfg: &LbfConfig, state: &LbfState) -> Vec<f64> {
    let w = cfg.grid_w as f64;
    let h = cfg.grid_h as f64;
    let mut v = Vec::with_capacity(cfg.state_dim());
    for a in &state.agents {
        v.extend_from_slice(&[
            a.x as f64 / w,
            a.y as f64 / h,
            a.level as f64 / cfg.max_agent_level as f64,
        ]);
    }
    for f in &state.foods {
        v.extend_from_slice(&[
            f.x as f64 / w,
            f.y as f64 / h,
            f.level as f64 / cfg.max_food_level() as f64,
            if f.alive { 1.0 } else { 0.0 },
        ]);
    }
    v.push(state.timestep as f64 / cfg.episode_limit as f64);
    v
}
