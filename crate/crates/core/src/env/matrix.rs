//! One-step two-player cooperative matrix games.

use serde::{Deserialize, Serialize};

use super::EnvError;

/// Square payoff table shared by both players; `payoff[a0][a1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixGame {
    pub payoff: Vec<Vec<f64>>,
}

impl MatrixGame {
    pub fn new(payoff: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        let g = Self { payoff };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let n = self.payoff.len();
        if n == 0 {
            return Err(EnvError::InvalidConfig("empty payoff table".into()));
        }
        for row in &self.payoff {
            if row.len() != n {
                return Err(EnvError::InvalidConfig(format!(
                    "payoff must be square, got a row of length {} in a {n}-row table",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(EnvError::InvalidConfig(format!("non-finite payoff {v}")));
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.payoff.len()
    }

    /// Exhaustive argmax; ties resolve to the lexicographically first pair.
    pub fn optimum(&self) -> ([usize; 2], f64) {
        let mut best = ([0, 0], f64::NEG_INFINITY);
        for (i, row) in self.payoff.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.1 {
                    best = ([i, j], v);
                }
            }
        }
        best
    }
}

pub fn matrix_game_payoff(game: &MatrixGame, joint_action: &[usize]) -> Result<f64, EnvError> {
    let n = game.n_actions();
    let &[a, b] = joint_action else {
        return Err(EnvError::WrongActionCount {
            expected: 2,
            actual: joint_action.len(),
        });
    };
    for action in [a, b] {
        if action >= n {
            return Err(EnvError::InvalidAction { action, n_actions: n });
        }
    }
    Ok(game.payoff[a][b])
}
