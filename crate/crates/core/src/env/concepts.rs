//! Ground-truth cooperation concepts for foraging states.

use super::lbf::LbfState;

/// Number of labeled concepts per foraging state.
pub const LBF_CONCEPTS: usize = 4;

pub const LBF_CONCEPT_NAMES: [&str; LBF_CONCEPTS] = [
    "can_eat_alone",
    "needs_cooperation",
    "agents_converging",
    "all_eaten",
];

/// Returns `[c1, c2, c3, c4]` as 0.0/1.0:
///
/// - `c1`: some agent is 4-adjacent to an alive food whose level it meets alone.
/// - `c2`: some alive food is heavier than the strongest agent.
/// - `c3`: at least two agents lie within Chebyshev distance 2 of one alive food.
/// - `c4`: every food has been eaten.
pub fn lbf_concept_labels(state: &LbfState) -> [f64; LBF_CONCEPTS] {
    let alive = || state.foods.iter().filter(|f| f.alive);
    let strongest = state.max_agent_level();

    let c1 = state.agents.iter().any(|a| {
        alive().any(|f| a.x.abs_diff(f.x) + a.y.abs_diff(f.y) == 1 && a.level >= f.level)
    });
    let c2 = alive().any(|f| f.level > strongest);
    let c3 = alive().any(|f| {
        state
            .agents
            .iter()
            .filter(|a| a.x.abs_diff(f.x).max(a.y.abs_diff(f.y)) <= 2)
            .count()
            >= 2
    });
    let c4 = state.all_eaten();
    [c1, c2, c3, c4].map(|b| if b { 1.0 } else { 0.0 })
}
