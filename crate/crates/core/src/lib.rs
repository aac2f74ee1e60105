//! Concept-bottleneck value decomposition for cooperative multi-agent
//! Q-learning.
//!
//! Per-agent recurrent utilities are combined by a mixing network whose
//! credit assignment is routed through a layer of interpretable cooperation
//! concepts. Each concept carries a pair of state embeddings (concept
//! present / absent), a predicted activation probability, and a credit
//! weight. Concept probabilities can be overridden by an expert at test
//! time, or randomly during training, and the joint value responds.
//!
//! Module map:
//! - [`autodiff`]: tape-based reverse-mode differentiation.
//! - [`nets`]: parameter sets, dense layers, gated recurrent cell.
//! - [`env`]: level-based foraging, matrix games, concept labels.
//! - [`agents`]: recurrent utility network and ε-greedy selection.
//! - [`mixer`]: the concept mixer and a VDN baseline.
//! - [`training`]: replay, TD learning, optimizer, the training loop.
//! - [`runio`]: config files, checkpoints, traces, metrics, sweeps.

pub mod agents;
pub mod autodiff;
pub mod env;
pub mod mixer;
pub mod nets;
pub mod runio;
pub mod training;
