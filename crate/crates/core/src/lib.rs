//! Stackelberg gradient dynamics and the ST-MADDPG trainer.

pub mod diffcore;
pub mod quadratic_games;
pub mod stackelberg;
pub mod envs;
pub mod seeding;
pub mod fencing;
pub mod eval;
pub mod marl;
