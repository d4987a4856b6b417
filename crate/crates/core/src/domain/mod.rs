//! Shared domain types, seeded random streams, datasets and rollouts.

mod dataset;
mod rng;
mod rollout;
mod types;

pub(crate) use dataset::create_new;
pub use dataset::{read_policy_jsonl, write_policy_jsonl, Dataset, DatasetMeta, Record};
pub use rng::{tag, Rng, SeedTree};
pub use rollout::{
    collect_demonstrations, collect_rollouts, label_trajectories, rollout, rollout_policy,
    Collection, RolloutPolicy,
};
pub(crate) use types::SYMMETRY_TOL;
pub use types::{
    Control, ControlSpace, FeatureMap, NoiseParam, Policy, PolicyParams, State, Trajectory,
};
