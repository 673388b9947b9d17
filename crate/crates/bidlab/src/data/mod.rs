//! Trajectory datasets: featurization, behavior-policy generation,
//! percentile selection, JSONL persistence, and CSV interchange.
//!
//! A [`TrainingSet`] is an iteration-stamped collection of trajectories.
//! Sets grow only by [`merge`], which appends selected trajectories and
//! records the parent digest so lineage stays checkable end to end.

mod features;
mod generate;
mod import;
mod select;
mod store;
mod types;

pub use features::{featurize, trajectory_from_episode, STATE_DIM};
pub use generate::{
    behavior_palette, generate_behavior_dataset, generate_with_palette, BehaviorKind,
    NoisyPolicy, PacerPolicy, PaletteEntry,
};
pub use import::{export_csv, import_external, ImportOutcome, SchemaMap};
pub use select::{percentile, select_top, BucketStat, Selection};
pub use store::{load, save};
pub use types::{
    env_digest, merge, verify_nesting, Provenance, Step, Trajectory, TrainingSet,
};
