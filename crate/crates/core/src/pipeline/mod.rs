//! Scene-level plumbing: block splitting, sliding-window inference,
//! metrics, synthetic scenes, the training loop and the ablation harness.

mod ablation;
mod blocks;
mod metrics;
mod predict;
pub mod synthetic;
mod training;

pub use ablation::{format_table, run_ablation, standard_variants, to_csv, AblationRow, AblationVariant};
pub use blocks::{split_blocks, window_members, Block, BlockSpec, SplitMode};
pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use predict::{merge_block_predictions, sliding_window_predict};
pub use synthetic::{generate_scene, RecipeFile, SceneRecipe};
pub use training::{derive_seed, epoch_blocks, evaluate_scenes, train_on_scenes, TrainSettings};
