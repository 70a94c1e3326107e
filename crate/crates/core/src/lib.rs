//! fgcount: fine-grained counting ground truth from crowd-sourced dots.
//!
//! The pipeline stages are:
//!
//! 1. **Ingest** ([`ingest`]): parse and validate annotation/image tables, temporal split.
//! 2. **Cluster** ([`cluster`]): cannot-link agglomerative clustering of each
//!    image's dots into consensus objects, labelled by majority vote.
//! 3. **Maps** ([`mapgen`]): density stacks (fixed kernel or cluster spread),
//!    soft segmentation, background channel and unknown-region masks.
//! 4. **Metrics** ([`metrics`]): masked class losses, total-count loss, soft
//!    cross-entropy, MAE / masked MAE / CMMAE.
//!
//! [`sim`] generates synthetic scenes and annotators with known ground truth,
//! [`fgct`] and [`maps`] handle the on-disk tensor format, and [`pipeline`]
//! runs whole stages over files the way the `fgcount` binary does.

pub mod attributes;
pub mod cluster;
pub mod error;
pub mod fgct;
pub mod grid;
pub mod ingest;
pub mod mapgen;
pub mod maps;
pub mod metrics;
pub mod pipeline;
pub mod sim;

pub use attributes::{Attribute, Label, Responses};
pub use cluster::{
    cluster_image_annotations, majority_vote_labels, medoid, AggregatedObject, ClusterParams, Linkage, Point,
};
pub use error::{Error, Result};
pub use grid::{downsample_preserving_count, Grid, Mask};
pub use ingest::{temporal_split, validate_dataset, Dataset, DatasetSplit, DotAnnotation, ImageRecord};
pub use mapgen::{
    background_channel, cluster_spread_density, fixed_kernel_density, render_density, soft_segmentation,
    unknown_loss_mask, DensityMethod, DensityRenderer, DensityStack, Dims, KernelSpec, SegmentationStack,
};
pub use metrics::{
    cmmae, count_mae, evaluate, fuse_density_segmentation, loss_class_mse, loss_soft_xent, loss_total_count,
    masked_mae, EvalReport, GroundTruth, PredictionStack,
};
pub use sim::{generate_scene, oracle_evaluate, simulate_annotations, simulate_scene, SimConfig, SimScene};
