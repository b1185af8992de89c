//! Embedding-space diagnostics: silhouettes, hierarchy verdicts,
//! nearest-centroid accuracy, t-SNE and scatter plots.

pub mod plot;
pub mod report;
pub mod silhouette;
pub mod tsne;

pub use plot::{emit_scatter, render_scatter};
pub use report::{
    eval_accuracy, hierarchy_report, hierarchy_report_with_margin, write_accuracy_csv, write_hierarchy_csv,
    AccuracyReport, EmbeddingSet, HierarchyReport, LevelCentroids,
};
pub use silhouette::{silhouette, silhouette_subset, Distances};
pub use tsne::{joint_probabilities, kl_divergence, tsne, TsneConfig, TsneResult};
