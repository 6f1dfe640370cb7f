pub mod embed;
pub mod evaluate;
pub mod fidj;
pub mod frechet;
pub mod jitter;
pub mod retrieval;

pub use fidj::{fidj_csv, fidj_with_inliers, inliers, mahalanobis, mahalanobis_fidj, FidjEntry, MethodPoint, OutlierRule};
pub use frechet::{frechet_distance, mean_and_covariance};
pub use jitter::{jitter, jitter_scale, position_range, JitterOrder};
pub use retrieval::{diversity, mm_dist, mmodality, r_precision, r_precision_curve};
pub use embed::{prompt_centroids, temporal_stats, Embedder, EmbedderKind, EmbedderSpec, LinearEmbedder, TemporalStats};
pub use evaluate::{evaluate_model, evaluate_motions, generate_requests, noise_motions, EvalConfig, MetricReport, MetricSummary, Reference};
