//! Metrics, synthetic fixtures and benchmarking.

pub mod bench;
pub mod metrics;
pub mod synth;

pub use bench::{bench, BenchReport, Summary};
pub use metrics::{auroc, pixel_auroc, LabeledScores, PixelAuroc};
pub use synth::{
    gen_defect_grid, gen_planted_kb, gen_score_mixture, ClusterPlan, DefectFixture, DefectPlan, PlantedKb,
    PlantedQuery, PlantedScores, Rect, RelevancePlan, SyntheticSpec,
};
