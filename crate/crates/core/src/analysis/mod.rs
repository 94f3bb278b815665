pub mod bins;
pub mod decontam;
pub mod influence;
pub mod memorization;
pub mod novelty;
pub mod stats;

pub use bins::{bin_by_mass, BinSpec, BinnedPerformance};
pub use decontam::{decontaminate, ContaminationReport, ExampleContamination, OffendingNGram, Side};
pub use influence::{
    influence_average, influence_pairwise, GradKind, GradientDumps, GradientSource, InMemoryGradients,
    InfluenceAverage, InfluenceInputs, InfluenceRecord, RetrievalScheme,
};
pub use memorization::{
    assemble_observations, distributional_memorization, run_memorization, Assembly, LmKind,
    MemorizationInputs, MemorizationResult, PairedObservation,
};
pub use novelty::{novelty_count, ExampleNovelty, Generation, NoveltyConfig, NoveltyReport};
pub use stats::{kendall_tau_distance, spearman_rho, spearman_rho_with, CorrelationResult, PValueMethod, StatKind, TieCounts};
