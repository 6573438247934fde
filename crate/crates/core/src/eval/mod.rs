//! Transfer scores, adaptation curves, saliency maps and representation probes.

mod probe;
mod saliency;
mod transfer;

pub use probe::{
    logistic_probe, paired_renders, probe_analysis, write_embeddings_csv, EmbeddingRow, PairedDomain, ProbeReport,
    MIN_PAIRED_STATES,
};
pub use saliency::{gaussian_blur, saliency_map, SaliencyConfig, SaliencyMap, MASK_SIGMA};
pub use transfer::{
    adaptation_curve, episode_seeds, evaluate, evaluate_on, read_adaptation_csv, transfer_report,
    write_adaptation_csv, AdaptationPoint, EvalResult, TransferReport, TransferRow,
};
