//! Verification and identification metrics.

mod identification;
mod io;
mod roc;

pub use identification::{identification, open_set_rates, IdentificationReport};
pub use io::{read_embeddings, read_pairs, write_embeddings, EmbeddingSet};
pub use roc::{auc, auc_x, mann_whitney_auc, roc, score_pairs, tar_at_far, PairProtocol, RocCurve};
