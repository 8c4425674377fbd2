//! Reports, confusion tables and t-SNE embeddings.

mod confusion;
mod emit;
pub mod tsne;

pub use confusion::render_confusion;
pub use emit::{emit_report, sig6, EmbeddingPoint, Format, Report, SweepReport};
pub use tsne::{tsne_embed, Embedding, TsneConfig};
