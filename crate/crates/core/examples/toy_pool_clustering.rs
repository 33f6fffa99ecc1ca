//! Build a toy pool of finetuned models, embed each one several ways and
//! compare how well the embeddings cluster by training domain.
//!
//! `cargo run --release --example toy_pool_clustering [standard]`

use delta_embed::analysis::Metric;
use delta_embed::pipeline::{self, PoolSpec};
use delta_embed::probe::default_probe_set;
use delta_embed::Method;

fn main() -> delta_embed::Result<()> {
    let spec = match std::env::args().nth(1).as_deref() {
        Some("standard") => PoolSpec::standard(0),
        _ => PoolSpec::quick(0),
    };
    let probe = default_probe_set();
    let pool = pipeline::build_pool(&spec)?;
    let labels = pipeline::pool_labels(&pool);
    println!("{} models finetuned from {}", pool.members.len(), pool.base_id);

    for method in [Method::DeltaActivations, Method::DeltaLogits, Method::FlattenedWeights, Method::SalientMask] {
        let embeddings = pipeline::pool_embeddings(&pool, &probe, method)?;
        let s = pipeline::silhouette(&embeddings, &labels, Metric::Cosine)?;
        println!("{:<20} dim {:>6}  silhouette {s:.4}", method.as_str(), embeddings[0].dim());
    }
    Ok(())
}
