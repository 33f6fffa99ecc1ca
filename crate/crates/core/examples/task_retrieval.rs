//! Embed a task by few-shot finetuning the base on 20 held-out examples, then
//! look up the closest model in the pool.

use delta_embed::analysis::{retrieval_rate, PoolEntry, RetrievalMode};
use delta_embed::pipeline::{self, PoolSpec};
use delta_embed::probe::default_probe_set;

fn main() -> delta_embed::Result<()> {
    let probe = default_probe_set();
    let pool = pipeline::build_pool(&PoolSpec::quick(0))?;
    let embeddings = pipeline::pool_activations(&pool, &probe)?;
    let hits = pipeline::task_retrieval(&pool, &probe, &embeddings, 11)?;
    for t in &hits {
        println!("task {:<9} -> {:<12} ({}, cos {:.4})", t.domain.as_str(), t.retrieved, t.retrieved_label, t.similarity);
    }

    // Centroid mode compares against per-label means instead.
    let labels = pipeline::pool_labels(&pool);
    let entries: Vec<PoolEntry> = embeddings
        .iter()
        .map(|e| PoolEntry { model_id: &e.model_id, vector: &e.vector, label: labels[&e.model_id].as_str() })
        .collect();
    let tasks: Vec<(&[f32], &str)> = embeddings
        .iter()
        .map(|e| (e.vector.as_slice(), labels[&e.model_id].as_str()))
        .collect();
    let rate = retrieval_rate(&tasks, &entries, RetrievalMode::NearestCentroid)?;
    println!("pool models retrieve their own label by centroid: {rate:.4}");
    Ok(())
}
