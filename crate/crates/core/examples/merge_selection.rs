//! Choose models to merge: the nearest neighbours of a query, an anchor plus
//! random fill, or a maximally spread subset.

use delta_embed::pipeline::{self, PoolSpec};
use delta_embed::probe::default_probe_set;
use delta_embed::selection::{anchor_select, disperse_select, nearest};

fn main() -> delta_embed::Result<()> {
    let probe = default_probe_set();
    let pool = pipeline::build_pool(&PoolSpec::quick(0))?;
    let embeddings = pipeline::pool_activations(&pool, &probe)?;
    let (query, rest) = embeddings.split_first().expect("pool is not empty");
    let candidates: Vec<(&str, &[f32])> = rest.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();

    println!("query {}", query.model_id);
    for (id, s) in nearest(&query.vector, &candidates, 3)? {
        println!("  nearest {id:<12} {s:.4}");
    }
    println!("  anchor  {:?}", anchor_select(&query.vector, &candidates, 3, 1)?);
    let all: Vec<(&str, &[f32])> = embeddings.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();
    println!("  spread  {:?}", disperse_select(&all, 3, 1)?);
    Ok(())
}
