//! Store embeddings with labels, persist them and query the cohort again
//! after reloading.

use delta_embed::analysis::Metric;
use delta_embed::pipeline::{self, PoolSpec};
use delta_embed::probe::default_probe_set;
use delta_embed::Registry;

fn main() -> delta_embed::Result<()> {
    let pool = pipeline::build_pool(&PoolSpec::quick(0))?;
    let embeddings = pipeline::pool_activations(&pool, &default_probe_set())?;
    let mut reg = pipeline::pool_registry(&pool, embeddings)?;

    let dir = tempfile::tempdir()?;
    reg.save(dir.path())?;
    let mut reg = Registry::load(dir.path())?;
    println!("reloaded {} entries", reg.len());

    for (method, config) in reg.cohorts() {
        let members = reg.cohort(method, &config);
        let points: Vec<(&str, &[f32])> = members.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();
        let r = delta_embed::analysis::silhouette_score(&points, reg.labels(), Metric::Cosine)?;
        println!("cohort {method} ({} models): silhouette {:.4}", members.len(), r.mean);
    }

    let dupe = reg.get("arith-s1")?.clone();
    match reg.add(dupe, Some("arith")) {
        Err(e) => println!("re-adding an id is refused: {e}"),
        Ok(()) => unreachable!("duplicates are rejected"),
    }
    Ok(())
}
