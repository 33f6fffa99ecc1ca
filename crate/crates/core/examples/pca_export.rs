//! Project pool embeddings onto their top principal components and write a
//! CSV for plotting.

use delta_embed::analysis::{pca_project, write_projection_csv};
use delta_embed::pipeline::{self, PoolSpec};
use delta_embed::probe::default_probe_set;

fn main() -> delta_embed::Result<()> {
    let pool = pipeline::build_pool(&PoolSpec::quick(0))?;
    let embeddings = pipeline::pool_activations(&pool, &default_probe_set())?;
    let points: Vec<(&str, &[f32])> = embeddings.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();
    let coords = pca_project(&points, 2)?;
    let mut stdout = std::io::stdout().lock();
    write_projection_csv(&mut stdout, &coords, &pipeline::pool_labels(&pool))?;
    Ok(())
}
