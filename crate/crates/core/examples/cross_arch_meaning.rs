//! Delta Meaning only scores text, so models with different hidden sizes
//! land in one space as long as they score the same continuations.

use delta_embed::analysis::Metric;
use delta_embed::pipeline::{self, PoolSpec};
use delta_embed::probe::default_probe_set;
use delta_embed::toylm::SamplingParams;

fn main() -> delta_embed::Result<()> {
    let probe = default_probe_set();
    let narrow = pipeline::build_pool(&PoolSpec::quick(0))?;
    let wide = pipeline::build_pool(&PoolSpec::quick(0).with_width(24))?;

    let params = SamplingParams { n: 8, seed: 5, ..Default::default() };
    let continuations = pipeline::reference_continuations(&wide.base, &probe, &params)?;
    let embeddings = pipeline::cross_pool_meaning(&[&narrow, &wide], &probe, &continuations)?;

    let mut labels = pipeline::pool_labels(&narrow);
    labels.extend(pipeline::pool_labels(&wide));
    let labels = embeddings
        .iter()
        .map(|e| {
            let bare = e.model_id.split_once('/').map_or(e.model_id.as_str(), |(_, id)| id);
            (e.model_id.clone(), labels[bare].clone())
        })
        .collect();
    let s = pipeline::silhouette(&embeddings, &labels, Metric::Cosine)?;
    println!("{} models, two widths, meaning dim {}", embeddings.len(), embeddings[0].dim());
    println!("joint silhouette by domain: {s:.4}");

    // Hidden-state deltas of different widths are not comparable.
    let a = pipeline::pool_activations(&narrow, &probe)?;
    let b = pipeline::pool_activations(&wide, &probe)?;
    println!("activation dims differ: {} vs {}", a[0].dim(), b[0].dim());
    Ok(())
}
