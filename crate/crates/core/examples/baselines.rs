//! Weight-space embeddings: the flattened parameter delta and the binary mask
//! of its most salient entries.

use delta_embed::baselines::{salient_indices, salient_mask_embedding, weight_delta, DEFAULT_SALIENT_FRACTION};
use delta_embed::toylm::{corpus, init_model, train, Domain, Split, ToyLmConfig, TrainSpec};

fn main() -> delta_embed::Result<()> {
    let base = init_model(&ToyLmConfig::new(16, 2, 2, 64, 3))?;
    let ft = train(&base, &TrainSpec::few_shot(corpus(Domain::Upper, Split::Train(1), 20, 3), 3))?.checkpoint;

    let delta = weight_delta(&ft, &base)?;
    let norm = delta.flat.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    println!("{} tensors, {} parameters, |delta| = {norm:.4}", delta.names.len(), delta.flat.len());

    let top = salient_indices(&delta.flat, DEFAULT_SALIENT_FRACTION)?;
    println!("top {} entries by magnitude, first few: {:?}", top.len(), &top[..top.len().min(5)]);

    let mask = salient_mask_embedding(&ft, &base, DEFAULT_SALIENT_FRACTION, "upper-ft", "base")?;
    let ones = mask.embedding.vector.iter().filter(|&&v| v == 1.0).count();
    println!("mask has {ones} ones out of {}, degenerate: {}", mask.embedding.dim(), mask.degenerate);

    let self_mask = salient_mask_embedding(&base, &base, DEFAULT_SALIENT_FRACTION, "base", "base")?;
    println!("a model against itself is degenerate: {}", self_mask.degenerate);
    Ok(())
}
