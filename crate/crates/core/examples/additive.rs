//! A model finetuned on the union of two domains should embed close to the
//! sum of the two single-domain embeddings.

use delta_embed::pipeline::{self, PoolSpec};
use delta_embed::probe::default_probe_set;

fn main() -> delta_embed::Result<()> {
    let pool = pipeline::build_pool(&PoolSpec::quick(0))?;
    for r in pipeline::additive_results(&pool, &default_probe_set(), 1)? {
        let (a, b) = &r.pair;
        println!(
            "{a}+{b}: cos to {a} {:.4}, to {b} {:.4}, to sum {:.4}  sum closest: {}",
            r.report.sim_d1,
            r.report.sim_d2,
            r.report.sim_sum,
            r.report.sum_is_closest()
        );
    }
    Ok(())
}
