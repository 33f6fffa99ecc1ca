//! Dump a toy model and its base to the ACTV format, read the dumps back and
//! embed them. Any backend that writes ACTV can be embedded the same way.

use delta_embed::embed::{delta_activations, delta_logits, delta_meaning};
use delta_embed::ingest::{read_dump, write_dump};
use delta_embed::probe::default_probe_set;
use delta_embed::toylm::{corpus, dump_activations, init_model, train, Domain, DumpSpec, MeaningSource, SamplingParams, Split, ToyLmConfig, TrainSpec};
use delta_embed::{LayerSelector, TokenSelector};

fn main() -> delta_embed::Result<()> {
    let base = init_model(&ToyLmConfig::new(16, 2, 2, 128, 7))?;
    let data = corpus(Domain::Arith, Split::Train(1), 40, 7);
    let ft = train(&base, &TrainSpec::few_shot(data, 7))?.checkpoint;

    let probe = default_probe_set();
    let spec = DumpSpec {
        with_logits: true,
        meaning: Some(MeaningSource::SampleBase(SamplingParams { n: 4, ..Default::default() })),
        ..DumpSpec::all_layers("arith-ft", "toy-base", base.config.n_layers)
    };
    let pair = dump_activations(&ft, &base, &probe, &spec)?;

    let dir = tempfile::tempdir()?;
    write_dump(&pair.model, dir.path().join("ft"))?;
    write_dump(&pair.base, dir.path().join("base"))?;
    let ft_dump = read_dump(dir.path().join("ft"))?;
    let base_dump = read_dump(dir.path().join("base"))?;
    println!("round trip is exact: {}", ft_dump == pair.model && base_dump == pair.base);

    for e in [
        delta_activations(&ft_dump, &base_dump, TokenSelector::Last, LayerSelector::Last)?,
        delta_logits(&ft_dump, &base_dump, TokenSelector::Last)?,
        delta_meaning(&ft_dump, &base_dump)?,
    ] {
        let head: Vec<String> = e.vector.iter().take(4).map(|v| format!("{v:+.4}")).collect();
        println!("{:<18} dim {:>3}  [{} ...]", e.method.as_str(), e.dim(), head.join(", "));
    }
    Ok(())
}
