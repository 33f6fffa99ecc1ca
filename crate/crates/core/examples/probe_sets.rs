//! List the bundled probe sets, load one from a file and show that the hash
//! depends only on the prompt texts and their order.

use delta_embed::probe::{self, ProbeSet};

fn main() -> delta_embed::Result<()> {
    for name in probe::BUNDLED_SETS {
        let set = probe::bundled(name)?;
        println!("{name:<16} {:>3} prompts  {}", set.len(), set.hash());
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("custom.txt");
    std::fs::write(&path, "# two prompts\nSummarize the text.\nTranslate the sentence.\n")?;
    let from_file = probe::load_probe_set(&path)?;
    let built = ProbeSet::new("inline", ["Summarize the text.", "Translate the sentence."])?;
    println!("file and inline sets share a hash: {}", from_file.hash() == built.hash());

    let swapped = ProbeSet::new("swapped", ["Translate the sentence.", "Summarize the text."])?;
    println!("reordering changes it: {}", swapped.hash() != built.hash());
    Ok(())
}
