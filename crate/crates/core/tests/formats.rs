use std::collections::BTreeMap;

use delta_embed::ingest::{read_dump, write_dump, Continuation, Matrix};
use delta_embed::{ActivationDump, EmbeddingConfig, MeaningTrace, Method, ModelEmbedding, PromptRecord, Registry};

fn dump(model_id: &str, seed: f32) -> ActivationDump {
    let records = (1..=3)
        .map(|id| {
            let t = id + 1;
            let hidden = [1usize, 2]
                .into_iter()
                .map(|l| {
                    let data = (0..t * 4).map(|i| seed + (id * 100 + l * 10 + i) as f32 * 0.125).collect();
                    (l, Matrix::new(t, 4, data))
                })
                .collect::<BTreeMap<_, _>>();
            PromptRecord {
                prompt_id: id,
                num_tokens: t,
                hidden,
                logits: Some(Matrix::new(t, 6, vec![seed; t * 6])),
            }
        })
        .collect();
    ActivationDump {
        model_id: model_id.into(),
        base_model_id: "base".into(),
        probe_hash: "ab".repeat(32),
        num_layers: 2,
        hidden_dim: 4,
        vocab_size: 6,
        layer_indices: vec![1, 2],
        records,
        meaning: Some(MeaningTrace {
            continuations: (1..=3)
                .map(|p| Continuation {
                    prompt_id: p,
                    text: format!("c{p}"),
                    num_tokens: 2,
                })
                .collect(),
            mean_logprobs: vec![-0.1, -1.0 / 3.0, -2.5e-7],
        }),
    }
}

#[test]
fn actv_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dump("ft/one", 0.5);
    write_dump(&d, dir.path().join("x")).unwrap();
    assert_eq!(read_dump(dir.path().join("x")).unwrap(), d);
}

#[test]
fn actv_rejects_truncated_blob() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x");
    write_dump(&dump("ft", 0.0), &path).unwrap();
    let blob = std::fs::read_dir(&path)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "f32"))
        .unwrap();
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(read_dump(&path).is_err());
}

#[test]
fn registry_round_trips_and_survives_reload_edits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EmbeddingConfig {
        probe_hash: Some("ab".repeat(32)),
        ..Default::default()
    };
    let mut reg = Registry::new();
    for (i, id) in ["a/b c", "plain", "x%y"].into_iter().enumerate() {
        let v = vec![i as f32 + 0.1, -1.0 / 3.0, f32::MIN_POSITIVE];
        reg.add(ModelEmbedding::new(id, "base", Method::DeltaActivations, v, cfg.clone()), Some("lbl"))
            .unwrap();
    }
    reg.save(dir.path()).unwrap();
    let mut back = Registry::load(dir.path()).unwrap();
    assert_eq!(back.list(), reg.list());
    assert_eq!(back.labels(), reg.labels());

    back.remove("plain").unwrap();
    back.save(dir.path()).unwrap();
    let again = Registry::load(dir.path()).unwrap();
    assert_eq!(again.len(), 2);
    assert_eq!(again.get("x%y").unwrap(), reg.get("x%y").unwrap());
}

#[test]
fn embedding_json_round_trips() {
    let e = ModelEmbedding::new("m", "b", Method::DeltaMeaning, vec![0.1, 1e-30, -7.25], EmbeddingConfig::default());
    let back: ModelEmbedding = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
    assert_eq!(back, e);
}
