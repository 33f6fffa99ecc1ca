//! Toy model pools: a pretrained base, models finetuned from it on disjoint
//! domain splits, and their embeddings.
//!
//! This is the desk-scale stand-in for a pool of public finetunes. Everything
//! is seeded, so a pool is reproducible from its [`PoolSpec`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{self, AdditiveReport, Metric, PoolEntry, RetrievalMode};
use crate::baselines;
use crate::embed::{self, EmbeddingConfig, LayerSelector, Method, ModelEmbedding, TokenSelector};
use crate::error::Result;
use crate::ingest::Continuation;
use crate::probe::ProbeSet;
use crate::registry::Registry;
use crate::toylm::{
    corpus, dump_models, init_model, sample_probe_continuations, toy_corpus, train, Domain, DumpSpec,
    MeaningSource, Model, SamplingParams, Schedule, Split, ToyLmCheckpoint, ToyLmConfig, TrainSpec,
};

/// The three pool domains.
pub const POOL_DOMAINS: [Domain; 3] = [Domain::Arith, Domain::Brackets, Domain::Upper];

#[derive(Debug, Clone, Serialize)]
pub struct PoolSpec {
    #[serde(skip)]
    pub arch: ToyLmConfig,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    /// Examples per domain in the pretraining mixture.
    pub pretrain_size: usize,
    pub pretrain_domains: Vec<Domain>,
    pub domains: Vec<Domain>,
    pub splits: Vec<u8>,
    /// Examples per finetuning split.
    pub split_size: usize,
    pub finetune_steps: usize,
    /// Learning rate for split `k` is `split_lr[(k - 1) % len]`.
    pub split_lr: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
}

impl PoolSpec {
    /// Three domains x three splits of 400 examples, each finetuned for three
    /// epochs at lr 1e-4, batch 4. The architecture is the toy default with
    /// a context long enough for the bundled probe prompts.
    pub fn standard(seed: u64) -> Self {
        Self {
            arch: ToyLmConfig::new(32, 6, 4, 128, seed),
            pretrain_steps: 300,
            pretrain_lr: 3e-3,
            pretrain_size: 400,
            pretrain_domains: Domain::ALL.to_vec(),
            domains: POOL_DOMAINS.to_vec(),
            splits: vec![1, 2, 3],
            split_size: 400,
            finetune_steps: 300,
            split_lr: vec![1e-4],
            batch_size: 4,
            seed,
        }
    }

    /// A small, fast pool for examples and smoke tests: two narrow blocks,
    /// short schedules and a higher finetuning rate to compensate.
    pub fn quick(seed: u64) -> Self {
        Self {
            arch: ToyLmConfig::new(16, 2, 2, 128, seed),
            pretrain_steps: 150,
            pretrain_size: 100,
            split_size: 100,
            finetune_steps: 100,
            split_lr: vec![1e-3],
            ..Self::standard(seed)
        }
    }

    pub fn with_width(mut self, d_model: usize) -> Self {
        self.arch.d_model = d_model;
        self.arch.ffn_dim = 4 * d_model;
        self
    }

    pub fn lr_for_split(&self, split: u8) -> f64 {
        self.split_lr[(split as usize - 1) % self.split_lr.len()]
    }

    fn member_seed(&self, domain: Domain, split: u8) -> u64 {
        let d = Domain::ALL.iter().position(|&x| x == domain).unwrap() as u64;
        self.seed
            .wrapping_mul(0x2545_F491_4F6C_DD1D)
            .wrapping_add(1 + d * 16 + split as u64)
    }
}

#[derive(Debug, Clone)]
pub struct PoolMember {
    pub model_id: String,
    pub label: String,
    pub split: u8,
    pub checkpoint: ToyLmCheckpoint,
}

#[derive(Debug, Clone)]
pub struct ToyPool {
    pub spec: PoolSpec,
    pub base_id: String,
    pub base: ToyLmCheckpoint,
    pub members: Vec<PoolMember>,
}

/// Seeded round-robin mixture of the pretraining partitions.
pub fn pretrain_corpus(spec: &PoolSpec) -> Vec<Vec<u8>> {
    let parts: Vec<Vec<Vec<u8>>> = spec
        .pretrain_domains
        .iter()
        .map(|&d| corpus(d, Split::Pretrain, spec.pretrain_size, spec.seed))
        .collect();
    (0..spec.pretrain_size)
        .flat_map(|i| parts.iter().map(move |p| p[i].clone()))
        .collect()
}

pub fn pretrain_base(spec: &PoolSpec) -> Result<ToyLmCheckpoint> {
    let init = init_model(&spec.arch)?;
    let train_spec = TrainSpec {
        corpus: pretrain_corpus(spec),
        lr: spec.pretrain_lr,
        batch_size: spec.batch_size,
        schedule: Schedule::Steps(spec.pretrain_steps),
        seed: spec.seed ^ 0xBA5E,
    };
    Ok(train(&init, &train_spec)?.checkpoint)
}

/// Finetunes `base` on `corpus` for the pool's step budget.
pub fn finetune(base: &ToyLmCheckpoint, corpus: Vec<Vec<u8>>, lr: f64, spec: &PoolSpec, seed: u64) -> Result<ToyLmCheckpoint> {
    let train_spec = TrainSpec {
        corpus,
        lr,
        batch_size: spec.batch_size,
        schedule: Schedule::Steps(spec.finetune_steps),
        seed,
    };
    Ok(train(base, &train_spec)?.checkpoint)
}

pub fn member_id(domain: Domain, split: u8) -> String {
    format!("{domain}-s{split}")
}

/// Pretrains a base and finetunes one model per (domain, split).
pub fn build_pool(spec: &PoolSpec) -> Result<ToyPool> {
    let base = pretrain_base(spec)?;
    build_pool_on(spec, base)
}

/// Like [`build_pool`] with an existing base.
pub fn build_pool_on(spec: &PoolSpec, base: ToyLmCheckpoint) -> Result<ToyPool> {
    let jobs: Vec<(Domain, u8)> = spec
        .domains
        .iter()
        .flat_map(|&d| spec.splits.iter().map(move |&s| (d, s)))
        .collect();
    let members = jobs
        .par_iter()
        .map(|&(domain, split)| {
            let data = toy_corpus(domain, split, spec.split_size, spec.seed)?;
            let checkpoint = finetune(&base, data, spec.lr_for_split(split), spec, spec.member_seed(domain, split))?;
            log::info!("trained {}", member_id(domain, split));
            Ok(PoolMember {
                model_id: member_id(domain, split),
                label: domain.to_string(),
                split,
                checkpoint,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyPool {
        spec: spec.clone(),
        base_id: format!("base-d{}", spec.arch.d_model),
        base,
        members,
    })
}

/// Model trained on the union of `a`'s and `b`'s split-`split` data.
pub fn mixed_model(pool: &ToyPool, a: Domain, b: Domain, split: u8) -> Result<ToyLmCheckpoint> {
    let spec = &pool.spec;
    let mut data = toy_corpus(a, split, spec.split_size, spec.seed)?;
    data.extend(toy_corpus(b, split, spec.split_size, spec.seed)?);
    let seed = spec.member_seed(a, split) ^ spec.member_seed(b, split).rotate_left(17);
    finetune(&pool.base, data, spec.lr_for_split(split), spec, seed)
}

/// Few-shot task model: 20 held-out examples, lr 3.3e-3, batch 1, 5 epochs.
pub fn task_model(pool: &ToyPool, domain: Domain, seed: u64) -> Result<ToyLmCheckpoint> {
    let examples = corpus(domain, Split::HeldOut, 20, pool.spec.seed ^ seed);
    Ok(train(&pool.base, &TrainSpec::few_shot(examples, seed))?.checkpoint)
}

pub fn activation_config(probe: &ProbeSet, token: TokenSelector, layer: LayerSelector) -> EmbeddingConfig {
    EmbeddingConfig {
        probe_hash: Some(probe.hash().to_string()),
        token_mode: Some(token),
        layer_mode: Some(layer),
        n_meaning: None,
    }
}

/// Delta Activations of `model` against `base` through a full dump round.
pub fn activation_embedding(
    model: &ToyLmCheckpoint,
    base: &ToyLmCheckpoint,
    probe: &ProbeSet,
    model_id: &str,
    base_id: &str,
    token: TokenSelector,
    layer: LayerSelector,
) -> Result<ModelEmbedding> {
    let n_layers = base.config.n_layers;
    let block = embed::resolve_layer(layer, n_layers)?;
    let spec = DumpSpec {
        model_id: model_id.to_string(),
        base_id: base_id.to_string(),
        layers: vec![block],
        with_logits: false,
        meaning: None,
    };
    let pair = dump_models(&Model::new(model), &Model::new(base), probe, &spec)?;
    for w in &pair.warnings {
        log::warn!("{w}");
    }
    Ok(embed::delta_activations(&pair.model, &pair.base, token, layer)?)
}

/// Delta Activations (last token, last layer) for every pool member.
pub fn pool_activations(pool: &ToyPool, probe: &ProbeSet) -> Result<Vec<ModelEmbedding>> {
    pool.members
        .par_iter()
        .map(|m| {
            activation_embedding(
                &m.checkpoint,
                &pool.base,
                probe,
                &m.model_id,
                &pool.base_id,
                TokenSelector::Last,
                LayerSelector::Last,
            )
        })
        .collect()
}

pub fn pool_flattened_weights(pool: &ToyPool) -> Result<Vec<ModelEmbedding>> {
    pool.members
        .iter()
        .map(|m| Ok(baselines::flattened_weight_embedding(&m.checkpoint, &pool.base, &m.model_id, &pool.base_id)?))
        .collect()
}

pub fn pool_salient_masks(pool: &ToyPool, fraction: f64) -> Result<Vec<ModelEmbedding>> {
    pool.members
        .iter()
        .map(|m| {
            Ok(baselines::salient_mask_embedding(&m.checkpoint, &pool.base, fraction, &m.model_id, &pool.base_id)?.embedding)
        })
        .collect()
}

/// Continuations sampled once from `reference` for every probe prompt, to be
/// scored by models of any architecture.
pub fn reference_continuations(reference: &ToyLmCheckpoint, probe: &ProbeSet, params: &SamplingParams) -> Result<Vec<Continuation>> {
    Ok(sample_probe_continuations(&Model::new(reference), probe, params)?)
}

/// Delta Meaning of `model` against `base` on fixed continuations.
pub fn meaning_embedding(
    model: &ToyLmCheckpoint,
    base: &ToyLmCheckpoint,
    probe: &ProbeSet,
    continuations: &[Continuation],
    model_id: &str,
    base_id: &str,
) -> Result<ModelEmbedding> {
    let spec = DumpSpec {
        model_id: model_id.to_string(),
        base_id: base_id.to_string(),
        layers: vec![],
        with_logits: false,
        meaning: Some(MeaningSource::Fixed(continuations.to_vec())),
    };
    let pair = dump_models(&Model::new(model), &Model::new(base), probe, &spec)?;
    Ok(embed::delta_meaning(&pair.model, &pair.base)?)
}

pub fn pool_meaning(pool: &ToyPool, probe: &ProbeSet, continuations: &[Continuation]) -> Result<Vec<ModelEmbedding>> {
    pool.members
        .par_iter()
        .map(|m| meaning_embedding(&m.checkpoint, &pool.base, probe, continuations, &m.model_id, &pool.base_id))
        .collect()
}

pub fn pool_labels(pool: &ToyPool) -> BTreeMap<String, String> {
    pool.members.iter().map(|m| (m.model_id.clone(), m.label.clone())).collect()
}

/// Mean silhouette of embeddings under the pool's domain labels.
pub fn silhouette(embeddings: &[ModelEmbedding], labels: &BTreeMap<String, String>, metric: Metric) -> Result<f64> {
    let points: Vec<(&str, &[f32])> = embeddings.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();
    Ok(analysis::silhouette_score(&points, labels, metric)?.mean)
}

/// A registry holding `embeddings` with the pool's labels.
pub fn pool_registry(pool: &ToyPool, embeddings: Vec<ModelEmbedding>) -> Result<Registry> {
    let labels = pool_labels(pool);
    let mut reg = Registry::new();
    for e in embeddings {
        let label = labels.get(&e.model_id).cloned();
        reg.add(e, label.as_deref())?;
    }
    Ok(reg)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdditiveResult {
    pub pair: (String, String),
    pub report: AdditiveReport,
}

/// For each domain pair, compares a union-trained model against the two
/// single-domain models of the same split.
pub fn additive_results(pool: &ToyPool, probe: &ProbeSet, split: u8) -> Result<Vec<AdditiveResult>> {
    let domains = &pool.spec.domains;
    let mut pairs = Vec::new();
    for i in 0..domains.len() {
        for j in i + 1..domains.len() {
            pairs.push((domains[i], domains[j]));
        }
    }
    let member = |d: Domain| pool.members.iter().find(|m| m.model_id == member_id(d, split)).expect("pool member");
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let mixed = mixed_model(pool, a, b, split)?;
            let emb = |c: &ToyLmCheckpoint, id: &str| {
                activation_embedding(c, &pool.base, probe, id, &pool.base_id, TokenSelector::Last, LayerSelector::Last)
            };
            let vm = emb(&mixed, "mixed")?;
            let va = emb(&member(a).checkpoint, "a")?;
            let vb = emb(&member(b).checkpoint, "b")?;
            Ok(AdditiveResult {
                pair: (a.to_string(), b.to_string()),
                report: analysis::additive_check(&vm.vector, &va.vector, &vb.vector)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskRetrieval {
    pub domain: String,
    pub retrieved: String,
    pub retrieved_label: String,
    pub similarity: f64,
}

/// Few-shot task embeddings for each pool domain, each matched to its nearest
/// pool model.
pub fn task_retrieval(pool: &ToyPool, probe: &ProbeSet, pool_embeddings: &[ModelEmbedding], seed: u64) -> Result<Vec<TaskRetrieval>> {
    let labels = pool_labels(pool);
    let entries: Vec<PoolEntry> = pool_embeddings
        .iter()
        .map(|e| PoolEntry {
            model_id: &e.model_id,
            vector: &e.vector,
            label: labels[&e.model_id].as_str(),
        })
        .collect();
    pool.spec
        .domains
        .par_iter()
        .map(|&d| {
            let task = task_model(pool, d, seed)?;
            let v = activation_embedding(&task, &pool.base, probe, "task", &pool.base_id, TokenSelector::Last, LayerSelector::Last)?;
            let r = analysis::retrieve(&v.vector, &entries, RetrievalMode::NearestModel)?;
            Ok(TaskRetrieval {
                domain: d.to_string(),
                retrieved: r.matched,
                retrieved_label: r.label,
                similarity: r.similarity,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub activation_silhouette: f64,
    pub flattened_weights_silhouette: f64,
    pub salient_mask_silhouette: f64,
    pub additive: Vec<AdditiveResult>,
    pub tasks: Vec<TaskRetrieval>,
    pub retrieval_rate: f64,
}

/// Builds the standard pool and evaluates clustering, additivity and
/// few-shot retrieval on it.
pub fn run_demo(spec: &PoolSpec, probe: &ProbeSet) -> Result<DemoReport> {
    let pool = build_pool(spec)?;
    let labels = pool_labels(&pool);
    let act = pool_activations(&pool, probe)?;
    let weights = pool_flattened_weights(&pool)?;
    let masks = pool_salient_masks(&pool, baselines::DEFAULT_SALIENT_FRACTION)?;
    let additive = additive_results(&pool, probe, 1)?;
    let tasks = task_retrieval(&pool, probe, &act, spec.seed)?;
    let hits = tasks.iter().filter(|t| t.domain == t.retrieved_label).count();
    Ok(DemoReport {
        seed: spec.seed,
        activation_silhouette: silhouette(&act, &labels, Metric::Cosine)?,
        flattened_weights_silhouette: silhouette(&weights, &labels, Metric::Cosine)?,
        salient_mask_silhouette: silhouette(&masks, &labels, Metric::Cosine)?,
        retrieval_rate: hits as f64 / tasks.len() as f64,
        additive,
        tasks,
    })
}

/// Embeds every member of several pools (possibly of different widths) by
/// Delta Meaning on one shared continuation set.
pub fn cross_pool_meaning(pools: &[&ToyPool], probe: &ProbeSet, continuations: &[Continuation]) -> Result<Vec<ModelEmbedding>> {
    let mut out = Vec::new();
    for pool in pools {
        for mut e in pool_meaning(pool, probe, continuations)? {
            e.model_id = format!("d{}/{}", pool.spec.arch.d_model, e.model_id);
            out.push(e);
        }
    }
    Ok(out)
}

/// Method-tagged embeddings of the whole pool, for quick comparisons.
pub fn pool_embeddings(pool: &ToyPool, probe: &ProbeSet, method: Method) -> Result<Vec<ModelEmbedding>> {
    match method {
        Method::DeltaActivations => pool_activations(pool, probe),
        Method::FlattenedWeights => pool_flattened_weights(pool),
        Method::SalientMask => pool_salient_masks(pool, baselines::DEFAULT_SALIENT_FRACTION),
        Method::DeltaLogits => pool
            .members
            .par_iter()
            .map(|m| {
                let spec = DumpSpec {
                    model_id: m.model_id.clone(),
                    base_id: pool.base_id.clone(),
                    layers: vec![],
                    with_logits: true,
                    meaning: None,
                };
                let pair = dump_models(&Model::new(&m.checkpoint), &Model::new(&pool.base), probe, &spec)?;
                Ok(embed::delta_logits(&pair.model, &pair.base, TokenSelector::Last)?)
            })
            .collect(),
        Method::DeltaMeaning => {
            let conts = reference_continuations(&pool.base, probe, &SamplingParams::default())?;
            pool_meaning(pool, probe, &conts)
        }
    }
}
