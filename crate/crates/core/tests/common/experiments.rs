//! Directional toy-scale experiments.

use mixce::data::{encode_pairs, generate_synonym_corpus, Probe, SynonymTask, Vocab};
use mixce::decoding::{translate, DecodeMode};
use mixce::evaluation::{pairwise_bleu, synonym_mass_probe};
use mixce::harness::{over_seeds, train_model, AdamConfig, TrainData, TrainOptions, TrainSettings};
use mixce::losses::{LossSpec, LossVariant, Smoothing};
use mixce::sampling::StepOptions;
use mixce::schedules::AlphaPolicy;
use mixce::transformer::ModelConfig;
use mixce::Result;

pub fn small_model(vocab_src: usize, vocab_tgt: usize) -> ModelConfig {
    ModelConfig {
        vocab_src,
        vocab_tgt,
        d_model: 32,
        n_heads: 4,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ff: 64,
        dropout: 0.0,
        max_len: 32,
        share_embeddings: false,
    }
}

/// Shared loop settings; callers adjust the loss and schedule.
pub fn base_settings(model: ModelConfig, variant: LossVariant, gamma: f64, seed: u64) -> TrainSettings {
    TrainSettings {
        model,
        loss: LossSpec { variant, smoothing: Smoothing::new(gamma), alpha: AlphaPolicy::Linear { m: 0.5 }, rng_seed: seed + 100 },
        step: StepOptions::for_variant(variant),
        d: 0.8,
        adam: AdamConfig::default(),
        lr: 0.002,
        patience: 4,
        factor: 0.5,
        max_tokens: 1024,
        pretrain_epochs: 1,
        total_iter: 280,
        seed,
        data_seed: seed + 7,
    }
}

/// The one-to-many task: 16 source words, three near-equally weighted
/// synonyms each (48 target words), 20k clean pairs, 500 probes.
pub struct SynonymSetup {
    pub data: TrainData,
    pub probes: Vec<Probe>,
    pub src_vocab: Vocab,
    pub sample_sources: Vec<Vec<usize>>,
}

pub fn synonym_setup() -> Result<SynonymSetup> {
    let mut task = SynonymTask::uniform_sets(16, &[0.34, 0.33, 0.33], 4, 8, 5);
    task.n_probes = 500;
    let corpus = generate_synonym_corpus(&task, 20_000)?;
    let sv = Vocab::from_words(&task.src_words())?;
    let tv = Vocab::from_words(&task.tgt_words())?;
    let train = encode_pairs(&corpus.pairs, &sv, &tv);
    let sample_sources = task.sample_pairs(200, 99, false)?.iter().map(|p| sv.encode(&p.src)).collect();
    Ok(SynonymSetup {
        data: TrainData { train, valid_src: Vec::new(), valid_refs: Vec::new(), tgt_vocab: tv },
        probes: corpus.probes,
        src_vocab: sv,
        sample_sources,
    })
}

/// The four models of the sharpness comparison, in this order.
pub const SYNONYM_ARMS: [(&str, LossVariant, f64); 4] = [
    ("CE", LossVariant::Ce, 0.0),
    ("CE+LS", LossVariant::Ce, 0.1),
    ("mixed", LossVariant::MixedTf, 0.0),
    ("mixed+LS", LossVariant::MixedTf, 0.1),
];

#[derive(Debug, Clone)]
pub struct SynonymResult {
    pub seed: u64,
    /// Synonym mass per arm of [`SYNONYM_ARMS`].
    pub mass: [f64; 4],
    /// Pairwise-BLEU of 5 samples per source, per arm.
    pub pb: [f64; 4],
}

pub fn synonym_runs(setup: &SynonymSetup, seeds: &[u64]) -> Result<Vec<SynonymResult>> {
    let (sv, tv) = (setup.src_vocab.len(), setup.data.tgt_vocab.len());
    over_seeds(seeds, |seed| {
        let mut mass = [0.0; 4];
        let mut pb = [0.0; 4];
        for (k, &(_, variant, gamma)) in SYNONYM_ARMS.iter().enumerate() {
            let settings = base_settings(small_model(sv, tv), variant, gamma, seed);
            let model = train_model(&settings, &setup.data, &TrainOptions::default())?.model;
            mass[k] = synonym_mass_probe(&model, &setup.probes, &setup.src_vocab, &setup.data.tgt_vocab)?;
            let samples = translate(&model, &setup.sample_sources, DecodeMode::Samples { k: 5, seed }, 20)?;
            let sets: Vec<Vec<Vec<usize>>> = samples.iter().map(|h| h.iter().map(|x| x.content().to_vec()).collect()).collect();
            pb[k] = pairwise_bleu(&sets)?;
        }
        Ok(SynonymResult { seed, mass, pb })
    })
}

/// Noisy cipher: 40 source words each with a single translation, lengths
/// 6 to 12, half of the training target words replaced at random.
/// Validation references are clean.
pub struct CipherSetup {
    pub data: TrainData,
    pub vocab_src: usize,
}

pub fn noisy_cipher() -> Result<CipherSetup> {
    let mut task = SynonymTask::uniform_sets(40, &[1.0], 6, 12, 5);
    task.noise = 0.5;
    let pairs = task.sample_pairs(20_000, 5, true)?;
    let valid = task.sample_pairs(300, 77, false)?;
    let sv = Vocab::from_words(&task.src_words())?;
    let tv = Vocab::from_words(&task.tgt_words())?;
    let data = TrainData {
        train: encode_pairs(&pairs, &sv, &tv),
        valid_src: valid.iter().map(|p| sv.encode(&p.src)).collect(),
        valid_refs: valid.into_iter().map(|p| p.tgt).collect(),
        tgt_vocab: tv,
    };
    Ok(CipherSetup { data, vocab_src: sv.len() })
}

/// Scheduled-sampling settings on the noisy cipher: three CE epochs, then
/// 200 iterations of the variant with a second pass.
pub fn ss_settings(setup: &CipherSetup, variant: LossVariant, seed: u64) -> TrainSettings {
    let model = small_model(setup.vocab_src, setup.data.tgt_vocab.len());
    let mut s = base_settings(model, variant, 0.1, seed);
    s.step = StepOptions { scheduled_sampling: true, word_oracle: None };
    s.lr = 0.001;
    s.pretrain_epochs = 3;
    s.total_iter = 200;
    s
}

/// Best validation BLEU (the Single checkpoint) for CE with scheduled
/// sampling and for MIXED_SS, per seed.
pub fn ss_runs(setup: &CipherSetup, seeds: &[u64]) -> Result<Vec<(u64, f64, f64)>> {
    over_seeds(seeds, |seed| {
        let single = |variant| -> Result<f64> {
            let out = train_model(&ss_settings(setup, variant, seed), &setup.data, &TrainOptions::default())?;
            Ok(out.bleu_history().into_iter().fold(f64::NEG_INFINITY, f64::max))
        };
        Ok((seed, single(LossVariant::Ce)?, single(LossVariant::MixedSs)?))
    })
}
