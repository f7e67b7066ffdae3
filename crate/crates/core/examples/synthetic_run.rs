//! Pre-train a small generator on the toy world with uninformative control
//! tokens, then fine-tune it with the rule oracle and print dev metrics.
//!
//! cargo run --release --example synthetic_run

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relpara::generator::{Awareness, DecodeConfig, Generator, GeneratorConfig, Vocab};
use relpara::rl::{dev_metrics, finetune, pretrain, FinetuneBackends, FinetuneConfig, FinetuneState, PretrainConfig, Selection};
use relpara::scorers::TokenOverlapSimilarity;
use relpara::world::{World, WorldConfig};
use relpara::{adversary::BagOfEmbeddings, Relation};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let world = World::new(&WorldConfig::default())?;
    let oracle = world.oracle();
    let similarity = TokenOverlapSimilarity::new();
    let control = [Relation::Eq, Relation::Fwd, Relation::Rev];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pre_train = world.examples(env("PRE_N", 2000), &control, env("PRE_NOISE", 1.0), &mut rng)?;
    let rl_train = world.examples(env("RL_N", 600), &control, 0.0, &mut rng)?;
    let dev = world.examples(env("DEV_N", 150), &control, 0.0, &mut rng)?;

    let vocab = Vocab::build(pre_train.iter().flat_map(|e| [e.x.clone(), e.y.clone()]));
    let cache = std::path::PathBuf::from(env("PRE_DIR", String::from("/tmp/pre_model")));
    let cached = cache.join("generator.json").exists();
    let generator = if cached { Generator::load(&cache)? } else { Generator::new(vocab, GeneratorConfig::default())? };
    let decode = DecodeConfig { min_len: 3, max_len: 10, ..Default::default() };
    let pc = PretrainConfig {
        epochs: env("PRE_EPOCHS", 16),
        batch_size: 32,
        learning_rate: 1e-3,
        decode,
        ..Default::default()
    };
    let t = Instant::now();
    if !cached {
        let report = pretrain(&generator, &pre_train, &dev, Awareness::Aware, &pc, Some(&oracle))?;
        println!("pretrain {:.0}s best epoch {:?}", t.elapsed().as_secs_f64(), report.best_epoch);
        generator.save(&cache)?;
    }
    let before = dev_metrics(&generator, &dev, Awareness::Aware, &decode, Some(&oracle))?;
    println!("before: {before:?}");
    if env("DUMP", false) {
        let outs = relpara::rl::decode_all(&generator, &dev, Awareness::Aware, &decode)?;
        for (ex, y) in dev.iter().zip(&outs).take(24) {
            let v = relpara::oracle::oracle_verdict(&ex.x, y, &oracle).map(|v| v.relation.as_str()).unwrap_or("ERR");
            println!("{:?} | {} | {} | {}", ex.relation.unwrap(), ex.x.join(" "), y.join(" "), v);
        }
    }

    let mut adversary = BagOfEmbeddings::new(Default::default())?;
    let fc = FinetuneConfig {
        epochs: env("RL_EPOCHS", 12),
        batch_size: 16,
        learning_rate: env("RL_LR", 5e-4),
        decode,
        examples_per_epoch: Some(env("RL_PER_EPOCH", 300)),
        adversary_enabled: env("ADV", false),
        reward: relpara::RewardConfig {
            alpha: env("ALPHA", 0.4),
            beta: env("BETA", 0.4),
            delta: env("DELTA", 0.2),
            n_rollouts: env("NROLL", 2),
            sim_low: env("SIM_LOW", 0.3),
            sim_high: env("SIM_HIGH", 0.98),
            ..Default::default()
        },
        seed: env("SEED", 0),
        selection: if env("SELECT_HM", false) { Selection::HarmonicMean } else { Selection::Consistency },
        ..Default::default()
    };
    let t = Instant::now();
    let outcome = finetune(
        &generator,
        &mut adversary,
        &rl_train,
        &dev,
        &fc,
        FinetuneBackends { oracle: &oracle, similarity: &similarity },
        None,
        FinetuneState::default(),
    )?;
    for row in &outcome.epochs {
        println!("{}", serde_json::to_string(row)?);
    }
    let after = dev_metrics(&generator, &dev, Awareness::Aware, &decode, Some(&oracle))?;
    println!("finetune {:.0}s after: {after:?}", t.elapsed().as_secs_f64());
    Ok(())
}
