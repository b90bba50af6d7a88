//! Simulates a planted dataset, then runs the network and both baselines
//! under leave-one-cage-out. Settings come from environment variables
//! (DURATION, SEED, CAGE_TRAIT, CAGE_REST, NORM, LR, EPOCHS, BATCH,
//! MOMENTUM, JOBS) so runs can be compared quickly.
//!
//! `cargo run --release --example planted`

use std::env;
use std::time::Instant;

use stopmap::baselines::{run_baselines, BaselineConfig};
use stopmap::dataset::{simulate, CageLayout, SimConfig};
use stopmap::eval::{featurize_recordings, run_loco_stacks};
use stopmap::featurize::{FeaturizeConfig, Normalization};
use stopmap::nn::TrainConfig;

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> stopmap::Result<()> {
    let duration: f64 = var("DURATION", 3600.0);
    let sim = SimConfig {
        duration,
        rng_seed: var("SEED", 0),
        cage_trait: var("CAGE_TRAIT", 0.3),
        cage_rest: var("CAGE_REST", 0.6),
        ..SimConfig::default()
    };
    let feat = FeaturizeConfig { intervals_t: 6, interval_len: duration / 6.0, ..FeaturizeConfig::default() };
    let normalization = match env::var("NORM").as_deref() {
        Ok("none") => Normalization::None,
        Ok("total") => Normalization::Total,
        _ => Normalization::Max,
    };
    let train = TrainConfig {
        learning_rate: var("LR", 0.01),
        epochs: var("EPOCHS", 60),
        batch_size: var("BATCH", 8),
        momentum: var("MOMENTUM", 0.9),
        rng_seed: var("SEED", 0),
        normalization,
    };

    let start = Instant::now();
    let recordings = simulate(&sim, &CageLayout::default())?;
    let stacks = featurize_recordings(&recordings, &feat)?;
    println!("simulated and featurized in {:.1}s", start.elapsed().as_secs_f64());
    let run = run_loco_stacks(&stacks, &feat, &train, var("JOBS", 1))?;
    println!("cnn {:?} in {:.1}s", run.report.overall_accuracy, run.report.wall_time_secs);
    println!("{:?}", run.report.aggregate.counts);
    let base = run_baselines(&stacks, &feat, normalization, &BaselineConfig::default(), 1)?;
    println!("knn {:?} svm {:?}", base.knn.overall_accuracy, base.svm.overall_accuracy);
    println!("knn {:?}\nsvm {:?}", base.knn.aggregate.counts, base.svm.aggregate.counts);
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
