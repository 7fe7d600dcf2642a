//! Train the broadcast predictor the way the server does: harvest labeled
//! Top-K change histories from a warm-up run, pretrain, then check how often
//! it agrees with the labels on histories it has not seen.

use apfl::broadcast::{pretrain, BroadcastMode, RnnPredictor};
use apfl::config::ExperimentConfig;
use apfl::sim::run_apfl_harvest;

fn main() -> apfl::Result<()> {
    let cfg = ExperimentConfig::default().with_seed(2).with_broadcast_mode(BroadcastMode::Oracle);
    let (_, pairs) = run_apfl_harvest(&cfg, Some(2400))?;
    let positive = pairs.iter().filter(|p| p.1).count();
    println!("harvested {} histories, {positive} labeled broadcast", pairs.len());

    let (train, held_out) = pairs.split_at(pairs.len() / 2);
    let mut predictor = RnnPredictor::new(cfg.predictor_config(), 1);
    let agreement = |p: &RnnPredictor, data: &[(Vec<f64>, bool)]| {
        data.iter().filter(|(seq, label)| (p.predict(seq) >= 0.5) == *label).count() as f64 / data.len() as f64
    };
    println!("untrained agreement on held-out: {:.3}", agreement(&predictor, held_out));
    pretrain(&mut predictor, train, cfg.apfl.pretrain_epochs, 32, 3)?;
    println!("pretrained agreement: train {:.3}, held-out {:.3}", agreement(&predictor, train), agreement(&predictor, held_out));
    println!("P(broadcast) on an all-zero history: {:.3}", predictor.predict(&vec![0.0; cfg.apfl.k]));
    Ok(())
}
