use bflab_core::channel::{ChannelConfig, Dataset};
use bflab_core::trainer::*;
use bflab_core::solvers::SolveOptions;

fn main() {
    let ds = Dataset::generate(ChannelConfig::case(1, 1004), 36).unwrap();
    let (ds, _) = generate_labels(&ds, &SolveOptions::default());
    let labels = ds.labels.as_ref().unwrap();
    let max = labels.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mean: f64 = labels.iter().flatten().map(|v| v.abs()).sum::<f64>() / (labels.len() * 24) as f64;
    println!("label scale: max {max:.2}, mean {mean:.4}");
    for lr in [1e-2, 5e-2] {
        let cfg = TrainConfig { batch_size: 32, supervised_epochs: 500, early_stop_patience: 500, lr, seed: 5, ..TrainConfig::default() };
        let (_, report) = train_supervised(&ds, &cfg).unwrap();
        let tl = &report.train_loss;
        println!("lr {lr}: loss e1 {:.4} e100 {:.4} e250 {:.4} e500 {:.6}", tl[0], tl[99], tl[249], tl[499]);
    }
}
