//! Trains the energy-transport arm, the k-means arm and a cross-entropy-only
//! baseline on the toy preset for a range of seeds and prints per-run rows
//! followed by per-arm means.
//!
//! cargo run --release --example seed_sweep -- [first_seed] [count]

use std::time::Instant;

use scood_ot::data::{generate_scood_toy, ToyScoodConfig};
use scood_ot::learner::{train_run, Assigner, TrainConfig};

const ARMS: [&str; 3] = ["et", "kmeans", "ce-only"];

fn arm_config(arm: &str, seed: u64) -> TrainConfig {
    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    match arm {
        "kmeans" => TrainConfig {
            assigner: Assigner::KMeans,
            ..base
        },
        "ce-only" => base.supervised_baseline(),
        _ => base,
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    acc: f64,
    correct: f64,
    all_correct: f64,
    all_total: f64,
    auroc: f64,
    runs: f64,
}

fn main() -> scood_ot::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let first = args.first().copied().unwrap_or(0);
    let count = args.get(1).copied().unwrap_or(5);
    let mut sums = [Sums::default(); 3];

    println!("seed  arm       acc     correct  promoted  all_epochs   auroc   fpr95   secs");
    for seed in first..first + count {
        let data = generate_scood_toy(&ToyScoodConfig::preset("toy", seed)?)?;
        for (arm, sum) in ARMS.iter().zip(sums.iter_mut()) {
            let start = Instant::now();
            let out = train_run(&arm_config(arm, seed), data.state.clone(), &data.test)?;
            let secs = start.elapsed().as_secs_f64();
            let last = out.log.last().expect("at least one epoch");
            let (acc, correct, total) = last
                .assignment
                .as_ref()
                .map(|a| (a.audit.accuracy, a.audit.correct, a.audit.total))
                .unwrap_or((f64::NAN, 0, 0));
            let (all_correct, all_total) = out
                .log
                .iter()
                .filter_map(|r| r.assignment.as_ref())
                .fold((0, 0), |(c, t), a| (c + a.audit.correct, t + a.audit.total));
            println!(
                "{seed:<5} {arm:<9} {acc:<7.4} {correct:<8} {total:<9} {:<12} {:<7.4} {:<7.4} {secs:.1}",
                format!("{all_correct}/{all_total}"),
                last.test.auroc,
                last.test.fpr_at_tpr95
            );
            sum.acc += acc;
            sum.correct += correct as f64;
            sum.all_correct += all_correct as f64;
            sum.all_total += all_total as f64;
            sum.auroc += last.test.auroc;
            sum.runs += 1.0;
        }
    }
    println!();
    println!("arm       mean_acc  mean_correct  mean_all_correct  all_epoch_acc  mean_auroc");
    for (arm, s) in ARMS.iter().zip(sums) {
        println!(
            "{arm:<9} {:<9.4} {:<13.2} {:<17.1} {:<14.4} {:.4}",
            s.acc / s.runs,
            s.correct / s.runs,
            s.all_correct / s.runs,
            if s.all_total > 0.0 { s.all_correct / s.all_total } else { 1.0 },
            s.auroc / s.runs
        );
    }
    Ok(())
}
