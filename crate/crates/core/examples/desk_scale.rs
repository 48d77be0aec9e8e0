//! Train on a 32×32 synthetic cube of four endmembers and print the
//! evaluation summary.
//!
//! `cargo run --release -p ldvae-core --example desk_scale [epochs] [snr_db] [omega]`

use ldvae::data::{add_noise, generate_cube, generate_pure_cube, synthetic_library};
use ldvae::{evaluate, train, TrainConfig};

fn main() -> ldvae::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(200, |a| a.parse().expect("epochs"));
    let snr: f64 = args
        .next()
        .map_or(f64::INFINITY, |a| a.parse().expect("snr"));
    let omega: f64 = args.next().map_or(1.0, |a| a.parse().expect("omega"));

    let library = synthetic_library(4, 50, 7)?;
    let clean = generate_cube(&library, 32, 32, &[1.0; 4], 7)?;
    let cube = add_noise(&clean, snr, 8)?;
    let config = TrainConfig {
        epochs,
        omega,
        seed: 7,
        ..TrainConfig::default()
    };
    let (model, report) = train(&cube, &config)?;
    let first = report.epochs.first().map_or(f64::NAN, |l| l.total);
    let last = report.epochs.last().map_or(f64::NAN, |l| l.total);
    println!(
        "trained {epochs} epochs in {:.1}s, loss {first:.4} -> {last:.4}",
        report.wall_clock_seconds
    );

    let eval = evaluate(&model, &clean, Some(&library))?;
    let abund = eval.abundances.as_ref().expect("ground truth");
    println!(
        "endmember SAD   {:.4}",
        eval.endmembers.as_ref().expect("library").mean_sad
    );
    println!(
        "abundance RMSE  {:.4} (matched order {:.4})",
        abund.overall_rmse,
        abund.matched_rmse.unwrap_or(f64::NAN)
    );
    println!("recon MSE mean  {:.6}", eval.reconstruction_mse.mean);
    println!("recon SAD mean  {:.4}", eval.reconstruction_sad.mean);

    let pure = generate_pure_cube(&library, 16, 16, 9)?;
    let pure_eval = evaluate(&model, &pure, None)?;
    println!(
        "pure accuracy   {:.4}",
        pure_eval
            .abundances
            .expect("ground truth")
            .dominant_accuracy
    );
    Ok(())
}
