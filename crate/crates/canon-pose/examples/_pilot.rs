use canon_pose::datasets::*;
use canon_pose::evaluation::*;
use canon_pose::imaging::Angle;
use canon_pose::model::Model;
use canon_pose::training::*;
use std::path::PathBuf;

fn main() {
    let out = PathBuf::from("/tmp/pilot");
    std::fs::create_dir_all(&out).unwrap();

    // Desk-scale rotated digits: 8000/1000, D=32, 30 epochs, batch 128, seed 7.
    let t0 = std::time::Instant::now();
    let glyph_train = glyph_stack(8000, 28, 7);
    let glyph_test = glyph_stack(1000, 28, 8);
    let train_split = build_rotated_mnist(&glyph_train, SplitTag::Train, 7).unwrap();
    let test_split = build_rotated_mnist(&glyph_test, SplitTag::Test, 8).unwrap();
    println!("[mnist] data built in {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        epochs: 30, batch_size: 128, content_dim: 32, seed: 7,
        checkpoint_every: 0, out_dir: out.join("mnist"),
        ..Default::default()
    };
    let untrained = Model::init(
        canon_pose::model::NetworkSpec::with_defaults(28, 32).unwrap(), 7).unwrap();
    let untrained_report = evaluate(&untrained, &test_split).unwrap();
    println!("[mnist] untrained avg mse {:.6}", untrained_report.avg_mse_per_pixel);

    let mut trainer = Trainer::new(cfg.clone(), 28, SourceTag::RotatedMnist).unwrap();
    let mut log = LogWriter::create(&out.join("mnist-log.csv")).unwrap();
    let t0 = std::time::Instant::now();
    let ckpt = trainer.run(&train_split, &mut log, &cfg.out_dir).unwrap();
    println!("[mnist] trained in {:.1}s -> {}", t0.elapsed().as_secs_f64(), ckpt.display());
    let report = evaluate(&trainer.model, &test_split).unwrap();
    println!("[mnist] final avg mse {:.6} worst {:.6} angle mae {:.4} ratio {:.4}",
        report.avg_mse_per_pixel, report.worst_mse_per_pixel, report.angle_mae,
        report.avg_mse_per_pixel / untrained_report.avg_mse_per_pixel);

    // Desk-scale synthetic stack: 4000/1000, 40x40, noise 0.1, 100 epochs.
    let t0 = std::time::Instant::now();
    let spec = PhantomSpec::default_40();
    let synth_train = synth_projection_stack(&spec, 4000, SplitTag::Train, 7, 0).unwrap();
    let synth_test = synth_projection_stack(&spec, 1000, SplitTag::Test, 7, 4000).unwrap();
    println!("[synth] data built in {:.1}s", t0.elapsed().as_secs_f64());
    let echo = echo_baseline(&synth_test).unwrap();
    println!("[synth] echo baseline {:.6}", echo);

    let cfg = TrainConfig {
        epochs: 100, batch_size: 128, content_dim: 32, seed: 7,
        checkpoint_every: 0, out_dir: out.join("synth"),
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg.clone(), 40, SourceTag::Synth5hdb).unwrap();
    let mut log = LogWriter::create(&out.join("synth-log.csv")).unwrap();
    let t0 = std::time::Instant::now();
    let ckpt = trainer.run(&synth_train, &mut log, &cfg.out_dir).unwrap();
    println!("[synth] trained in {:.1}s -> {}", t0.elapsed().as_secs_f64(), ckpt.display());
    let report = evaluate(&trainer.model, &synth_test).unwrap();
    println!("[synth] final avg mse {:.6} worst {:.6} angle mae {:.4} angle mse {:.4}",
        report.avg_mse_per_pixel, report.worst_mse_per_pixel, report.angle_mae, report.angle_mse);
    println!("[synth] mse < echo: {}", report.avg_mse_per_pixel < echo);

    // Canonicalization: 20 held-out targets, 8 angles.
    let images: Vec<_> = synth_test.samples.iter().take(20).map(|s| s.target.clone()).collect();
    let angles: Vec<Angle> = (0..8).map(|k| Angle::new(k as f64 * std::f64::consts::PI / 4.0).unwrap()).collect();
    let canon = canonicalization(&trainer.model, &images, &angles).unwrap();
    println!("[canon] pairwise {:.6} recon-target {:.6} ratio {:.4}",
        canon.mean_pairwise_mse, canon.mean_recon_target_mse,
        canon.mean_pairwise_mse / canon.mean_recon_target_mse);
}
