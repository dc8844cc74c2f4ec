//! Simulate a corpus, train on it and report held-out metrics.
//!
//! cargo run --release --example synthetic_run -- [epochs] [mode] [single]

use std::time::Instant;

use lehgr::dataset::AugmentationConfig;
use lehgr::features::FeatureMode;
use lehgr::metrics::metrics;
use lehgr::net::{predict_labels, train_with, NetConfig, NetMode, TraceSeqModel};
use lehgr::pipeline::{corpus_recordings, split_datasets, PipelineConfig};
use lehgr::synth::CorpusConfig;

fn main() -> lehgr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mode: FeatureMode = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(FeatureMode::Motion);
    let single = args.get(3).map_or(false, |s| s == "single");

    let mut cfg = PipelineConfig::default();
    cfg.train.epochs = epochs;
    let corpus = CorpusConfig::default();
    let t0 = Instant::now();
    let recordings = corpus_recordings(&corpus, &cfg, mode)?;
    let aug = if single {
        AugmentationConfig::single_length(cfg.augmentation.t_obj, cfg.augmentation.stride)
    } else {
        cfg.augmentation
    };
    let (train, test) = split_datasets(&recordings, &cfg, &aug)?;
    eprintln!(
        "{} train clips {:?}, {} test clips {:?} in {:.1}s",
        train.clips.len(),
        train.class_counts(),
        test.clips.len(),
        test.class_counts(),
        t0.elapsed().as_secs_f64()
    );

    let (vw, sw) = train.widths();
    let mut net = NetConfig::two_branch(vw, sw, train.labels.len());
    if sw == 0 {
        net.mode = NetMode::SingleBranch;
    }
    let mut model = TraceSeqModel::init(net, cfg.train.seed)?;
    let t1 = Instant::now();
    train_with(&mut model, &train.clips, Some(&test.clips), &cfg.train, |s| {
        eprintln!(
            "epoch {:>3} loss {:.4} train {:.4} test {:.4} ({:.0}s)",
            s.epoch,
            s.loss,
            s.train_accuracy,
            s.val_accuracy.unwrap_or(0.0),
            t1.elapsed().as_secs_f64()
        );
    })?;
    let preds = predict_labels(&model, &test.clips)?;
    let truths: Vec<usize> = test.clips.iter().map(|c| c.label).collect();
    print!("{}", metrics(&preds, &truths, test.labels.len())?.to_text(test.labels.names()));
    Ok(())
}
