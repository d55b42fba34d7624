//! Full toy run: pretrain, distil, perplexity, probes and the filtered refit.

use std::time::Instant;

use morphovoc::pipeline::{run_toy, PipelineSpec};
use morphovoc::probe::Split;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let spec = PipelineSpec::default();
    let run = run_toy(&spec)?;
    println!("pipeline took {:.1}s", run.seconds);
    println!("pretrain loss {:?} -> {:?}", run.pretrain_report.losses.first(), run.pretrain_report.final_loss());
    for (i, r) in run.distilled.reports.iter().enumerate() {
        println!("stage {} loss {:?} -> {:?}", i + 1, r.losses.first(), r.final_loss());
    }
    let (pb, pc) = (run.baseline_perplexity()?, run.compositional_perplexity()?);
    println!("perplexity baseline {pb:.3} compositional {pc:.3} ratio {:.3}", pc / pb);
    let t = Instant::now();
    let probe = run.probe(&spec)?;
    println!("probe took {:.1}s", t.elapsed().as_secs_f64());
    print!("{}", probe.to_table());
    if let Some(r) = probe.overall_row(Split::OutOfVocab) {
        println!("oov detok {:.3} control {:.3}", r.detok_accuracy, r.control_accuracy);
    }
    let before = run.stage2_loss(&spec)?;
    let (_, _, after) = run.refit_without(&spec, &probe.failed)?;
    println!("failed {} stage-2 held-out loss {before:.5} -> {after:.5}", probe.failed.len());
    Ok(())
}
