mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rfm_core::explainability::Image2TextBackend;
use rfm_core::pipeline::{self, CaptionerSpec, Run};

#[derive(Parser)]
#[command(
    name = "rfm",
    version,
    about = "Generate and evaluate rare failure modes of an object detector"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic seed image and a demo config into a directory.
    Init { dir: PathBuf },
    /// Segment the seed, generate guided candidates and classify failures.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Similarity metrics, outlier filtering and the fooling rate.
    Verify { run: PathBuf },
    /// Grad-CAM overlays and image-to-text captions.
    Caption {
        run: PathBuf,
        /// Captioner id from `backends.captioners` in the config.
        #[arg(long, default_value = "fixture")]
        backend: String,
    },
    /// Write a blank evidence-labeling sheet for the captioned images.
    LabelTemplate {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score captions against human evidence labels.
    EvaluateCaptions {
        run: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Animate a run image with the configured video backend.
    VideoGen {
        run: PathBuf,
        #[arg(long, default_value = "seed")]
        image: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the detector on every frame of a clip.
    VideoEval {
        run: PathBuf,
        #[arg(long)]
        clip: PathBuf,
    },
    /// Write report.md for a run.
    Report { run: PathBuf },
}

fn captioner(run: &Run, id: &str) -> anyhow::Result<Box<dyn Image2TextBackend>> {
    let spec = run
        .config
        .backends
        .captioners
        .get(id)
        .ok_or_else(|| rfm_core::Error::ConfigInvalid(format!("no captioner `{id}` in backends.captioners")))?;
    Ok(match spec {
        CaptionerSpec::Fixture(f) => Box::new(f.clone()),
        CaptionerSpec::Remote(r) => Box::new(remote::RemoteCaptioner::new(r.clone())?),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Init { dir } => {
            pipeline::write_demo(&dir)?;
            println!(
                "wrote {} and {}",
                dir.join("seed.png").display(),
                dir.join("config.toml").display()
            );
        }
        Command::Generate { config, out } => {
            let o = pipeline::cmd_generate(&config, &out)?;
            println!(
                "{}: {} candidates, {} ok, {} backend errors",
                o.run_id, o.candidates, o.ok, o.backend_errors
            );
        }
        Command::Verify { run } => {
            let o = pipeline::cmd_verify(&mut Run::open(&run)?)?;
            println!(
                "fooling rate {:.2}% ({} of {} retained; {} flagged)",
                o.fooling_rate * 100.0,
                o.failing,
                o.retained,
                o.flagged
            );
        }
        Command::Caption { run, backend } => {
            let mut r = Run::open(&run)?;
            let b = captioner(&r, &backend)?;
            let o = pipeline::cmd_caption(&mut r, b.as_ref())?;
            println!("{} captions, {} failed", o.captioned, o.failed.len());
            for (id, e) in &o.failed {
                eprintln!("  {id}: {e}");
            }
        }
        Command::LabelTemplate { run, out } => {
            let n = pipeline::cmd_label_template(&Run::open(&run)?, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
        Command::EvaluateCaptions { run, labels } => {
            let o = pipeline::cmd_evaluate_captions(&mut Run::open(&run)?, &labels)?;
            print!("{}\n{}", o.scores.to_text(), o.regions.to_text());
        }
        Command::VideoGen { run, image, out } => {
            let n = pipeline::cmd_video_gen(&Run::open(&run)?, &image, &out)?;
            println!("wrote {n} frames to {}", out.display());
        }
        Command::VideoEval { run, clip } => {
            let o = pipeline::cmd_video_eval(&mut Run::open(&run)?, &clip)?;
            println!(
                "{}: {} frames, failing fraction {:.4}",
                o.clip, o.frames, o.evaluation.failing_fraction
            );
            if let Some(why) = &o.evaluation.aborted {
                eprintln!("evaluation stopped early: {why}");
            }
        }
        Command::Report { run } => {
            let mut r = Run::open(&run)?;
            pipeline::cmd_report(&mut r).context("writing report")?;
            println!("wrote {}", r.path("report.md").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<rfm_core::Error>())
                .map(pipeline::exit_code)
                .unwrap_or(1);
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
    }
}
