use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::formats::{to_json, write_json};
use crate::stages::{self, Failure, StageResult};

#[derive(Debug, Parser)]
#[command(name = "humanslam", version, about = "Human-prior metric SLAM, body placement, motion denoising and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving this command's outputs.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct Staged {
    /// Scenario directory.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scenario with ground truth.
    Synth(Common),
    /// Recover metric depth from body meshes and raw depth.
    Calibrate(Staged),
    /// Bundle-adjust camera poses with the calibrated depth prior.
    Slam(Staged),
    /// Lift the scene and move the bodies into the world frame.
    Place(Staged),
    /// Refine world-frame body tracks against the scene.
    Denoise(Staged),
    /// Score the run against the scenario's ground truth.
    Eval(Staged),
    /// Run every stage; synthesizes a scenario when no input is given.
    Pipeline {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(command: &Command) -> (Option<PathBuf>, StageResult) {
    let (common, run): (&Common, Box<dyn Fn(&Path, &PipelineConfig) -> StageResult>) = match command {
        Command::Synth(c) => (c, Box::new(|out, cfg| stages::synth(out, cfg))),
        Command::Calibrate(s) => (&s.common, Box::new(move |out, cfg| stages::calibrate_stage(&s.input, out, cfg))),
        Command::Slam(s) => (&s.common, Box::new(move |out, cfg| stages::slam_stage(&s.input, out, cfg))),
        Command::Place(s) => (&s.common, Box::new(move |out, cfg| stages::place_stage(&s.input, out, cfg))),
        Command::Denoise(s) => (&s.common, Box::new(move |out, cfg| stages::denoise_stage(&s.input, out, cfg))),
        Command::Eval(s) => (&s.common, Box::new(move |out, cfg| stages::eval_stage(&s.input, out, cfg))),
        Command::Pipeline { input, common } => (common, Box::new(move |out, cfg| stages::pipeline(input.as_deref(), out, cfg))),
    };
    let out = common.out_dir.clone();
    let result = load_config(common).and_then(|cfg| {
        if !matches!(command, Command::Synth(_)) {
            write_json(&out.join("config.json"), &cfg)?;
        }
        run(&out, &cfg)
    });
    (Some(out), result)
}

/// Runs the command line, printing the JSON summary to `stdout` and errors
/// to `stderr`; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (out, result) = execute(&cli.command);
    match result {
        Ok(summary) => {
            let _ = stdout.write_all(to_json(&summary).as_bytes());
            0
        }
        Err(f) => {
            if let (Some(out), Failure::Numerical { .. }) = (&out, &f) {
                if let Err(e) = stages::write_diagnostics(out, &f) {
                    let _ = writeln!(stderr, "error: could not write diagnostics: {}", e);
                }
            }
            let _ = writeln!(stderr, "error: {}", f);
            f.exit_code()
        }
    }
}
