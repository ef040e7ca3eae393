use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use terrace_core::clustering::ClusterMethod;
use terrace_core::config::{ClusteringConfig, PipelineConfig, WindowChoice};
use terrace_core::evaluation::{dice_csv, evaluate, ForegroundPolicy};
use terrace_core::image::{read_raster, write_raster, Accumulator, Raster};
use terrace_core::phantom::generate;
use terrace_core::pipeline::{self, Stage};
use terrace_core::terrace::{AutoConfig, THRESHOLD_CSV_HEADER};
use terrace_core::window::WindowSpec;
use terrace_core::{Error, StageError};

#[derive(Parser)]
#[command(name = "terrace", version, about = "Terrace compression pipeline for multispectral transmission images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set clustering.k=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write all artifacts.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        method: Option<ClusterMethod>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        window: Option<WindowChoice>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Write the phantom's truth mask and every frame as PGM files.
    GeneratePhantom {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Sum frames into one raster.
    Accumulate {
        /// Frame files, or directories whose files are read in name order.
        #[arg(long, value_name = "PATH")]
        input: Vec<PathBuf>,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
    /// Median-filter a raster.
    Filter {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Median window side; defaults to the config value.
        #[arg(long)]
        median: Option<usize>,
    },
    /// Select thresholds automatically and terrace-compress a raster.
    Compress {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        #[arg(long)]
        wavelength: u32,
        /// Defaults to the channel's configured value.
        #[arg(long)]
        min_body_area: Option<u64>,
    },
    /// Apply a window transform.
    Window {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Take the bounds of this configured window for `--wavelength`.
        #[arg(long)]
        window: Option<WindowChoice>,
        #[arg(long)]
        wavelength: Option<u32>,
        #[arg(long)]
        low: Option<u32>,
        #[arg(long)]
        high: Option<u32>,
        #[arg(long, default_value_t = 255)]
        out_max: u32,
    },
    /// Cluster stacked channels into a label image.
    Cluster {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One raster per channel, in wavelength order.
        #[arg(long, value_name = "PATH", required = true)]
        input: Vec<PathBuf>,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long)]
        method: Option<ClusterMethod>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a label image against a body template.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Label image.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Body-id raster, or a grayscale image with `--binarize-template`.
        #[arg(long, value_name = "PATH")]
        template: PathBuf,
        #[arg(long)]
        binarize_template: bool,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Column name in the report.
        #[arg(long, default_value = "labels")]
        name: String,
        /// Use this label as every body's foreground instead of the best match.
        #[arg(long)]
        fixed_label: Option<usize>,
    },
    /// Write a raster as "x y gray" lines.
    ExportSurface {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
}

fn input_err(stage: Stage, msg: impl Into<String>) -> Error {
    Error::stage(stage, None, StageError::Input(msg.into()))
}

fn io_err(stage: Stage, path: &Path, source: std::io::Error) -> Error {
    Error::stage(stage, None, StageError::Io { path: path.to_path_buf(), source })
}

fn in_stage<T, E: Into<StageError>>(stage: Stage, r: Result<T, E>) -> Result<T, Error> {
    r.map_err(|e| Error::stage(stage, None, e))
}

impl ConfigArgs {
    fn overrides(&self, extra: Vec<String>) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        o.extend(extra);
        o
    }

    fn load(&self, extra: Vec<String>) -> Result<PipelineConfig, Error> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| input_err(Stage::Config, "--config is required for this command"))?;
        Ok(PipelineConfig::load(path, &self.overrides(extra))?)
    }

    fn load_optional(&self) -> Result<Option<PipelineConfig>, Error> {
        match &self.config {
            Some(_) => self.load(Vec::new()).map(Some),
            None => Ok(None),
        }
    }
}

fn read(stage: Stage, path: &Path) -> Result<Raster, Error> {
    in_stage(stage, read_raster(path))
}

fn write(stage: Stage, raster: &Raster, path: &Path) -> Result<(), Error> {
    in_stage(stage, write_raster(raster, path))
}

fn write_text(stage: Stage, path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| io_err(stage, path, e))
}

fn frame_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| io_err(Stage::Accumulate, p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(input_err(Stage::Accumulate, "no frames given"));
    }
    Ok(files)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            cfg,
            method,
            k,
            window,
            out,
        } => {
            let mut extra = Vec::new();
            if let Some(m) = method {
                extra.push(format!("clustering.method=\"{}\"", m.name()));
            }
            if let Some(k) = k {
                extra.push(format!("clustering.k={k}"));
            }
            if let Some(w) = window {
                let name = match w {
                    WindowChoice::Window1 => "window1",
                    WindowChoice::Window2 => "window2",
                    WindowChoice::None => "none",
                };
                extra.push(format!("pipeline.window=\"{name}\""));
            }
            let mut config = cfg.load(extra)?;
            if let Some(out) = out {
                config.output_dir = out;
            }
            let summary = pipeline::run_pipeline(&config)?;
            if !summary.selections.is_empty() {
                println!("{THRESHOLD_CSV_HEADER}");
                for (w, s) in &summary.selections {
                    println!("{}", s.csv_row(*w));
                }
            }
            println!("clusters: {}", summary.cluster_count);
            if let Some(r) = &summary.report {
                print!("{}", in_stage(Stage::Evaluate, dice_csv(std::slice::from_ref(r)))?);
            }
            println!("outputs: {}", summary.output_dir.display());
        }
        Command::GeneratePhantom { cfg, out } => {
            let config = cfg.load(Vec::new())?;
            let spec = config
                .phantom
                .as_ref()
                .ok_or_else(|| input_err(Stage::Phantom, "config has no [phantom] section"))?;
            let phantom = in_stage(Stage::Phantom, generate(spec, config.seed))?;
            fs::create_dir_all(&out).map_err(|e| io_err(Stage::Phantom, &out, e))?;
            write(Stage::Phantom, &phantom.truth().to_id_raster(), &out.join(pipeline::TRUTH_FILE))?;
            let digits = spec.frames.to_string().len();
            for (i, &w) in spec.wavelengths.iter().enumerate() {
                let dir = out.join(format!("frames_{w}"));
                fs::create_dir_all(&dir).map_err(|e| io_err(Stage::Phantom, &dir, e))?;
                for (f, frame) in phantom.frames(i).enumerate() {
                    write(Stage::Phantom, &frame, &dir.join(format!("{f:0digits$}.pgm")))?;
                }
            }
        }
        Command::Accumulate { input, output } => {
            let files = frame_files(&input)?;
            let first = read(Stage::Accumulate, &files[0])?;
            let mut acc = Accumulator::new(&first);
            for f in &files[1..] {
                in_stage(Stage::Accumulate, acc.add(&read(Stage::Accumulate, f)?))?;
            }
            write(Stage::Accumulate, &acc.finish(), &output)?;
        }
        Command::Filter {
            cfg,
            input,
            output,
            median,
        } => {
            let window = match median {
                Some(m) => m,
                None => cfg.load_optional()?.map_or(5, |c| c.preprocess.median_window),
            };
            let image = read(Stage::Filter, &input)?;
            let filtered = in_stage(Stage::Filter, pipeline::filter_channel(&image, window))?;
            write(Stage::Filter, &filtered, &output)?;
        }
        Command::Compress {
            cfg,
            input,
            output,
            wavelength,
            min_body_area,
        } => {
            let config = cfg.load_optional()?;
            let terrace = config.as_ref().map_or_else(AutoConfig::default, |c| c.terrace.clone());
            let area = match (min_body_area, &config) {
                (Some(a), _) => a,
                (None, Some(c)) => c
                    .channel(wavelength)
                    .ok_or_else(|| input_err(Stage::Compress, format!("no channel {wavelength} in config")))?
                    .min_body_area,
                (None, None) => return Err(input_err(Stage::Compress, "--min-body-area or --config is required")),
            };
            let image = read(Stage::Compress, &input)?;
            let out = pipeline::compress_channel(&image, area, &terrace)
                .map_err(|e| Error::stage(Stage::Compress, Some(wavelength), e))?;
            write(Stage::Compress, &out.raster, &output)?;
            println!("{THRESHOLD_CSV_HEADER}");
            println!("{}", out.selection.csv_row(wavelength));
        }
        Command::Window {
            cfg,
            input,
            output,
            window,
            wavelength,
            low,
            high,
            out_max,
        } => {
            let spec = match (low, high) {
                (Some(low), Some(high)) => WindowSpec { low, high, out_max },
                (None, None) => {
                    let config = cfg.load(Vec::new())?;
                    let w = wavelength.ok_or_else(|| input_err(Stage::Window, "--wavelength is required"))?;
                    let choice = window.unwrap_or(config.pipeline.window);
                    let ch = config
                        .channel(w)
                        .ok_or_else(|| input_err(Stage::Window, format!("no channel {w} in config")))?;
                    *ch.window(choice)
                        .ok_or_else(|| input_err(Stage::Window, "window choice is none"))?
                }
                _ => return Err(input_err(Stage::Window, "--low and --high go together")),
            };
            let image = read(Stage::Window, &input)?;
            write(Stage::Window, &in_stage(Stage::Window, pipeline::window_channel(&image, &spec))?, &output)?;
        }
        Command::Cluster {
            cfg,
            input,
            output,
            model,
            method,
            k,
        } => {
            let config = cfg.load_optional()?;
            let mut cc = config.as_ref().map_or_else(ClusteringConfig::default, |c| c.clustering.clone());
            if let Some(m) = method {
                cc.method = m;
            }
            if let Some(k) = k {
                cc.k = k;
            }
            if cc.k == 0 {
                return Err(input_err(Stage::Cluster, "clustering.k must be at least 1"));
            }
            let seed = config.as_ref().map_or(cfg.seed.unwrap_or(0), |c| c.seed);
            // channels are keyed by position; the stack only needs increasing keys
            let wavelengths: Vec<u32> = match &config {
                Some(c) if c.channels.len() == input.len() => c.wavelengths(),
                _ => (1..=input.len() as u32).collect(),
            };
            let mut channels = Vec::with_capacity(input.len());
            for (w, p) in wavelengths.into_iter().zip(&input) {
                channels.push((w, read(Stage::Cluster, p)?));
            }
            let (labels, result) = in_stage(Stage::Cluster, pipeline::cluster_channels(channels, &cc, seed))?;
            write(Stage::Cluster, labels.raster(), &output)?;
            if let Some(m) = model {
                write_text(Stage::Cluster, &m, &result.model_csv)?;
            }
            println!("clusters: {}", result.k);
        }
        Command::Evaluate {
            cfg,
            input,
            template,
            binarize_template,
            output,
            name,
            fixed_label,
        } => {
            let eval = cfg.load_optional()?.map(|c| c.evaluation).unwrap_or_default();
            let labels_raster = read(Stage::Evaluate, &input)?;
            let k = labels_raster.max_value() as usize + 1;
            let labels = in_stage(
                Stage::Evaluate,
                terrace_core::clustering::LabelImage::new(labels_raster, k),
            )?;
            let t = in_stage(Stage::Evaluate, pipeline::load_template(&template, binarize_template))?;
            let policy = fixed_label.map_or(ForegroundPolicy::BestMatch, ForegroundPolicy::Fixed);
            let report = in_stage(
                Stage::Evaluate,
                evaluate(&labels, &t, eval.roi_pad, policy, &name, &eval.subset_ids),
            )?;
            let csv = in_stage(Stage::Evaluate, dice_csv(std::slice::from_ref(&report)))?;
            print!("{csv}");
            if let Some(o) = output {
                write_text(Stage::Evaluate, &o, &csv)?;
            }
        }
        Command::ExportSurface { input, output } => {
            let image = read(Stage::Report, &input)?;
            in_stage(Stage::Report, pipeline::write_surface(&image, &output))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
