use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use palmscan::config::{
    validate_config, AgeBlock, ClassifyBlock, IndicesBlock, PostprocBlock, ReportBlock, RunConfig, TextureBlock,
    ValidateBlock,
};
use palmscan::exec::{default_workers, Exec, DEFAULT_TILE};
use palmscan::geotiff::WriteOptions;
use palmscan::manifest::{load_manifest, SceneManifest};
use palmscan::pipeline;
use palmscan::stages::{age, classify, composite, indices, postproc, report, synth, texture, validate};
use palmscan_core::composite::CompositeParams;

#[derive(Parser)]
#[command(name = "palmscan", version, about = "Oil-palm extent and plantation age mapping")]
struct Cli {
    /// Worker threads (default: PALMSCAN_WORKERS, then the config, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Tile side for tiled stages.
    #[arg(long, global = true)]
    tile: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic scene, its manifest and a run config.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of stages.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config without running anything.
    CheckConfig {
        #[arg(long)]
        config: PathBuf,
    },
    Composite {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        year: i32,
        #[command(flatten)]
        common: Common,
    },
    Texture {
        #[arg(long)]
        composite: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    Indices {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the annual median NDVI of this year.
        #[arg(long)]
        ndvi_year: Option<i32>,
        #[command(flatten)]
        common: Common,
    },
    Classify {
        #[command(subcommand)]
        step: ClassifyCmd,
    },
    Postproc {
        #[arg(long)]
        voted: PathBuf,
        #[arg(long)]
        ndvi: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    Age {
        #[arg(long)]
        extent: PathBuf,
        /// Directory holding series.json.
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    Validate {
        #[arg(long)]
        extent: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    Report {
        #[arg(long)]
        extent: PathBuf,
        #[arg(long)]
        closure: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Age parameters as JSON or @file.
        #[arg(long)]
        age_params: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum ClassifyCmd {
    /// Sample and cluster every cell.
    Fit {
        #[arg(long)]
        composite: PathBuf,
        #[arg(long)]
        textures: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Cluster maps and labelled oil-palm maps.
    Predict {
        #[arg(long)]
        composite: PathBuf,
        #[arg(long)]
        textures: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Vote across the per-cell oil-palm maps.
    Vote {
        #[arg(long)]
        palm_maps: PathBuf,
        #[arg(long)]
        threshold: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    out: PathBuf,
    /// Stage parameters as JSON or @file.
    #[arg(long)]
    params: Option<String>,
    /// GeoTIFF write options as JSON or @file.
    #[arg(long)]
    geotiff: Option<String>,
}

impl Common {
    fn params<T: DeserializeOwned + Default>(&self) -> Result<T> {
        parse_json(self.params.as_deref())
    }

    fn opts(&self) -> Result<WriteOptions> {
        parse_json(self.geotiff.as_deref())
    }
}

fn parse_json<T: DeserializeOwned + Default>(arg: Option<&str>) -> Result<T> {
    let Some(a) = arg else { return Ok(T::default()) };
    let text = match a.strip_prefix('@') {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {p}"))?,
        None => a.to_string(),
    };
    serde_json::from_str(&text).context("parsing parameters")
}

fn manifest(p: &Option<PathBuf>) -> Result<Option<SceneManifest>> {
    p.as_deref().map(load_manifest).transpose()
}

fn exec(cli: &Cli, cfg_workers: Option<usize>, cfg_tile: Option<usize>) -> Result<Exec> {
    let workers = cli.workers.or(std::env::var(palmscan::exec::WORKERS_ENV).ok().and_then(|v| v.parse().ok()));
    let workers = workers.or(cfg_workers).unwrap_or_else(default_workers);
    Exec::new(workers, cli.tile.or(cfg_tile).unwrap_or(DEFAULT_TILE))
}

fn print_path(p: &Path) {
    println!("{}", p.display());
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.cmd {
        Cmd::Synth { spec, out } => {
            let s = synth::SynthSpec::load(spec)?;
            let ex = exec(&cli, None, None)?;
            print_path(&synth::run_synth(&s, out, &ex)?);
        }
        Cmd::Run { config, stages, seed } => {
            let mut cfg = RunConfig::load(config)?;
            if let Some(s) = stages {
                cfg.stages = Some(s.clone());
            }
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            let ex = exec(&cli, cfg.workers, Some(cfg.tile))?;
            let summary = pipeline::run(&cfg, &ex)?;
            for (stage, secs) in summary.stages {
                println!("{stage:<10} {secs:>8.2}s");
            }
        }
        Cmd::CheckConfig { config } => {
            let d = validate_config(config)?;
            if d.is_empty() {
                println!("ok");
            } else {
                for line in &d {
                    println!("{line}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Composite { manifest, year, common } => {
            let p: CompositeParams = common.params()?;
            let ex = exec(&cli, None, None)?;
            print_path(&composite::run_composite(manifest, *year, &p, &common.out, &common.opts()?, &ex)?);
        }
        Cmd::Texture { composite, common } => {
            let b: TextureBlock = common.params()?;
            let ex = exec(&cli, None, None)?;
            print_path(&texture::run_texture(composite, &b, &common.out, &common.opts()?, &ex)?);
        }
        Cmd::Indices { manifest, ndvi_year, common } => {
            let b: IndicesBlock = common.params()?;
            let ex = exec(&cli, None, None)?;
            let o = indices::run_indices(manifest, &b, ndvi_year.or(b.ndvi_year), &common.out, &common.opts()?, &ex)?;
            print_path(&o.series_dir);
            if let Some(n) = o.ndvi_median {
                print_path(&n);
            }
        }
        Cmd::Classify { step } => {
            let ex = exec(&cli, None, None)?;
            match step {
                ClassifyCmd::Fit { composite, textures, manifest: mp, seed, common } => {
                    let b: ClassifyBlock = common.params()?;
                    let f = classify::Features::load(composite, textures)?;
                    let m = manifest(mp)?;
                    let inputs: [&Path; 2] = [composite, textures];
                    let o = classify::run_fit(&f, &b, *seed, m.as_ref(), &inputs, &common.out, &ex)?;
                    print_path(&o.models);
                    print_path(&o.labels);
                }
                ClassifyCmd::Predict { composite, textures, models, labels, common } => {
                    let f = classify::Features::load(composite, textures)?;
                    let inputs: [&Path; 2] = [composite, textures];
                    let o = classify::run_predict(&f, models, labels, &inputs, &common.out, &common.opts()?, &ex)?;
                    print_path(&o);
                }
                ClassifyCmd::Vote { palm_maps, threshold, common } => {
                    print_path(&classify::run_vote(palm_maps, *threshold, &common.out, &common.opts()?)?);
                }
            }
        }
        Cmd::Postproc { voted, ndvi, manifest: mp, common } => {
            let b: PostprocBlock = common.params()?;
            let m = manifest(mp)?;
            let ex = exec(&cli, None, None)?;
            print_path(&postproc::run_postproc(voted, ndvi, &b, m.as_ref(), &common.out, &common.opts()?, &ex)?);
        }
        Cmd::Age { extent, series, manifest: mp, common } => {
            let b: AgeBlock = common.params()?;
            let m = manifest(mp)?;
            let ex = exec(&cli, None, None)?;
            print_path(&age::run_age(extent, series, &b, m.as_ref(), &common.out, &common.opts()?, &ex)?);
        }
        Cmd::Validate { extent, manifest: mp, seed, common } => {
            let b: ValidateBlock = common.params()?;
            let m = manifest(mp)?;
            print_path(&validate::run_validate(extent, &b, *seed, m.as_ref(), &common.out)?);
        }
        Cmd::Report { extent, closure, manifest: mp, age_params, common } => {
            let b: ReportBlock = common.params()?;
            let a: AgeBlock = parse_json(age_params.as_deref())?;
            let m = manifest(mp)?;
            print_path(&report::run_report(extent, closure, &a.params, &b, m.as_ref(), &common.out)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
