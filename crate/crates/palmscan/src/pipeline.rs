//! Whole-run driver: fixed output layout under `out/` and stage sequencing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};

use crate::config::RunConfig;
use crate::exec::Exec;
use crate::manifest::{load_manifest, SceneManifest};
use crate::stages::{age, classify, composite, indices, postproc, report, texture, validate};

/// Paths of every artifact of a run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub year: i32,
    pub ndvi_year: i32,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout { root: cfg.out.clone(), year: cfg.year, ndvi_year: cfg.ndvi_year() }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn composite(&self) -> PathBuf {
        self.dir("composite").join(composite::composite_name(self.year))
    }

    pub fn textures(&self) -> PathBuf {
        self.dir("texture").join(texture::TEXTURE_FILE)
    }

    pub fn series(&self) -> PathBuf {
        self.dir("indices")
    }

    pub fn ndvi_median(&self) -> PathBuf {
        self.dir("indices").join(indices::ndvi_median_name(self.ndvi_year))
    }

    pub fn models(&self) -> PathBuf {
        self.dir("classify").join(classify::MODELS_FILE)
    }

    pub fn palm_maps(&self) -> PathBuf {
        self.dir("classify").join(classify::PALM_MAPS_FILE)
    }

    pub fn voted(&self) -> PathBuf {
        self.dir("classify").join(classify::VOTED_FILE)
    }

    pub fn extent(&self) -> PathBuf {
        self.dir("postproc").join(postproc::EXTENT_FILE)
    }

    pub fn closure(&self) -> PathBuf {
        self.dir("age").join(age::CLOSURE_FILE)
    }

    pub fn accuracy(&self) -> PathBuf {
        self.dir("validate").join(validate::ACCURACY_FILE)
    }
}

/// Wall time of each stage that ran, in pipeline order.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub stages: Vec<(&'static str, f64)>,
}

/// Runs the selected stages in order. Each stage reads its inputs from the
/// layout, so a partial run continues from earlier outputs.
pub fn run(cfg: &RunConfig, ex: &Exec) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let manifest = load_manifest(&cfg.manifest)?;
    for stage in cfg.selected_stages() {
        let t = Instant::now();
        run_stage(cfg, stage, &manifest, ex)?;
        summary.stages.push((stage, t.elapsed().as_secs_f64()));
    }
    Ok(summary)
}

pub fn run_stage(cfg: &RunConfig, stage: &str, manifest: &SceneManifest, ex: &Exec) -> Result<()> {
    let l = Layout::new(cfg);
    let opts = &cfg.geotiff;
    let m = Some(manifest);
    match stage {
        "composite" => {
            composite::run_composite(&cfg.manifest, cfg.year, &cfg.composite, &l.dir("composite"), opts, ex)?;
        }
        "texture" => {
            texture::run_texture(&l.composite(), &cfg.texture, &l.dir("texture"), opts, ex)?;
        }
        "indices" => {
            indices::run_indices(&cfg.manifest, &cfg.indices, Some(cfg.ndvi_year()), &l.series(), opts, ex)?;
        }
        "classify" => run_classify(cfg, &l, m, ex)?,
        "postproc" => {
            postproc::run_postproc(&l.voted(), &l.ndvi_median(), &cfg.postproc, m, &l.dir("postproc"), opts, ex)?;
        }
        "age" => {
            age::run_age(&l.extent(), &l.series(), &cfg.age, m, &l.dir("age"), opts, ex)?;
        }
        "validate" => {
            validate::run_validate(&l.extent(), &cfg.validate, cfg.seed, m, &l.dir("validate"))?;
        }
        "report" => {
            report::run_report(&l.extent(), &l.closure(), &cfg.age.params, &cfg.report, m, &l.dir("report"))?;
        }
        other => bail!("unknown stage `{other}`"),
    }
    Ok(())
}

/// `fit`, `predict` and `vote` in one go. Without a labels file or an
/// automatic reference the run stops after `fit` with the template path.
fn run_classify(cfg: &RunConfig, l: &Layout, manifest: Option<&SceneManifest>, ex: &Exec) -> Result<()> {
    let (comp, tex) = (l.composite(), l.textures());
    let features = classify::Features::load(&comp, &tex)?;
    let inputs: [&Path; 2] = [&comp, &tex];
    let dir = l.dir("classify");
    let fit = classify::run_fit(&features, &cfg.classify, cfg.seed, manifest, &inputs, &dir, ex)?;
    let labels = match (&cfg.classify.labels, &cfg.classify.auto_label_from) {
        (Some(p), _) => p.clone(),
        (None, Some(_)) => fit.labels,
        (None, None) => bail!(
            "clusters are unlabelled: fill in {} and set `classify.labels`, then rerun from `classify`",
            fit.labels.display()
        ),
    };
    let palm = classify::run_predict(&features, &fit.models, &labels, &inputs, &dir, &cfg.geotiff, ex)?;
    classify::run_vote(&palm, cfg.classify.vote_threshold, &dir, &cfg.geotiff)?;
    Ok(())
}
