//! Stage runner: TOML configuration, per-stage scratch directories renamed
//! into place on success, and run manifests that let unchanged stages skip.

mod config;
mod manifest;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;
use tracing::info;

pub use config::{
    CrawlConfig, DatasetConfig, HarvestConfig, PathsConfig, PipelineConfig, StructureConfig, TermsConfig,
    VectorizeConfig,
};
pub use manifest::{list_files, Exclusion, Layout, RunManifest, StageReport, StageStatus, StageTarget, MANIFEST_FILE};
pub use stages::{
    date_seen, domain_inclusion_filter, language_name, DocumentRow, DomainRow, InclusionDecision, LanguageStats,
    PageRow, PdfLinkRow, CORPUS_STATS_HEADER,
};

use crate::util::{bytes_digest, file_digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Prepare,
    Crawl,
    HarvestPdf,
    Structure,
    Terms,
    Dataset,
    Vectorize,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Prepare,
        Stage::Crawl,
        Stage::HarvestPdf,
        Stage::Structure,
        Stage::Terms,
        Stage::Dataset,
        Stage::Vectorize,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Crawl => "crawl",
            Stage::HarvestPdf => "harvest-pdf",
            Stage::Structure => "structure",
            Stage::Terms => "terms",
            Stage::Dataset => "dataset",
            Stage::Vectorize => "vectorize",
            Stage::Report => "report",
        }
    }

    /// Logical name of the stage's principal output.
    pub fn main_output(self) -> &'static str {
        match self {
            Stage::Prepare => "registry.csv",
            Stage::Crawl => "pages.csv",
            Stage::HarvestPdf => "reports.csv",
            Stage::Structure => "documents.csv",
            Stage::Terms => "terms.csv",
            Stage::Dataset => "dataset.csv",
            Stage::Vectorize => "vectors",
            Stage::Report => "corpus_stats.csv",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::Validation(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("missing input {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PipelineError {
    /// 2 for configuration and input problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::Missing { .. } => 2,
            PipelineError::Runtime(_) | PipelineError::Io(_) => 1,
        }
    }
}

/// Per-invocation settings that are not part of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run even when the previous manifest says nothing changed.
    pub force: bool,
    /// Directory holding `documents.csv`, replacing `<out>/structure`.
    pub corpus: Option<PathBuf>,
    /// Explicit path for the stage's main CSV (terms and dataset only).
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
}

impl StageOutcome {
    pub fn skipped(&self) -> bool {
        self.manifest.status == StageStatus::Skipped
    }
}

/// A validated configuration ready to run stages.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
}

/// One input a stage reads: the path, whether it must exist, and what to tell
/// the user when it does not.
pub(crate) struct InputSpec {
    pub path: PathBuf,
    pub required: bool,
    pub hint: String,
}

impl InputSpec {
    pub fn required(path: PathBuf, hint: impl Into<String>) -> Self {
        Self {
            path,
            required: true,
            hint: hint.into(),
        }
    }

    pub fn optional(path: PathBuf) -> Self {
        Self {
            path,
            required: false,
            hint: String::new(),
        }
    }
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        Self::new(PipelineConfig::load(path)?)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_root(&self) -> &Path {
        &self.cfg.paths.out
    }

    /// Where a stage publishes, honoring an explicit output file.
    pub fn target(&self, stage: Stage, opts: &RunOptions) -> Result<StageTarget, PipelineError> {
        let layout = match &opts.output {
            Some(main) if matches!(stage, Stage::Terms | Stage::Dataset) => Layout::File { main: main.clone() },
            Some(_) => {
                return Err(PipelineError::Validation(format!(
                    "an explicit output file is only supported for terms and dataset, not {stage}"
                )))
            }
            None => Layout::Dir {
                root: self.cfg.paths.out.clone(),
            },
        };
        Ok(StageTarget {
            stage,
            layout,
            main_name: stage.main_output(),
        })
    }

    /// Published directory of an upstream stage.
    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.cfg.paths.out.join(stage.name())
    }

    pub(crate) fn corpus_dir(&self, opts: &RunOptions) -> PathBuf {
        match &opts.corpus {
            Some(dir) if dir.join("documents.csv").is_file() => dir.clone(),
            Some(dir) if dir.join(Stage::Structure.name()).join("documents.csv").is_file() => {
                dir.join(Stage::Structure.name())
            }
            Some(dir) => dir.clone(),
            None => self.stage_dir(Stage::Structure),
        }
    }

    fn config_hash(&self, stage: Stage) -> String {
        #[derive(Serialize)]
        struct Keyed<'a, T: Serialize> {
            stage: &'a str,
            settings: T,
        }
        let c = &self.cfg;
        let settings = match stage {
            Stage::Prepare => serde_json::to_value((&c.paths, &c.crawl, &c.dataset.expected_categories)),
            Stage::Crawl => serde_json::to_value(&c.crawl),
            Stage::HarvestPdf => serde_json::to_value((&c.harvest, &c.crawl.resolve, &c.crawl.user_agent)),
            Stage::Structure => serde_json::to_value((&c.structure, &c.paths.langid_profiles)),
            Stage::Terms => serde_json::to_value((&c.terms, &c.structure.accent_mode)),
            Stage::Dataset => serde_json::to_value(&c.dataset),
            Stage::Vectorize => serde_json::to_value(&c.vectorize),
            Stage::Report => serde_json::to_value(()),
        }
        .expect("config serializes");
        let json = serde_json::to_vec(&Keyed {
            stage: stage.name(),
            settings,
        })
        .expect("config serializes");
        bytes_digest(&json)
    }

    fn digest_inputs(&self, specs: &[InputSpec]) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut out = BTreeMap::new();
        for spec in specs {
            let key = spec.path.display().to_string();
            if spec.path.is_file() {
                out.insert(key, file_digest(&spec.path)?);
            } else if spec.required {
                return Err(PipelineError::Missing {
                    path: spec.path.clone(),
                    hint: spec.hint.clone(),
                });
            } else {
                out.insert(key, "absent".into());
            }
        }
        Ok(out)
    }

    /// Runs one stage, or marks it skipped when its inputs, configuration and
    /// outputs are unchanged since the last completed run.
    pub fn run(&self, stage: Stage, opts: &RunOptions) -> Result<StageOutcome, PipelineError> {
        let target = self.target(stage, opts)?;
        let specs = stages::inputs(self, stage, opts)?;
        let inputs = self.digest_inputs(&specs)?;
        let config_hash = self.config_hash(stage);
        let manifest_path = target.manifest_path();
        if !opts.force {
            if let Some(mut prev) = manifest::reusable(&target, &config_hash, &inputs) {
                info!(%stage, "inputs unchanged, skipping");
                prev.status = StageStatus::Skipped;
                prev.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
                prev.save(&manifest_path)?;
                return Ok(StageOutcome {
                    stage,
                    manifest_path,
                    manifest: prev,
                });
            }
        }
        info!(%stage, "running");
        let work = manifest::StageWork::create(&target)?;
        match stages::execute(self, stage, opts, &work) {
            Ok(report) => {
                let manifest = manifest::publish(&target, work, config_hash, inputs, report)?;
                Ok(StageOutcome {
                    stage,
                    manifest_path,
                    manifest,
                })
            }
            Err(e) => {
                work.discard();
                Err(e)
            }
        }
    }

    /// Every stage in order. Vectorization is left out when no command is
    /// configured.
    pub fn run_all(&self, force: bool) -> Result<Vec<StageOutcome>, PipelineError> {
        let opts = RunOptions {
            force,
            ..RunOptions::default()
        };
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::Vectorize && self.cfg.vectorize.command.is_empty() {
                info!("vectorize.command not configured, leaving vectorization out");
                continue;
            }
            out.push(self.run(stage, &opts)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("harvest".parse::<Stage>().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn config_hash_tracks_only_the_stage_section() {
        let dir = tempfile::tempdir().unwrap();
        let reg = dir.path().join("r.csv");
        std::fs::write(&reg, "name,domain,sector\n").unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.registry = Some(reg);
        let a = Pipeline::new(cfg.clone()).unwrap();
        cfg.terms.top_k = 5;
        let b = Pipeline::new(cfg).unwrap();
        assert_ne!(a.config_hash(Stage::Terms), b.config_hash(Stage::Terms));
        assert_eq!(a.config_hash(Stage::Crawl), b.config_hash(Stage::Crawl));
    }
}
