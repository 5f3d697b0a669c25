use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Stage};
use crate::util::{file_digest, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Skipped,
}

/// A domain or document left out of a stage, with a machine-readable reason.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub item: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// What one stage run read, wrote and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub status: StageStatus,
    pub timestamp: String,
    pub config_hash: String,
    /// Input path to SHA-256, `absent` for optional inputs that do not exist.
    pub inputs: BTreeMap<String, String>,
    /// Output path, relative to the manifest's directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub counters: BTreeMap<String, u64>,
    pub exclusions: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Runtime(format!("{}: unreadable manifest: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(path, |w| {
            w.write_all(&json)?;
            w.write_all(b"\n")
        })?;
        Ok(())
    }
}

/// Counters, exclusions and warnings a stage body reports back.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub counters: BTreeMap<String, u64>,
    pub exclusions: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

impl StageReport {
    pub fn count(&mut self, key: &str, n: u64) {
        *self.counters.entry(key.to_string()).or_default() += n;
    }

    pub fn exclude(&mut self, item: &str, reason: &str, detail: String) {
        self.exclusions.push(Exclusion {
            item: item.to_string(),
            reason: reason.to_string(),
            detail,
        });
    }

    pub fn warn(&mut self, msg: String) {
        tracing::warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Where a stage publishes its files.
///
/// In directory layout everything lands in `<root>/<stage>/`. In file layout
/// the main output goes to an explicit path and side files sit next to it,
/// prefixed by its stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    Dir { root: PathBuf },
    File { main: PathBuf },
}

#[derive(Debug, Clone)]
pub struct StageTarget {
    pub stage: Stage,
    pub layout: Layout,
    /// Logical name of the file that `Layout::File` maps to `main`.
    pub main_name: &'static str,
}

impl StageTarget {
    pub fn final_dir(&self) -> PathBuf {
        match &self.layout {
            Layout::Dir { root } => root.join(self.stage.name()),
            Layout::File { main } => parent_of(main),
        }
    }

    fn stem(main: &Path) -> String {
        main.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn manifest_path(&self) -> PathBuf {
        match &self.layout {
            Layout::Dir { .. } => self.final_dir().join(MANIFEST_FILE),
            Layout::File { main } => parent_of(main).join(format!("{}.{MANIFEST_FILE}", Self::stem(main))),
        }
    }

    pub fn tmp_dir(&self) -> PathBuf {
        match &self.layout {
            Layout::Dir { root } => root.join(format!(".{}.tmp", self.stage.name())),
            Layout::File { main } => parent_of(main).join(format!(".{}.tmp", Self::stem(main))),
        }
    }

    /// Published name, relative to [`Self::final_dir`], of a logical file.
    pub fn published_name(&self, logical: &str) -> String {
        match &self.layout {
            Layout::Dir { .. } => logical.to_string(),
            Layout::File { main } if logical == self.main_name => {
                main.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            }
            Layout::File { main } => format!("{}.{}", Self::stem(main), logical.replace('/', "_")),
        }
    }

    /// Published path of a logical output, for readers of a finished stage.
    pub fn output_path(&self, logical: &str) -> PathBuf {
        self.final_dir().join(self.published_name(logical))
    }
}

fn parent_of(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Scratch directory a stage body writes into.
#[derive(Debug)]
pub struct StageWork {
    dir: PathBuf,
}

impl StageWork {
    pub fn create(target: &StageTarget) -> Result<Self, PipelineError> {
        let dir = target.tmp_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path for a logical output, with its parent directories created.
    pub fn path(&self, logical: &str) -> Result<PathBuf, PipelineError> {
        let p = self.dir.join(logical);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn discard(self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

/// Every regular file under `dir`, as sorted `/`-separated relative paths.
pub fn list_files(dir: &Path) -> io::Result<Vec<String>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("walk stays under base");
                let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                out.push(parts.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Digests the scratch files, writes the manifest and moves everything into
/// its published place.
pub fn publish(
    target: &StageTarget,
    work: StageWork,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    report: StageReport,
) -> Result<RunManifest, PipelineError> {
    let mut outputs = BTreeMap::new();
    let files = list_files(work.dir())?;
    for f in &files {
        outputs.insert(target.published_name(f), file_digest(&work.dir().join(f))?);
    }
    let mut exclusions = report.exclusions;
    exclusions.sort();
    let manifest = RunManifest {
        stage: target.stage.name().to_string(),
        status: StageStatus::Completed,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config_hash,
        inputs,
        outputs,
        counters: report.counters,
        exclusions,
        warnings: report.warnings,
    };
    let final_dir = target.final_dir();
    match &target.layout {
        Layout::Dir { .. } => {
            manifest.save(&work.dir().join(MANIFEST_FILE))?;
            if final_dir.exists() {
                fs::remove_dir_all(&final_dir)?;
            }
            fs::rename(work.dir(), &final_dir)?;
        }
        Layout::File { .. } => {
            fs::create_dir_all(&final_dir)?;
            for f in &files {
                fs::rename(work.dir().join(f), final_dir.join(target.published_name(f)))?;
            }
            manifest.save(&target.manifest_path())?;
            work.discard();
        }
    }
    Ok(manifest)
}

/// The previous manifest, when the stage can be skipped: same config hash,
/// same input digests and every recorded output still intact.
pub fn reusable(
    target: &StageTarget,
    config_hash: &str,
    inputs: &BTreeMap<String, String>,
) -> Option<RunManifest> {
    let prev = RunManifest::load(&target.manifest_path()).ok()?;
    if prev.config_hash != config_hash || &prev.inputs != inputs {
        return None;
    }
    let dir = target.final_dir();
    let intact = prev
        .outputs
        .iter()
        .all(|(name, digest)| file_digest(&dir.join(name)).is_ok_and(|d| &d == digest));
    intact.then_some(prev)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(layout: Layout) -> StageTarget {
        StageTarget {
            stage: Stage::Terms,
            layout,
            main_name: "terms.csv",
        }
    }

    #[test]
    fn dir_layout_publishes_atomically() {
        let root = tempfile::tempdir().unwrap();
        let t = target(Layout::Dir {
            root: root.path().to_path_buf(),
        });
        let work = StageWork::create(&t).unwrap();
        fs::write(work.path("terms.csv").unwrap(), "a\n").unwrap();
        fs::write(work.path("sub/x.txt").unwrap(), "b").unwrap();
        assert!(!t.final_dir().exists());
        let m = publish(&t, work, "h".into(), BTreeMap::new(), StageReport::default()).unwrap();
        assert!(!t.tmp_dir().exists());
        assert_eq!(m.outputs.keys().collect::<Vec<_>>(), ["sub/x.txt", "terms.csv"]);
        assert!(reusable(&t, "h", &BTreeMap::new()).is_some());
        assert!(reusable(&t, "other", &BTreeMap::new()).is_none());
        fs::write(t.final_dir().join("terms.csv"), "tampered\n").unwrap();
        assert!(reusable(&t, "h", &BTreeMap::new()).is_none());
    }

    #[test]
    fn file_layout_prefixes_side_files() {
        let root = tempfile::tempdir().unwrap();
        let main = root.path().join("weights.csv");
        let t = target(Layout::File { main: main.clone() });
        let work = StageWork::create(&t).unwrap();
        fs::write(work.path("terms.csv").unwrap(), "a\n").unwrap();
        fs::write(work.path("candidates.csv").unwrap(), "b\n").unwrap();
        let m = publish(&t, work, "h".into(), BTreeMap::new(), StageReport::default()).unwrap();
        assert!(main.is_file());
        assert!(root.path().join("weights.candidates.csv").is_file());
        assert!(root.path().join("weights.manifest.json").is_file());
        assert!(m.outputs.contains_key("weights.csv"));
        assert_eq!(list_files(root.path()).unwrap().len(), 3);
    }
}
