//! Run directories: every file goes through one writer, lands by atomic
//! rename, and is listed with its SHA-256 in `manifest.json`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gmac_core::agent::IterationMetrics;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SNAPSHOT: &str = "config.snapshot";
pub const METRICS: &str = "metrics.jsonl";
pub const MANIFEST_FORMAT: &str = "gmac-run";
pub const MANIFEST_VERSION: u32 = 1;
pub const HASH_ALGORITHM: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    pub bytes: u64,
    /// Lower-case hex digest.
    pub sha256: String,
}

/// Greedy-policy returns of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub checkpoint: String,
    pub iteration: u64,
    pub episodes: usize,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub hash: String,
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub evaluations: Vec<Evaluation>,
}

impl Manifest {
    fn new() -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            hash: HASH_ALGORITHM.into(),
            files: Vec::new(),
            evaluations: Vec::new(),
        }
    }

    pub fn entry(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub frames: u64,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub skipped_updates: u64,
    pub intrinsic_reward: f64,
    pub flops_inference: u64,
    pub flops_update: u64,
}

impl From<&IterationMetrics> for MetricsRecord {
    fn from(m: &IterationMetrics) -> Self {
        Self {
            iteration: m.iteration,
            frames: m.frames,
            episodes: m.episodes,
            mean_return: m.mean_return,
            policy_loss: m.policy_loss,
            value_loss: m.value_loss,
            entropy: m.entropy,
            clip_fraction: m.clip_fraction,
            grad_norm: m.grad_norm,
            skipped_updates: m.skipped_updates,
            intrinsic_reward: m.intrinsic_reward,
            flops_inference: m.flops_inference,
            flops_update: m.flops_update,
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, sha256_hex(&bytes)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temporary file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses complete lines only: a final line without its newline is a write
/// cut short and is ignored.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut reader = BufReader::new(f);
    let mut line = String::new();
    for n in 1.. {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 || !line.ends_with('\n') {
            break;
        }
        let rec = serde_json::from_str(line.trim_end()).map_err(|e| Error::format(path, format!("line {n}: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

/// The single writer of a run directory.
pub struct RunWriter {
    dir: PathBuf,
    manifest: Manifest,
    metrics: Option<File>,
}

impl RunWriter {
    /// Fails if `dir` already holds a manifest, so runs never mix.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if dir.join(MANIFEST).exists() {
            return Err(Error::Config(format!("{} already holds a run; pick a fresh out_dir", dir.display())));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest: Manifest::new(), metrics: None })
    }

    /// Continues an existing run directory, e.g. to add exports.
    pub fn reopen(run: RunDir) -> Self {
        Self { dir: run.dir, manifest: run.manifest, metrics: None }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn track(&mut self, name: &str) {
        if self.manifest.entry(name).is_none() {
            self.manifest.files.push(FileEntry { path: name.into(), bytes: 0, sha256: String::new() });
        }
    }

    pub fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.track(name);
        Ok(())
    }

    pub fn write_checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        self.write_file(name, &ckpt.encode())
    }

    /// Appends one record as a single write of one whole line.
    pub fn append_metrics(&mut self, rec: &MetricsRecord) -> Result<()> {
        let path = self.dir.join(METRICS);
        if self.metrics.is_none() {
            let f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            self.metrics = Some(f);
            self.track(METRICS);
        }
        let mut line = serde_json::to_string(rec).expect("metrics serialize");
        line.push('\n');
        let f = self.metrics.as_mut().expect("opened above");
        f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(&path, e))
    }

    pub fn record_evaluation(&mut self, eval: Evaluation) {
        self.manifest.evaluations.retain(|e| e.checkpoint != eval.checkpoint);
        self.manifest.evaluations.push(eval);
    }

    /// Rehashes every tracked file and atomically replaces the manifest.
    pub fn commit(&mut self) -> Result<()> {
        if let Some(f) = &self.metrics {
            f.sync_data().map_err(|e| Error::io(self.dir.join(METRICS), e))?;
        }
        for entry in &mut self.manifest.files {
            let (bytes, hash) = sha256_file(&self.dir.join(&entry.path))?;
            entry.bytes = bytes;
            entry.sha256 = hash;
        }
        self.manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        write_atomic(&self.dir.join(MANIFEST), json.as_bytes())
    }
}

/// A finished (or crashed) run directory opened for reading.
#[derive(Debug, Clone)]
pub struct RunDir {
    dir: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION || manifest.hash != HASH_ALGORITHM {
            return Err(Error::format(
                &path,
                format!("unsupported manifest {} v{} ({})", manifest.format, manifest.version, manifest.hash),
            ));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Reads a listed file, failing unless its size and hash match the manifest.
    pub fn read_verified(&self, name: &str) -> Result<Vec<u8>> {
        let entry =
            self.manifest.entry(name).ok_or_else(|| Error::Integrity(format!("{name} is not listed in the manifest")))?;
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let hash = sha256_hex(&bytes);
        if bytes.len() as u64 != entry.bytes || hash != entry.sha256 {
            return Err(Error::Integrity(format!("{name}: sha256 {hash} does not match manifest {}", entry.sha256)));
        }
        Ok(bytes)
    }

    pub fn verify_all(&self) -> Result<()> {
        for f in &self.manifest.files {
            self.read_verified(&f.path)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, name: &str) -> Result<Checkpoint> {
        let bytes = self.read_verified(name)?;
        Checkpoint::decode(&bytes, &self.dir.join(name))
    }

    /// Listed checkpoints, oldest first.
    pub fn checkpoints(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .manifest
            .files
            .iter()
            .map(|f| f.path.as_str())
            .filter(|p| p.starts_with("checkpoint-") && p.ends_with(".bin"))
            .collect();
        names.sort();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64) -> MetricsRecord {
        MetricsRecord {
            iteration: i,
            frames: 512 * i,
            episodes: 3,
            mean_return: if i == 0 { None } else { Some(0.1 * i as f64) },
            policy_loss: -0.01,
            value_loss: 0.5,
            entropy: 1.3,
            clip_fraction: 0.1,
            grad_norm: 0.7,
            skipped_updates: 0,
            intrinsic_reward: 0.0,
            flops_inference: 10,
            flops_update: 20,
        }
    }

    #[test]
    fn manifest_lists_and_hashes_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        w.write_file(SNAPSHOT, b"env = five_state\n").unwrap();
        for i in 0..3 {
            w.append_metrics(&record(i)).unwrap();
        }
        w.write_file("extra.csv", b"a,b\n").unwrap();
        w.commit().unwrap();
        let run = RunDir::open(dir.path()).unwrap();
        run.verify_all().unwrap();
        let mut listed: Vec<_> = run.manifest().files.iter().map(|f| f.path.clone()).collect();
        listed.push(MANIFEST.into());
        listed.sort();
        let mut on_disk: Vec<_> =
            fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        on_disk.sort();
        assert_eq!(listed, on_disk);
        assert_eq!(read_metrics(&dir.path().join(METRICS)).unwrap(), (0..3).map(record).collect::<Vec<_>>());
        assert!(RunWriter::create(dir.path()).is_err());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        w.write_file("a.bin", &[1, 2, 3]).unwrap();
        w.commit().unwrap();
        fs::write(dir.path().join("a.bin"), [1, 2, 4]).unwrap();
        let run = RunDir::open(dir.path()).unwrap();
        assert!(matches!(run.read_verified("a.bin"), Err(Error::Integrity(_))));
        assert!(matches!(run.read_verified("b.bin"), Err(Error::Integrity(_))));
    }

    #[test]
    fn torn_final_metrics_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS);
        let mut text = String::new();
        for i in 0..2 {
            text.push_str(&serde_json::to_string(&record(i)).unwrap());
            text.push('\n');
        }
        text.push_str(r#"{"iteration":2,"fra"#);
        fs::write(&path, &text).unwrap();
        assert_eq!(read_metrics(&path).unwrap().len(), 2);
        fs::write(&path, "not json\n").unwrap();
        assert!(read_metrics(&path).is_err());
    }
}
