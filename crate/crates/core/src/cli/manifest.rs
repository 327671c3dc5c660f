//! Corpus manifest: tab-separated records with a header line.

use super::CliError;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

/// One corpus utterance. Paths are resolved against the manifest directory
/// at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub wav_path: PathBuf,
    pub alignment_path: PathBuf,
    pub f0_path: Option<PathBuf>,
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

const REQUIRED: [&str; 4] = ["utterance_id", "speaker_id", "wav_path", "alignment_path"];
const OPTIONAL: [&str; 2] = ["f0_path", "transcript"];

fn valid_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

impl Manifest {
    /// Parses and validates: header columns, unique ids, resolvable paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read manifest '{}': {e}", path.display()))
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| CliError::Validation("manifest is empty".into()))?;
        let columns: Vec<&str> = header.split('\t').collect();
        for req in REQUIRED {
            if !columns.contains(&req) {
                return Err(CliError::Validation(format!(
                    "manifest header is missing the '{req}' column"
                )));
            }
        }
        for col in &columns {
            if !REQUIRED.contains(col) && !OPTIONAL.contains(col) {
                return Err(CliError::Validation(format!("manifest has unknown column '{col}'")));
            }
        }
        let idx = |name: &str| columns.iter().position(|c| *c == name);

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != columns.len() {
                return Err(CliError::Validation(format!(
                    "manifest line {line_no}: {} field(s), header has {}",
                    fields.len(),
                    columns.len()
                )));
            }
            let get = |name: &str| idx(name).map(|j| fields[j].trim()).unwrap_or("");
            let utterance_id = get("utterance_id").to_string();
            let speaker_id = get("speaker_id").to_string();
            if !valid_id(&utterance_id) || !valid_id(&speaker_id) {
                return Err(CliError::Validation(format!(
                    "manifest line {line_no}: ids must be non-empty [A-Za-z0-9._-]"
                )));
            }
            if !seen.insert(utterance_id.clone()) {
                return Err(CliError::Validation(format!(
                    "manifest line {line_no}: duplicate utterance_id '{utterance_id}'"
                )));
            }
            let resolve = |p: &str| {
                let pb = PathBuf::from(p);
                if pb.is_relative() { dir.join(pb) } else { pb }
            };
            let wav_path = resolve(get("wav_path"));
            let alignment_path = resolve(get("alignment_path"));
            for (what, p) in [("wav", &wav_path), ("alignment", &alignment_path)] {
                if !p.exists() {
                    return Err(CliError::Validation(format!(
                        "manifest line {line_no}: {what} path '{}' does not exist",
                        p.display()
                    )));
                }
            }
            let f0_path = match get("f0_path") {
                "" => None,
                p => {
                    let p = resolve(p);
                    if !p.exists() {
                        return Err(CliError::Validation(format!(
                            "manifest line {line_no}: f0 path '{}' does not exist",
                            p.display()
                        )));
                    }
                    Some(p)
                }
            };
            let transcript = match get("transcript") {
                "" => None,
                t => Some(t.to_string()),
            };
            records.push(ManifestRecord {
                utterance_id,
                speaker_id,
                wav_path,
                alignment_path,
                f0_path,
                transcript,
            });
        }
        Ok(Self { records })
    }

    /// Unique speaker ids in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.speaker_id.clone()))
            .map(|r| r.speaker_id.clone())
            .collect()
    }

    pub fn find(&self, utterance_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }
}
