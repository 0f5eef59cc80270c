//! Repository selection and YAML file enumeration.
//!
//! The pipeline's canonical input is a directory tree of local clones plus
//! a metadata file describing each candidate repository. Filtering applies
//! four quality criteria; enumeration walks the trees for task files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textio;

/// Minimum share of YAML files for a repository to count as IaC-heavy.
pub const MIN_IAC_FILE_RATIO: f64 = 0.11;
/// Minimum number of contributors.
pub const MIN_CONTRIBUTORS: u32 = 10;
/// Minimum mean commits per month over the repository lifetime.
pub const MIN_COMMITS_PER_MONTH: f64 = 2.0;

/// Candidate repository metadata, precomputed by whatever mined it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoRecord {
    pub url: String,
    /// `.yml`/`.yaml` files over all files, in [0, 1].
    pub iac_file_ratio: f64,
    pub contributor_count: u32,
    /// Mean commits per month over the repository lifetime.
    pub commits_per_month: f64,
    /// Fork/mirror flag.
    pub is_clone: bool,
}

impl RepoRecord {
    /// All four selection criteria at once.
    pub fn passes_criteria(&self) -> bool {
        self.iac_file_ratio >= MIN_IAC_FILE_RATIO
            && self.contributor_count >= MIN_CONTRIBUTORS
            && self.commits_per_month >= MIN_COMMITS_PER_MONTH
            && !self.is_clone
    }
}

/// One enumerated task file: which root it came from and where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestFile {
    pub repo: String,
    pub path: PathBuf,
}

/// Accepted repositories plus every YAML file found under the roots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub repos: Vec<RepoRecord>,
    pub yaml_files: Vec<ManifestFile>,
    pub collected_at: String,
}

/// Keep exactly the records meeting all four criteria, in input order.
pub fn filter_repos(candidates: &[RepoRecord]) -> Vec<RepoRecord> {
    candidates
        .iter()
        .filter(|r| r.passes_criteria())
        .cloned()
        .collect()
}

/// Anything that can produce candidate repository metadata. Live mining
/// clients can implement this; the bundled implementation reads a file.
pub trait RepoMetadataSource {
    fn fetch(&self) -> Result<Vec<RepoRecord>>;
}

/// Metadata source backed by a local delimiter-separated file.
pub struct FileMetadataSource {
    pub path: PathBuf,
}

impl RepoMetadataSource for FileMetadataSource {
    fn fetch(&self) -> Result<Vec<RepoRecord>> {
        read_repo_metadata(&self.path)
    }
}

/// Read the repository metadata file: a header line then one record per
/// line with fields `url, iac_file_ratio, contributor_count,
/// commits_per_month, is_clone`.
pub fn read_repo_metadata(path: &Path) -> Result<Vec<RepoRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Metadata {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    let mut records = Vec::new();
    for (idx, row) in reader.deserialize::<RepoRecord>().enumerate() {
        let line = idx + 2; // header is line 1
        let record: RepoRecord = row.map_err(|e| Error::Metadata {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&record.iac_file_ratio) {
            return Err(Error::Metadata {
                path: path.to_path_buf(),
                line,
                message: format!("iac_file_ratio {} outside [0, 1]", record.iac_file_ratio),
            });
        }
        if record.commits_per_month < 0.0 {
            return Err(Error::Metadata {
                path: path.to_path_buf(),
                line,
                message: format!("negative commits_per_month {}", record.commits_per_month),
            });
        }
        records.push(record);
    }
    Ok(records)
}

fn is_yaml_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("yml") | Some("yaml")
    )
}

/// List every `.yml`/`.yaml` file under the given roots, lexicographically
/// ordered by path. Unreadable roots are an error; unreadable entries
/// below a root are skipped with a logged warning.
pub fn enumerate_task_files(root_paths: &[PathBuf]) -> Result<CorpusManifest> {
    let mut yaml_files = Vec::new();
    for root in root_paths {
        if !root.is_dir() {
            return Err(Error::UnreadableRoot(root.clone()));
        }
        let mut under_root = Vec::new();
        for entry in walkdir::WalkDir::new(root).follow_links(false) {
            let entry = match entry {
                Ok(entry) => entry,
                Err(err) => {
                    log::warn!("skipping unreadable entry under {}: {err}", root.display());
                    continue;
                }
            };
            if entry.file_type().is_file() && is_yaml_file(entry.path()) {
                let rel = entry
                    .path()
                    .strip_prefix(root)
                    .unwrap_or(entry.path())
                    .to_path_buf();
                under_root.push(ManifestFile {
                    repo: root.display().to_string(),
                    path: rel,
                });
            }
        }
        under_root.sort_by(|a, b| a.path.cmp(&b.path));
        yaml_files.extend(under_root);
    }
    Ok(CorpusManifest {
        repos: Vec::new(),
        yaml_files,
        collected_at: chrono::Utc::now().to_rfc3339(),
    })
}

const MANIFEST_HEADER: &str = "tasklint-corpus-manifest v1";

/// Persist a manifest as a line-oriented text file.
pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    out.push_str(&format!("collected_at\t{}\n", manifest.collected_at));
    for repo in &manifest.repos {
        out.push_str(&format!(
            "repo\t{}\t{}\t{}\t{}\t{}\n",
            textio::escape_token(&repo.url),
            repo.iac_file_ratio,
            repo.contributor_count,
            repo.commits_per_month,
            repo.is_clone
        ));
    }
    for file in &manifest.yaml_files {
        out.push_str(&format!(
            "file\t{}\t{}\n",
            textio::escape_token(&file.repo),
            textio::escape_token(&file.path.display().to_string())
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Load a manifest written by [`write_manifest`].
pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if header != MANIFEST_HEADER {
        return Err(Error::MalformedFile {
            path: path.to_path_buf(),
            what: "manifest",
            message: format!("unexpected header `{header}`"),
        });
    }
    let mut manifest = CorpusManifest::default();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| Error::MalformedFile {
            path: path.to_path_buf(),
            what: "manifest",
            message: format!("line {}: {message}", idx + 2),
        };
        match fields[0] {
            "collected_at" if fields.len() == 2 => {
                manifest.collected_at = fields[1].to_string();
            }
            "repo" if fields.len() == 6 => {
                manifest.repos.push(RepoRecord {
                    url: textio::unescape_token(fields[1]),
                    iac_file_ratio: fields[2]
                        .parse()
                        .map_err(|e| bad(format!("bad ratio: {e}")))?,
                    contributor_count: fields[3]
                        .parse()
                        .map_err(|e| bad(format!("bad contributor count: {e}")))?,
                    commits_per_month: fields[4]
                        .parse()
                        .map_err(|e| bad(format!("bad commits/month: {e}")))?,
                    is_clone: fields[5]
                        .parse()
                        .map_err(|e| bad(format!("bad clone flag: {e}")))?,
                });
            }
            "file" if fields.len() == 3 => {
                manifest.yaml_files.push(ManifestFile {
                    repo: textio::unescape_token(fields[1]),
                    path: PathBuf::from(textio::unescape_token(fields[2])),
                });
            }
            other => return Err(bad(format!("unknown record `{other}`"))),
        }
    }
    Ok(manifest)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(ratio: f64, contributors: u32, cpm: f64, clone: bool) -> RepoRecord {
        RepoRecord {
            url: format!("https://example.com/r{ratio}-{contributors}"),
            iac_file_ratio: ratio,
            contributor_count: contributors,
            commits_per_month: cpm,
            is_clone: clone,
        }
    }

    #[test]
    fn boundary_record_is_accepted() {
        let accepted = filter_repos(&[record(0.11, 10, 2.0, false)]);
        assert_eq!(accepted.len(), 1);
    }

    #[test]
    fn clone_flag_alone_disqualifies() {
        let accepted = filter_repos(&[record(0.50, 100, 30.0, true)]);
        assert!(accepted.is_empty());
    }

    #[test]
    fn ten_record_fixture_filters_exactly() {
        // Eight records each violating exactly one criterion, two passing.
        let candidates = vec![
            record(0.10, 50, 9.0, false),  // ratio below
            record(0.05, 10, 2.0, false),  // ratio below
            record(0.30, 9, 5.0, false),   // contributors below
            record(0.30, 2, 5.0, false),   // contributors below
            record(0.40, 40, 1.9, false),  // commits below
            record(0.40, 40, 0.0, false),  // commits below
            record(0.40, 40, 8.0, true),   // clone
            record(0.11, 10, 2.0, true),   // clone
            record(0.11, 10, 2.0, false),  // passes (all at boundary)
            record(0.95, 120, 40.0, false), // passes
        ];
        let accepted = filter_repos(&candidates);
        assert_eq!(accepted, vec![candidates[8].clone(), candidates[9].clone()]);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(filter_repos(&[]).is_empty());
    }

    #[test]
    fn metadata_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repos.csv");
        fs::write(
            &path,
            "url,iac_file_ratio,contributor_count,commits_per_month,is_clone\n\
             https://example.com/a,0.5,12,3.5,false\n\
             https://example.com/b,0.08,30,10,true\n",
        )
        .unwrap();
        let records = read_repo_metadata(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].contributor_count, 12);
        assert!(records[1].is_clone);
    }

    #[test]
    fn metadata_rejects_out_of_range_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repos.csv");
        fs::write(
            &path,
            "url,iac_file_ratio,contributor_count,commits_per_month,is_clone\nx,1.2,10,2,false\n",
        )
        .unwrap();
        let err = read_repo_metadata(&path).unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"));
    }

    #[test]
    fn enumerate_filters_extensions_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.yml"), "").unwrap();
        fs::write(dir.path().join("b.txt"), "").unwrap();
        fs::write(dir.path().join("c.yaml"), "").unwrap();
        let manifest = enumerate_task_files(&[dir.path().to_path_buf()]).unwrap();
        let names: Vec<_> = manifest
            .yaml_files
            .iter()
            .map(|f| f.path.display().to_string())
            .collect();
        assert_eq!(names, ["a.yml", "c.yaml"]);
    }

    #[test]
    fn enumerate_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = enumerate_task_files(&[dir.path().to_path_buf()]).unwrap();
        assert!(manifest.yaml_files.is_empty());
    }

    #[test]
    fn enumerate_nested_roles_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let files = [
            "roles/web/tasks/main.yml",
            "roles/db/tasks/main.yml",
            "roles/db/handlers/main.yml",
            "site.yml",
            "roles/cache/tasks/extra.yaml",
        ];
        for f in files {
            let p = dir.path().join(f);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(p, "").unwrap();
        }
        let manifest = enumerate_task_files(&[dir.path().to_path_buf()]).unwrap();
        let names: Vec<_> = manifest
            .yaml_files
            .iter()
            .map(|f| f.path.display().to_string())
            .collect();
        assert_eq!(
            names,
            [
                "roles/cache/tasks/extra.yaml",
                "roles/db/handlers/main.yml",
                "roles/db/tasks/main.yml",
                "roles/web/tasks/main.yml",
                "site.yml",
            ]
        );
    }

    #[test]
    fn enumerate_missing_root_errors_with_path() {
        let err = enumerate_task_files(&[PathBuf::from("/nonexistent/abc")]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/abc"));
    }

    #[test]
    fn enumerate_is_stable_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["z.yml", "a.yaml", "m.yml"] {
            fs::write(dir.path().join(name), "").unwrap();
        }
        let a = enumerate_task_files(&[dir.path().to_path_buf()]).unwrap();
        let b = enumerate_task_files(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(a.yaml_files, b.yaml_files);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = CorpusManifest {
            repos: vec![record(0.5, 12, 3.0, false)],
            yaml_files: vec![ManifestFile {
                repo: "root a".into(),
                path: PathBuf::from("roles/web/tasks/main.yml"),
            }],
            collected_at: "2026-01-01T00:00:00+00:00".into(),
        };
        let path = dir.path().join("manifest.txt");
        write_manifest(&manifest, &path).unwrap();
        let loaded = read_manifest(&path).unwrap();
        assert_eq!(loaded, manifest);
    }

    fn record_strategy() -> impl Strategy<Value = RepoRecord> {
        (
            0.0f64..1.0,
            0u32..40,
            0.0f64..10.0,
            proptest::bool::ANY,
        )
            .prop_map(|(ratio, contributors, cpm, clone)| record(ratio, contributors, cpm, clone))
    }

    proptest! {
        #[test]
        fn filter_is_idempotent_and_subset(records in proptest::collection::vec(record_strategy(), 0..24)) {
            let once = filter_repos(&records);
            let twice = filter_repos(&once);
            prop_assert_eq!(&once, &twice);
            for r in &once {
                prop_assert!(records.contains(r));
                prop_assert!(r.iac_file_ratio >= MIN_IAC_FILE_RATIO);
                prop_assert!(r.contributor_count >= MIN_CONTRIBUTORS);
                prop_assert!(r.commits_per_month >= MIN_COMMITS_PER_MONTH);
                prop_assert!(!r.is_clone);
            }
        }
    }
}
