//! Multi-file solution snapshots and the search/replace edit format.
//!
//! Edits arrive as hunks framed by sentinel lines:
//!
//! ```text
//! <<<FILE: model.py>>>
//! <<<SEARCH>>>
//! lr = 0.1
//! <<<REPLACE>>>
//! lr = 0.01
//! <<<END>>>
//! ```
//!
//! Text between two sentinel lines is taken verbatim, so a non-empty block
//! always ends with a newline. An empty search block creates a file. A hunk
//! whose search is the whole file and whose replace is empty deletes it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FILE_PREFIX: &str = "<<<FILE: ";
pub const SENTINEL_SUFFIX: &str = ">>>";
pub const SEARCH_SENTINEL: &str = "<<<SEARCH>>>";
pub const REPLACE_SENTINEL: &str = "<<<REPLACE>>>";
pub const END_SENTINEL: &str = "<<<END>>>";

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("malformed diff at byte {offset}: {reason}")]
    MalformedDiff { offset: usize, reason: String },
    #[error("diff contains no hunks")]
    EmptyDiff,
    #[error("hunk {hunk}: search block not found in {file}")]
    SearchNotFound { file: String, hunk: usize },
    #[error("hunk {hunk}: search block matches {count} times in {file}")]
    AmbiguousSearch {
        file: String,
        hunk: usize,
        count: usize,
    },
    #[error("hunk {hunk}: cannot create {file}, it already exists")]
    FileExists { file: String, hunk: usize },
    #[error("path {0:?} escapes the workspace")]
    SecurityViolation(String),
    #[error("main file {0:?} is missing from the repository")]
    MissingMain(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Checks a module path: relative, forward slashes, no `.`/`..`/empty components.
pub fn validate_path(path: &str) -> Result<(), RepoError> {
    let bad = || RepoError::SecurityViolation(path.to_string());
    if path.is_empty() || path.starts_with('/') || path.contains('\\') || path.contains('\0') {
        return Err(bad());
    }
    for part in path.split('/') {
        if part.is_empty() || part == "." || part == ".." {
            return Err(bad());
        }
    }
    // Windows drive prefixes and the like.
    if Path::new(path)
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        return Err(bad());
    }
    Ok(())
}

/// One candidate solution: named module files plus the orchestration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionRepo {
    main: String,
    modules: BTreeMap<String, String>,
}

impl SolutionRepo {
    pub fn new(
        main: impl Into<String>,
        modules: BTreeMap<String, String>,
    ) -> Result<Self, RepoError> {
        let main = main.into();
        for path in modules.keys() {
            validate_path(path)?;
        }
        if !modules.contains_key(&main) {
            return Err(RepoError::MissingMain(main));
        }
        Ok(Self { main, modules })
    }

    /// Builds a repository from a set of pure file creations.
    pub fn from_diff(main: impl Into<String>, diff: &DiffSet) -> Result<Self, RepoError> {
        let modules = apply_hunks(BTreeMap::new(), diff)?;
        Self::new(main, modules)
    }

    pub fn main(&self) -> &str {
        &self.main
    }

    pub fn main_source(&self) -> &str {
        &self.modules[&self.main]
    }

    pub fn modules(&self) -> &BTreeMap<String, String> {
        &self.modules
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.modules.get(path).map(String::as_str)
    }

    pub fn file_count(&self) -> usize {
        self.modules.len()
    }

    /// Library files in path order, main last.
    pub fn files_main_last(&self) -> impl Iterator<Item = (&str, &str)> {
        self.modules
            .iter()
            .filter(|(p, _)| **p != self.main)
            .chain(self.modules.get_key_value(&self.main))
            .map(|(p, c)| (p.as_str(), c.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub file: String,
    pub search: String,
    pub replace: String,
}

impl DiffHunk {
    pub fn new(
        file: impl Into<String>,
        search: impl Into<String>,
        replace: impl Into<String>,
    ) -> Self {
        Self {
            file: file.into(),
            search: search.into(),
            replace: replace.into(),
        }
    }

    pub fn create(file: impl Into<String>, content: impl Into<String>) -> Self {
        Self::new(file, "", content)
    }

    pub fn is_creation(&self) -> bool {
        self.search.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffSet {
    pub hunks: Vec<DiffHunk>,
}

impl DiffSet {
    pub fn new(hunks: Vec<DiffHunk>) -> Self {
        Self { hunks }
    }

    pub fn len(&self) -> usize {
        self.hunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }

    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.hunks.iter().map(|h| h.file.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sentinel<'a> {
    File(&'a str),
    Search,
    Replace,
    End,
}

fn sentinel(line: &str) -> Option<Sentinel<'_>> {
    let line = line.strip_suffix('\r').unwrap_or(line).trim();
    match line {
        SEARCH_SENTINEL => Some(Sentinel::Search),
        REPLACE_SENTINEL => Some(Sentinel::Replace),
        END_SENTINEL => Some(Sentinel::End),
        _ => line
            .strip_prefix(FILE_PREFIX)
            .and_then(|rest| rest.strip_suffix(SENTINEL_SUFFIX))
            .map(|p| Sentinel::File(p.trim())),
    }
}

/// Extracts hunks from generator output, ignoring any text outside hunk frames.
pub fn parse_diff(text: &str) -> Result<DiffSet, RepoError> {
    enum State {
        Outside,
        AfterFile {
            file: String,
        },
        Search {
            file: String,
            start: usize,
        },
        Replace {
            file: String,
            search: String,
            start: usize,
        },
    }

    let malformed = |offset: usize, reason: &str| RepoError::MalformedDiff {
        offset,
        reason: reason.to_string(),
    };

    let mut hunks = Vec::new();
    let mut state = State::Outside;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        let next = offset + line.len();
        offset = next;
        let Some(tag) = sentinel(line.trim_end_matches('\n')) else {
            if let State::AfterFile { .. } = state {
                return Err(malformed(
                    line_start,
                    "expected <<<SEARCH>>> after <<<FILE>>>",
                ));
            }
            continue;
        };
        state = match (state, tag) {
            (State::Outside, Sentinel::File(path)) => {
                if path.is_empty() {
                    return Err(malformed(line_start, "empty file path"));
                }
                State::AfterFile {
                    file: path.to_string(),
                }
            }
            (State::Outside, _) => {
                return Err(malformed(line_start, "sentinel outside of a hunk"));
            }
            (State::AfterFile { file }, Sentinel::Search) => State::Search { file, start: next },
            (State::AfterFile { .. }, _) => {
                return Err(malformed(
                    line_start,
                    "expected <<<SEARCH>>> after <<<FILE>>>",
                ));
            }
            (State::Search { file, start }, Sentinel::Replace) => State::Replace {
                file,
                search: text[start..line_start].to_string(),
                start: next,
            },
            (State::Search { .. }, _) => {
                return Err(malformed(line_start, "expected <<<REPLACE>>>"));
            }
            (
                State::Replace {
                    file,
                    search,
                    start,
                },
                Sentinel::End,
            ) => {
                hunks.push(DiffHunk {
                    file,
                    search,
                    replace: text[start..line_start].to_string(),
                });
                State::Outside
            }
            (State::Replace { .. }, _) => {
                return Err(malformed(line_start, "expected <<<END>>>"));
            }
        };
    }
    if !matches!(state, State::Outside) {
        return Err(malformed(
            text.len(),
            "unterminated hunk, missing <<<END>>>",
        ));
    }
    if hunks.is_empty() {
        return Err(RepoError::EmptyDiff);
    }
    Ok(DiffSet { hunks })
}

/// Renders hunks in the sentinel format. Non-empty blocks lacking a final
/// newline get one, since the frame cannot represent them otherwise.
pub fn render_diff(diff: &DiffSet) -> String {
    fn block(out: &mut String, text: &str) {
        out.push_str(text);
        if !text.is_empty() && !text.ends_with('\n') {
            out.push('\n');
        }
    }
    let mut out = String::new();
    for h in &diff.hunks {
        out.push_str(FILE_PREFIX);
        out.push_str(&h.file);
        out.push_str(SENTINEL_SUFFIX);
        out.push('\n');
        out.push_str(SEARCH_SENTINEL);
        out.push('\n');
        block(&mut out, &h.search);
        out.push_str(REPLACE_SENTINEL);
        out.push('\n');
        block(&mut out, &h.replace);
        out.push_str(END_SENTINEL);
        out.push('\n');
    }
    out
}

fn count_matches(haystack: &str, needle: &str) -> (usize, Option<usize>) {
    let mut count = 0;
    let mut first = None;
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let at = from + pos;
        first.get_or_insert(at);
        count += 1;
        if count > 1 {
            break;
        }
        // overlapping occurrences also count as ambiguous
        from = at + haystack[at..].chars().next().map_or(1, char::len_utf8);
    }
    (count, first)
}

fn apply_hunks(
    mut files: BTreeMap<String, String>,
    diff: &DiffSet,
) -> Result<BTreeMap<String, String>, RepoError> {
    for (idx, hunk) in diff.hunks.iter().enumerate() {
        validate_path(&hunk.file)?;
        if hunk.is_creation() {
            if files.contains_key(&hunk.file) {
                return Err(RepoError::FileExists {
                    file: hunk.file.clone(),
                    hunk: idx,
                });
            }
            if !hunk.replace.is_empty() {
                files.insert(hunk.file.clone(), hunk.replace.clone());
            }
            continue;
        }
        let Some(content) = files.get_mut(&hunk.file) else {
            return Err(RepoError::SearchNotFound {
                file: hunk.file.clone(),
                hunk: idx,
            });
        };
        match count_matches(content, &hunk.search) {
            (0, _) => {
                return Err(RepoError::SearchNotFound {
                    file: hunk.file.clone(),
                    hunk: idx,
                })
            }
            (1, Some(at)) => {
                content.replace_range(at..at + hunk.search.len(), &hunk.replace);
                if content.is_empty() {
                    files.remove(&hunk.file);
                }
            }
            (count, _) => {
                return Err(RepoError::AmbiguousSearch {
                    file: hunk.file.clone(),
                    hunk: idx,
                    count,
                })
            }
        }
    }
    Ok(files)
}

/// Applies every hunk in order to a copy of `repo`. Any failure discards the
/// whole set; the input is never touched.
pub fn apply_diff(repo: &SolutionRepo, diff: &DiffSet) -> Result<SolutionRepo, RepoError> {
    let files = apply_hunks(repo.modules.clone(), diff)?;
    if !files.contains_key(&repo.main) {
        return Err(RepoError::MissingMain(repo.main.clone()));
    }
    Ok(SolutionRepo {
        main: repo.main.clone(),
        modules: files,
    })
}

/// Writes every module below `dir`, creating parent directories as needed.
pub fn materialize(repo: &SolutionRepo, dir: &Path) -> Result<(), RepoError> {
    for path in repo.modules.keys() {
        validate_path(path)?;
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RepoError::Io { path, source }
    };
    for (path, content) in &repo.modules {
        let target = dir.join(path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&target, content).map_err(io_err(&target))?;
    }
    Ok(())
}

/// Reads every regular file below `dir` back into a repository.
pub fn read_back(dir: &Path, main: &str) -> Result<SolutionRepo, RepoError> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), RepoError> {
        let io_err = |source| RepoError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut entries = fs::read_dir(dir)
            .map_err(io_err)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(io_err)?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let ft = entry.file_type().map_err(io_err)?;
            if ft.is_dir() {
                walk(root, &path, out)?;
            } else if ft.is_file() {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked path lies under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                let content = fs::read_to_string(&path).map_err(|source| RepoError::Io {
                    path: path.clone(),
                    source,
                })?;
                out.insert(rel, content);
            }
        }
        Ok(())
    }
    let mut modules = BTreeMap::new();
    walk(dir, dir, &mut modules)?;
    SolutionRepo::new(main, modules)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoStats {
    pub lines_of_code: usize,
    pub file_count: usize,
}

/// Lines per file: a trailing newline does not open a new line; empty is 0.
pub fn count_lines(text: &str) -> usize {
    if text.is_empty() {
        return 0;
    }
    text.matches('\n').count() + usize::from(!text.ends_with('\n'))
}

pub fn repo_stats(repo: &SolutionRepo) -> RepoStats {
    RepoStats {
        lines_of_code: repo.modules.values().map(|c| count_lines(c)).sum(),
        file_count: repo.modules.len(),
    }
}
