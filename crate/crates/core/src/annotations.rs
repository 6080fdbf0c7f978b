//! Blame annotations and per-developer views of a stack trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{DeveloperId, StackFrame, StackTrace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub author: DeveloperId,
    /// Milliseconds since the Unix epoch of the last edit.
    pub timestamp: i64,
}

/// Blame of one file at one commit. `lines[i]` describes line `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub file: String,
    pub commit: String,
    pub lines: Vec<AnnotationLine>,
    #[serde(skip)]
    authors: BTreeSet<DeveloperId>,
}

impl Annotation {
    pub fn new(file: impl Into<String>, commit: impl Into<String>, lines: Vec<AnnotationLine>) -> Result<Self> {
        let file = file.into();
        if lines.is_empty() {
            return Err(Error::validation("lines", format!("annotation of `{file}` is empty")));
        }
        if let Some(bad) = lines.iter().find(|l| l.timestamp < 0) {
            return Err(Error::validation(
                "timestamp",
                format!("negative timestamp {}", bad.timestamp),
            ));
        }
        let authors = lines.iter().map(|l| l.author.clone()).collect();
        Ok(Self {
            file,
            commit: commit.into(),
            lines,
            authors,
        })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn authors(&self) -> &BTreeSet<DeveloperId> {
        &self.authors
    }

    /// Author of a 1-based line number, if the line exists.
    pub fn author_of(&self, line: u32) -> Option<&AnnotationLine> {
        (line as usize).checked_sub(1).and_then(|i| self.lines.get(i))
    }

    /// 1-based line numbers and timestamps of the lines last touched by `dev`.
    pub fn edits_by<'a>(&'a self, dev: &'a str) -> impl Iterator<Item = (u32, i64)> + 'a {
        self.lines
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.author == dev)
            .map(|(i, l)| (i as u32 + 1, l.timestamp))
    }

    fn authored_by(&self, dev: &str, cutoff: Option<i64>) -> bool {
        match cutoff {
            None => self.authors.contains(dev),
            Some(t) => self.lines.iter().any(|l| l.author == dev && l.timestamp <= t),
        }
    }

    fn authors_until(&self, cutoff: Option<i64>) -> BTreeSet<&str> {
        match cutoff {
            None => self.authors.iter().map(String::as_str).collect(),
            Some(t) => self
                .lines
                .iter()
                .filter(|l| l.timestamp <= t)
                .map(|l| l.author.as_str())
                .collect(),
        }
    }
}

/// Whether lines edited after the report was filed count as authorship.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuthorshipPolicy {
    pub mask_future_edits: bool,
}

impl AuthorshipPolicy {
    fn cutoff(&self, trace: &StackTrace) -> Option<i64> {
        self.mask_future_edits.then_some(trace.timestamp)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationStore {
    entries: BTreeMap<(String, String), Annotation>,
    duplicates: usize,
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an annotation, replacing (and counting) any previous entry
    /// with the same key.
    pub fn insert(&mut self, annotation: Annotation) {
        let key = (annotation.file.clone(), annotation.commit.clone());
        if self.entries.insert(key, annotation).is_some() {
            self.duplicates += 1;
        }
    }

    pub fn get(&self, file: &str, commit: &str) -> Option<&Annotation> {
        // BTreeMap<(String, String), _> cannot be queried with borrowed pairs.
        self.entries.get(&(file.to_owned(), commit.to_owned()))
    }

    pub fn for_frame(&self, frame: &StackFrame) -> Option<&Annotation> {
        let (file, commit) = frame.annotation_key()?;
        self.get(file, commit)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn iter(&self) -> impl Iterator<Item = &Annotation> {
        self.entries.values()
    }

    pub fn remove(&mut self, file: &str, commit: &str) -> Option<Annotation> {
        self.entries.remove(&(file.to_owned(), commit.to_owned()))
    }

    /// Every developer credited with at least one line anywhere.
    pub fn all_authors(&self) -> BTreeSet<DeveloperId> {
        self.entries.values().flat_map(|a| a.authors.iter().cloned()).collect()
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for a in self.entries.values() {
            out.push_str(&serde_json::to_string(a).expect("annotation serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Deserialize)]
struct RawAnnotation {
    file: String,
    commit: String,
    lines: Vec<AnnotationLine>,
}

/// Parses the annotations JSON-lines file. Duplicate (file, commit) keys keep
/// the last record.
pub fn parse_annotations(raw: &str) -> Result<AnnotationStore> {
    let mut store = AnnotationStore::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawAnnotation = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let before = store.duplicates();
        store.insert(Annotation::new(rec.file, rec.commit, rec.lines)?);
        if store.duplicates() > before {
            log::warn!(
                "annotation at line {} replaces an earlier record with the same key",
                i + 1
            );
        }
    }
    Ok(store)
}

/// The frames of a query trace whose files a developer has edited.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeveloperStack {
    pub developer: DeveloperId,
    /// (index in the query trace, frame), indices strictly increasing.
    pub frames: Vec<(usize, StackFrame)>,
}

impl DeveloperStack {
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.iter().map(|(i, _)| *i)
    }
}

pub fn build_developer_stack(dev: &str, trace: &StackTrace, store: &AnnotationStore) -> DeveloperStack {
    build_developer_stack_with(dev, trace, store, AuthorshipPolicy::default())
}

pub fn build_developer_stack_with(
    dev: &str,
    trace: &StackTrace,
    store: &AnnotationStore,
    policy: AuthorshipPolicy,
) -> DeveloperStack {
    let cutoff = policy.cutoff(trace);
    let frames = trace
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| store.for_frame(f).is_some_and(|a| a.authored_by(dev, cutoff)))
        .map(|(i, f)| (i, f.clone()))
        .collect();
    DeveloperStack {
        developer: dev.to_owned(),
        frames,
    }
}

pub fn candidate_developers(trace: &StackTrace, store: &AnnotationStore) -> BTreeSet<DeveloperId> {
    candidate_developers_with(trace, store, AuthorshipPolicy::default())
}

pub fn candidate_developers_with(
    trace: &StackTrace,
    store: &AnnotationStore,
    policy: AuthorshipPolicy,
) -> BTreeSet<DeveloperId> {
    let cutoff = policy.cutoff(trace);
    trace
        .frames
        .iter()
        .filter_map(|f| store.for_frame(f))
        .flat_map(|a| a.authors_until(cutoff))
        .map(str::to_owned)
        .collect()
}
