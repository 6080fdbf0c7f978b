//! Synthetic crash corpora with a planted assignment signal.
//!
//! Files are grouped into modules, each module has an owning developer, and
//! every file has an owner who wrote most of its lines plus one or two
//! minority editors with older edits. A report's top annotated frame points at
//! a fresh commit in which the file owner recently rewrote the lines around
//! the error line; that owner is the planted fixer. With probability `noise`
//! the recorded fixer is instead a random other developer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{Annotation, AnnotationLine, AnnotationStore};
use crate::error::{Error, Result};
use crate::trace::{DeveloperId, StackFrame, StackTrace};

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

const DAY_MS: i64 = 86_400_000;
const HOUR_MS: i64 = 3_600_000;
/// 2020-09-13T12:26:40Z.
const EPOCH_START: i64 = 1_600_000_000_000;
const FILES_PER_MODULE: usize = 10;
const NULL_FIELD_RATE: f64 = 0.05;
const LOOP_RATE: f64 = 0.5;
/// Reports from this fraction of the timeline onwards may go to newcomers.
const NEWCOMER_START: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_developers: usize,
    pub n_files: usize,
    pub n_reports: usize,
    pub mean_trace_len: f64,
    /// Probability that the fixer is not the planted owner.
    pub noise: f64,
    /// Fraction of annotations removed after generation.
    pub drop_annotations: f64,
    /// Fraction of late reports whose culprit edit and fix come from a
    /// developer who never appears earlier.
    pub newcomer_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_developers: 20,
            n_files: 200,
            n_reports: 500,
            mean_trace_len: 50.0,
            noise: 0.2,
            drop_annotations: 0.0,
            newcomer_fraction: 0.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_developers == 0 || self.n_files == 0 || self.n_reports == 0 {
            return Err(Error::validation("generator", "counts must be positive"));
        }
        if !(self.mean_trace_len >= 1.0 && self.mean_trace_len.is_finite()) {
            return Err(Error::validation("mean_trace_len", "must be at least 1"));
        }
        for (name, p) in [
            ("noise", self.noise),
            ("drop_annotations", self.drop_annotations),
            ("newcomer_fraction", self.newcomer_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation("generator", format!("{name} = {p} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Owner of the top annotated frame's culprit edit.
    pub planted_owner: Option<DeveloperId>,
    pub fixer: DeveloperId,
    pub noisy: bool,
    pub newcomer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GeneratorConfig,
    pub reports: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub reports: Vec<StackTrace>,
    pub annotations: AnnotationStore,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn reports_jsonl(&self) -> String {
        self.reports.iter().map(|r| r.to_json_line() + "\n").collect()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(REPORTS_FILE), self.reports_jsonl())?;
        std::fs::write(dir.join(ANNOTATIONS_FILE), self.annotations.to_json_lines())?;
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self.manifest)? + "\n",
        )?;
        Ok(())
    }
}

struct FileSpec {
    name: String,
    subsystem: String,
    module: usize,
    owner: usize,
    commit: String,
    lines: Vec<AnnotationLine>,
}

fn commit_hash(rng: &mut ChaCha8Rng) -> String {
    format!("{:016x}", rng.gen::<u64>())
}

fn days_before(rng: &mut ChaCha8Rng, lo_days: i64, hi_days: i64) -> i64 {
    EPOCH_START - rng.gen_range(lo_days * DAY_MS..hi_days * DAY_MS)
}

pub fn generate(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_devs = config.n_developers;
    let devs: Vec<DeveloperId> = (0..n_devs).map(|i| format!("dev{i:03}")).collect();
    let newcomers: Vec<DeveloperId> = (0..(n_devs / 10).max(1)).map(|i| format!("new{i:02}")).collect();

    let n_modules = config.n_files.div_ceil(FILES_PER_MODULE);
    let mut module_owner: Vec<usize> = (0..n_modules).map(|k| k % n_devs).collect();
    module_owner.shuffle(&mut rng);

    let extensions = ["kt", "java", "scala"];
    let mut files = Vec::with_capacity(config.n_files);
    for i in 0..config.n_files {
        let module = i / FILES_PER_MODULE;
        let owner = if rng.gen_bool(0.8) {
            module_owner[module]
        } else {
            rng.gen_range(0..n_devs)
        };
        let minority: Vec<usize> = if n_devs > 1 {
            let k = rng.gen_range(1..=2.min(n_devs - 1));
            (0..n_devs)
                .filter(|&d| d != owner)
                .collect::<Vec<_>>()
                .choose_multiple(&mut rng, k)
                .copied()
                .collect()
        } else {
            Vec::new()
        };
        let owner_times: Vec<i64> = (0..rng.gen_range(3..=6))
            .map(|_| days_before(&mut rng, 150, 700))
            .collect();
        let minority_times: Vec<Vec<i64>> = minority
            .iter()
            .map(|_| {
                (0..rng.gen_range(1..=3))
                    .map(|_| days_before(&mut rng, 720, 1200))
                    .collect()
            })
            .collect();
        let len = rng.gen_range(40..=400);
        let lines = (0..len)
            .map(|_| {
                if minority.is_empty() || rng.gen_bool(0.75) {
                    AnnotationLine {
                        author: devs[owner].clone(),
                        timestamp: *owner_times.choose(&mut rng).unwrap(),
                    }
                } else {
                    let m = rng.gen_range(0..minority.len());
                    AnnotationLine {
                        author: devs[minority[m]].clone(),
                        timestamp: *minority_times[m].choose(&mut rng).unwrap(),
                    }
                }
            })
            .collect();
        files.push(FileSpec {
            name: format!("Component{i:04}.{}", extensions[i % extensions.len()]),
            subsystem: format!("com.acme.m{module:02}"),
            module,
            owner,
            commit: commit_hash(&mut rng),
            lines,
        });
    }

    let mut store = AnnotationStore::new();
    for f in &files {
        store.insert(Annotation::new(f.name.clone(), f.commit.clone(), f.lines.clone())?);
    }

    // Zipf popularity over a random ranking of files.
    let mut popularity: Vec<usize> = (0..config.n_files).collect();
    popularity.shuffle(&mut rng);
    let weights: Vec<f64> = popularity.iter().map(|&rank| 1.0 / (rank + 1) as f64).collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");
    let modules: Vec<Vec<usize>> = (0..n_modules)
        .map(|k| (0..config.n_files).filter(|&i| files[i].module == k).collect())
        .collect();

    let make_frame = |rng: &mut ChaCha8Rng, fi: usize| {
        let f = &files[fi];
        let stem = f.name.split('.').next().unwrap_or(&f.name);
        StackFrame {
            method: Some(format!("{}.{}.run{}", f.subsystem, stem, rng.gen_range(0..8))),
            file: Some(f.name.clone()),
            subsystem: Some(f.subsystem.clone()),
            commit: Some(f.commit.clone()),
            error_line: Some(rng.gen_range(1..=f.lines.len() as u32)),
        }
    };

    let lo_len = (config.mean_trace_len / 2.0).ceil().max(1.0) as usize;
    let hi_len = ((config.mean_trace_len * 1.5).floor() as usize).max(lo_len);
    let newcomer_from = (config.n_reports as f64 * NEWCOMER_START).floor() as usize;
    let mut timestamp = EPOCH_START;
    let mut reports = Vec::with_capacity(config.n_reports);
    let mut manifest = Vec::with_capacity(config.n_reports);
    let file_index: BTreeMap<&str, usize> = files.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();

    for r in 0..config.n_reports {
        timestamp += rng.gen_range(HOUR_MS..23 * HOUR_MS);
        let len = rng.gen_range(lo_len..=hi_len);
        let top = zipf.sample(&mut rng);
        let mut frames = vec![make_frame(&mut rng, top)];
        let local = &modules[files[top].module];
        while frames.len() < len.min(5) {
            let fi = *local.choose(&mut rng).unwrap();
            frames.push(make_frame(&mut rng, fi));
        }
        while frames.len() < len {
            let fi = zipf.sample(&mut rng);
            frames.push(make_frame(&mut rng, fi));
        }

        for frame in &mut frames {
            if rng.gen_bool(NULL_FIELD_RATE) {
                match rng.gen_range(0..5) {
                    0 => frame.method = None,
                    1 => frame.file = None,
                    2 => frame.subsystem = None,
                    3 => frame.commit = None,
                    _ => frame.error_line = None,
                }
            }
        }

        let culprit = frames.iter().position(|f| f.file.is_some() && f.commit.is_some());
        let newcomer = config.newcomer_fraction > 0.0 && r >= newcomer_from && rng.gen_bool(config.newcomer_fraction);
        let planted_owner = culprit.map(|ci| {
            let fi = file_index[frames[ci].file.as_deref().unwrap()];
            let editor = if newcomer {
                newcomers.choose(&mut rng).unwrap().clone()
            } else {
                devs[files[fi].owner].clone()
            };
            let len = files[fi].lines.len() as i64;
            let center = frames[ci]
                .error_line
                .map(i64::from)
                .unwrap_or_else(|| rng.gen_range(1..=len));
            let from = (center - rng.gen_range(0..=4)).max(1);
            let to = (center + rng.gen_range(0..=4)).min(len);
            let edited_at = timestamp - rng.gen_range(DAY_MS / 20..5 * DAY_MS);
            let mut lines = files[fi].lines.clone();
            for line in &mut lines[(from - 1) as usize..to as usize] {
                *line = AnnotationLine {
                    author: editor.clone(),
                    timestamp: edited_at,
                };
            }
            let commit = commit_hash(&mut rng);
            store.insert(Annotation::new(files[fi].name.clone(), commit.clone(), lines).expect("non-empty"));
            frames[ci].commit = Some(commit);
            editor
        });

        if rng.gen_bool(LOOP_RATE) {
            let start_min = culprit.map_or(0, |c| c + 1);
            if start_min < frames.len() {
                let start = rng.gen_range(start_min..frames.len());
                let period = rng.gen_range(1..=3).min(frames.len() - start);
                let block: Vec<StackFrame> = frames[start..start + period].to_vec();
                let copies = rng.gen_range(1..=3);
                let at = start + period;
                for _ in 0..copies {
                    frames.splice(at..at, block.iter().cloned());
                }
            }
        }

        let mut noisy = false;
        let fixer = match &planted_owner {
            Some(owner) if newcomer || !rng.gen_bool(config.noise) => owner.clone(),
            Some(owner) => {
                noisy = true;
                let others: Vec<&DeveloperId> = devs.iter().filter(|d| *d != owner).collect();
                others
                    .choose(&mut rng)
                    .map(|d| (*d).clone())
                    .unwrap_or_else(|| owner.clone())
            }
            None => {
                noisy = true;
                devs.choose(&mut rng).unwrap().clone()
            }
        };

        let id = format!("r{r:05}");
        manifest.push(ManifestEntry {
            id: id.clone(),
            planted_owner,
            fixer: fixer.clone(),
            noisy,
            newcomer,
        });
        reports.push(StackTrace {
            report_id: id,
            timestamp,
            fixer: Some(fixer),
            frames,
        });
    }

    if config.drop_annotations > 0.0 {
        let keys: Vec<(String, String)> = store.iter().map(|a| (a.file.clone(), a.commit.clone())).collect();
        for (file, commit) in keys {
            if rng.gen_bool(config.drop_annotations) {
                store.remove(&file, &commit);
            }
        }
    }

    Ok(Corpus {
        reports,
        annotations: store,
        manifest: Manifest {
            config: config.clone(),
            reports: manifest,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::build_developer_stack;

    fn small(noise: f64, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_developers: 8,
            n_files: 40,
            n_reports: 60,
            mean_trace_len: 20.0,
            noise,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_fixer_is_top_frame_owner() {
        let c = generate(&small(0.0, 3)).unwrap();
        for (r, m) in c.reports.iter().zip(&c.manifest.reports) {
            assert!(!m.noisy);
            assert_eq!(Some(r.fixer.clone().unwrap()), m.planted_owner);
            // The planted owner edited the top annotated frame's file.
            let top = r
                .frames
                .iter()
                .position(|f| c.annotations.for_frame(f).is_some())
                .unwrap();
            let stack = build_developer_stack(&m.fixer, r, &c.annotations);
            assert_eq!(stack.frames[0].0, top);
        }
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let a = generate(&small(0.2, 11)).unwrap();
        let b = generate(&small(0.2, 11)).unwrap();
        assert_eq!(a.reports_jsonl(), b.reports_jsonl());
        assert_eq!(a.annotations.to_json_lines(), b.annotations.to_json_lines());
        let c = generate(&small(0.2, 12)).unwrap();
        assert_ne!(a.reports_jsonl(), c.reports_jsonl());
    }

    #[test]
    fn timestamps_strictly_increase() {
        let c = generate(&small(0.2, 5)).unwrap();
        assert!(c.reports.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn full_coverage_without_drops() {
        let c = generate(&small(0.2, 5)).unwrap();
        for r in &c.reports {
            for f in &r.frames {
                if f.annotation_key().is_some() {
                    assert!(c.annotations.for_frame(f).is_some());
                }
            }
        }
        let mut cfg = small(0.2, 5);
        cfg.drop_annotations = 0.5;
        let dropped = generate(&cfg).unwrap();
        assert!(dropped.annotations.len() < c.annotations.len());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small(1.5, 0);
        assert!(generate(&cfg).is_err());
        cfg.noise = 0.1;
        cfg.n_reports = 0;
        assert!(generate(&cfg).is_err());
    }
}
