//! Deterministic synthetic mini-C corpora: ten algorithm classes, stratified
//! train/val/test splitting, and the derived function-naming dataset.

pub mod templates;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ast::{interpret, parse_source, save_manifest, load_manifest, NodeKind, ProgramRecord, Split};
use crate::error::{Error, Result};
use crate::heads::split_subwords;
pub use templates::{instantiate, sample_input, IDENTIFIER_POOL, TEMPLATE_NAMES};

pub const TEST_INPUTS_PER_RECORD: usize = 3;
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.2, 0.1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetadata {
    pub seed: u64,
    pub num_classes: usize,
    pub per_class: usize,
    pub templates: Vec<String>,
    /// FNV-1a digest of reference instantiations of every template.
    pub template_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ProgramRecord>,
    pub metadata: GenerationMetadata,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const METADATA_FILE: &str = "metadata.json";

impl DatasetManifest {
    /// Writes `manifest.jsonl` and the `metadata.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let manifest = dir.join(MANIFEST_FILE);
        save_manifest(&manifest, &self.records)?;
        let meta = dir.join(METADATA_FILE);
        fs::write(&meta, serde_json::to_vec_pretty(&self.metadata)?).map_err(|e| Error::file(&meta, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let records = load_manifest(&dir.join(MANIFEST_FILE))?;
        let meta = dir.join(METADATA_FILE);
        let bytes = fs::read(&meta).map_err(|e| Error::file(&meta, e))?;
        Ok(DatasetManifest {
            records,
            metadata: serde_json::from_slice(&bytes)?,
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Digest of the template inventory: any change to a skeleton changes the
/// reference instantiations and therefore the hash.
pub fn template_hash() -> String {
    let mut all = String::new();
    for class in 0..TEMPLATE_NAMES.len() {
        for variant in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(variant);
            all.push_str(&instantiate(class, &mut rng).source);
        }
    }
    format!("{:016x}", fnv1a(all.as_bytes()))
}

fn record_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn make_record(class: usize, index: usize, per_class: usize, seed: u64) -> Result<ProgramRecord> {
    let mut rng = record_rng(seed, (class * per_class + index) as u64);
    let inst = instantiate(class, &mut rng);
    let id = format!("{}_{index:04}", TEMPLATE_NAMES[class]);
    let ast = parse_source(&inst.source).map_err(|e| e.in_program(&id))?;
    let mut record = ProgramRecord::new(id, ast);
    let inputs: Vec<Vec<i64>> = (0..TEST_INPUTS_PER_RECORD)
        .map(|_| sample_input(inst.input, &mut rng))
        .collect();
    let mut traces = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let trace = interpret(&record, input)?;
        if trace.is_trap() {
            return Err(Error::InvalidArgument(format!(
                "generated program `{}` trapped on {input:?}: {:?}",
                record.id, trace.exit
            )));
        }
        traces.push(trace);
    }
    record.source = Some(inst.source);
    record.label = Some(class);
    record.class_name = Some(TEMPLATE_NAMES[class].to_string());
    record.test_inputs = Some(inputs);
    record.gold_traces = Some(traces);
    Ok(record)
}

/// `per_class` programs for each of the first `num_classes` templates,
/// each checked against the interpreter on its stored test inputs.
pub fn generate(num_classes: usize, per_class: usize, seed: u64) -> Result<DatasetManifest> {
    if num_classes == 0 || num_classes > TEMPLATE_NAMES.len() {
        return Err(Error::InvalidArgument(format!(
            "num_classes must be between 1 and {}, got {num_classes}",
            TEMPLATE_NAMES.len()
        )));
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be positive".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..num_classes)
        .flat_map(|c| (0..per_class).map(move |k| (c, k)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(c, k)| make_record(c, k, per_class, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        records,
        metadata: GenerationMetadata {
            seed,
            num_classes,
            per_class,
            templates: TEMPLATE_NAMES[..num_classes].iter().map(|s| s.to_string()).collect(),
            template_hash: template_hash(),
            split_seed: None,
            ratios: None,
        },
    })
}

/// Stratified split by class label (records without labels form one
/// group). Each group of `n` gets `round(n * train)` training and
/// `round(n * val)` validation records; the rest are test.
pub fn split(records: &mut [ProgramRecord], ratios: (f64, f64, f64), seed: u64) -> Result<()> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (label, mut members) in groups {
        let n = members.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {label:?} has {n} records; stratified splitting needs at least 3"
            )));
        }
        members.shuffle(&mut rng);
        let n_train = (n as f64 * tr).round() as usize;
        let n_val = ((n as f64 * va).round() as usize).min(n - n_train);
        for (pos, &i) in members.iter().enumerate() {
            records[i].split = Some(if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok(())
}

/// Generation plus a stratified 70/20/10 split seeded with the same seed.
pub fn generate_split(num_classes: usize, per_class: usize, seed: u64) -> Result<DatasetManifest> {
    let mut manifest = generate(num_classes, per_class, seed)?;
    split(&mut manifest.records, DEFAULT_RATIOS, seed)?;
    manifest.metadata.split_seed = Some(seed);
    manifest.metadata.ratios = Some(DEFAULT_RATIOS);
    Ok(manifest)
}

/// Turns classification records into naming records: the function name
/// token is removed from every AST and becomes the target sub-words.
pub fn make_naming_dataset(records: &[ProgramRecord]) -> Result<Vec<ProgramRecord>> {
    records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            let root = out.ast.root;
            let functions: Vec<usize> = match out.ast.kind(root)? {
                NodeKind::FunctionDef => vec![root],
                NodeKind::Program => out.ast.children(root).to_vec(),
                other => {
                    return Err(Error::Schema(format!("record `{}` is rooted at {other}, not a function", r.id)));
                }
            };
            let target = functions[0];
            let name = out.ast.nodes[target]
                .token
                .take()
                .filter(|n| !n.is_empty())
                .ok_or_else(|| Error::Schema(format!("record `{}` has an anonymous function", r.id)))?;
            out.name_subwords = Some(split_subwords(&name));
            out.label = None;
            out.source = None;
            Ok(out)
        })
        .collect()
}
