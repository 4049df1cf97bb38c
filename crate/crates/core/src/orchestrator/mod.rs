//! Config-driven, resumable audit runs.
//!
//! A run embeds the unperturbed opposite modality once as the gallery, then
//! walks the dataset in item chunks: build every variant of the chunk, embed
//! them through the cache, and score each against the gallery. Per-variant
//! outcomes land in `manifest.json` after every chunk, so an interrupted run
//! picks up where it stopped and ends with the same tables.

mod config;
mod dataset;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

pub use config::{AuditMode, ExperimentConfig};
pub use dataset::parse_manifest;
pub use manifest::{CellResult, ResultTables, RunManifest, VariantRecord, VariantStatus};

use crate::backend::{EmbedStats, Embedder, EmbedderOptions, EmbeddingCache, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::imageprobe::{derive_image_plan, load_canvas, make_image_bias_variants, make_image_importance_variants};
use crate::metrics::{argmax_row, assemble_bias_curves, importance_curve, rank_in_row};
use crate::report;
use crate::textprobe::{
    derive_text_plan, item_seed, make_text_bias_variants, make_text_importance_variants, make_text_lorem_variants,
    shuffle_caption, LoremBank, TextPayload,
};
use crate::types::{variant_id, EmbeddingRecord, Modality, ModelProfile, PairDataset, PositionSpec, SegmentationPlan, VariantMode};
use crate::vector::dot;
use manifest::unix_now;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVES_CSV: &str = "curves.csv";
pub const CURVES_JSON: &str = "curves.json";
pub const IMPORTANCE_CSV: &str = "importance.csv";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from an existing `manifest.json` instead of starting over.
    pub resume: bool,
    /// Stop (leaving a resumable manifest) after this many items.
    pub halt_after_items: Option<usize>,
    /// Overrides the cache location from the config.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub complete: bool,
    pub output_dir: PathBuf,
    /// Items scored by this invocation.
    pub items_scored: usize,
    /// Items already complete in a resumed manifest.
    pub items_skipped: usize,
    pub stats: EmbedStats,
    pub results: Option<ResultTables>,
}

/// `recall@K:t2i`, `recall@K:i2t` or `top1:zero-shot`.
pub fn metric_id(mode: AuditMode, modality: Modality, recall_k: usize) -> String {
    match (mode, modality) {
        (AuditMode::Classify, _) => "top1:zero-shot".into(),
        (_, Modality::Text) => format!("recall@{recall_k}:t2i"),
        (_, Modality::Image) => format!("recall@{recall_k}:i2t"),
    }
}

fn variant_mode(mode: AuditMode) -> VariantMode {
    match mode {
        AuditMode::Importance => VariantMode::Importance,
        AuditMode::BiasMask | AuditMode::Classify => VariantMode::BiasMask,
        AuditMode::BiasLorem => VariantMode::BiasLorem,
    }
}

/// The `(segment, position)` grid scored by a run; importance cells sit on
/// the diagonal.
fn cell_grid(mode: AuditMode, segments: usize, positions: usize) -> Vec<(usize, usize)> {
    if mode == AuditMode::Importance {
        (0..segments).map(|k| (k, k)).collect()
    } else {
        (0..segments)
            .flat_map(|k| (0..positions).map(move |j| (k, j)))
            .collect()
    }
}

/// A probed variant waiting to be scored.
struct Query {
    variant_id: String,
    item: usize,
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    mode: AuditMode,
    positions: usize,
    spec: PositionSpec,
    profile: ModelProfile,
    embedder: Embedder,
    dataset: PairDataset,
    captions: Vec<String>,
    image_plan: Option<SegmentationPlan>,
    bank: Option<LoremBank>,
}

impl Run<'_> {
    fn id(&self, item: usize) -> &str {
        &self.dataset.items()[item].item_id
    }

    fn chunk_size(&self) -> usize {
        let per_item = cell_grid(self.mode, self.config.num_segments, self.positions).len();
        ((self.config.batch_size * self.config.concurrency) / per_item).max(1)
    }

    fn embed_canvases(&self, pngs: Vec<Vec<u8>>) -> Result<Vec<EmbeddingRecord>> {
        self.embedder.embed_images(&pngs)
    }

    fn embed_texts(&self, texts: &[(&str, &str)]) -> Result<Vec<EmbeddingRecord>> {
        let seqs = self.embedder.tokenize(texts)?;
        let ids: Vec<&[u32]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
        self.embedder.embed_tokens(&ids)
    }

    /// The unperturbed opposite modality, one vector per gallery entry, plus
    /// the gallery index each item should retrieve.
    fn gallery(&self) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
        let items = self.dataset.items();
        let identity: Vec<usize> = (0..items.len()).collect();
        let step = (self.config.batch_size * self.config.concurrency).max(1);
        let records = match (self.mode, self.config.modality) {
            (AuditMode::Classify, _) => {
                let labels: Vec<&str> = items
                    .iter()
                    .filter_map(|i| i.label.as_deref())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let prompts: Vec<String> = labels
                    .iter()
                    .map(|l| self.config.prompt_template.replace("{label}", l))
                    .collect();
                let pairs: Vec<(&str, &str)> = labels.iter().zip(&prompts).map(|(l, p)| (*l, p.as_str())).collect();
                let truth = items
                    .iter()
                    .map(|i| {
                        let label = i.label.as_deref().expect("labels checked before the run");
                        labels.binary_search(&label).expect("label set built from items")
                    })
                    .collect();
                let vectors = self.embed_texts(&pairs)?.into_iter().map(|r| r.vector).collect();
                return Ok((vectors, truth));
            }
            (_, Modality::Text) => {
                let mut out = Vec::with_capacity(items.len());
                for chunk in items.chunks(step) {
                    let pngs = chunk
                        .iter()
                        .map(|i| load_canvas(&i.image_path, &i.item_id, &self.profile)?.encode_png())
                        .collect::<Result<Vec<_>>>()?;
                    out.extend(self.embed_canvases(pngs)?);
                }
                out
            }
            (_, Modality::Image) => {
                let pairs: Vec<(&str, &str)> = items
                    .iter()
                    .zip(&self.captions)
                    .map(|(i, c)| (i.item_id.as_str(), c.as_str()))
                    .collect();
                self.embed_texts(&pairs)?
            }
        };
        Ok((records.into_iter().map(|r| r.vector).collect(), identity))
    }

    /// Builds and embeds every variant of the given items.
    fn probe(&self, chunk: &[usize]) -> Result<(Vec<Query>, Vec<EmbeddingRecord>)> {
        let mut queries = Vec::new();
        let records = match (self.mode, self.config.modality) {
            (AuditMode::BiasLorem, _) => {
                let bank = self.bank.as_ref().expect("lorem bank loaded for bias-lorem");
                let mut texts = Vec::new();
                for &i in chunk {
                    for v in make_text_lorem_variants(self.id(i), &self.captions[i], self.config.num_segments, self.positions, bank)? {
                        let TextPayload::Text(text) = v.payload else {
                            unreachable!("lorem variants carry text")
                        };
                        texts.push((v.variant_id.clone(), text));
                        queries.push(Query {
                            variant_id: v.variant_id,
                            item: i,
                        });
                    }
                }
                let pairs: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
                self.embed_texts(&pairs)?
            }
            (_, Modality::Text) => {
                let pairs: Vec<(&str, &str)> = chunk.iter().map(|&i| (self.id(i), self.captions[i].as_str())).collect();
                let seqs = self.embedder.tokenize(&pairs)?;
                let mut ids = Vec::new();
                for (&i, seq) in chunk.iter().zip(&seqs) {
                    let variants = if self.mode == AuditMode::Importance {
                        let plan = derive_text_plan(&self.profile, seq, self.config.num_segments, &PositionSpec::StepEqual, self.config.region_tokens)?;
                        make_text_importance_variants(seq, &plan, &self.profile)?
                    } else {
                        let plan = derive_text_plan(&self.profile, seq, self.config.num_segments, &self.spec, self.config.region_tokens)?;
                        if plan.num_positions() != self.positions {
                            return Err(Error::invalid(format!(
                                "item {:?}: segment length {} leaves only {} distinct positions, config asks for {}",
                                self.id(i),
                                plan.segment_length,
                                plan.num_positions(),
                                self.positions
                            )));
                        }
                        make_text_bias_variants(seq, &plan, &self.profile)?
                    };
                    for v in variants {
                        ids.push(v.ids().expect("token variants").to_vec());
                        queries.push(Query {
                            variant_id: v.variant_id,
                            item: i,
                        });
                    }
                }
                self.embedder.embed_tokens(&ids)?
            }
            (_, Modality::Image) => {
                let plan = self.image_plan.as_ref().expect("image plan derived for image runs");
                let mut pngs = Vec::new();
                for &i in chunk {
                    let item = &self.dataset.items()[i];
                    let canvas = load_canvas(&item.image_path, &item.item_id, &self.profile)?;
                    let variants = if self.mode == AuditMode::Importance {
                        make_image_importance_variants(&item.item_id, &canvas, plan, &self.profile, self.config.axis)?
                    } else {
                        make_image_bias_variants(&item.item_id, &canvas, plan, &self.profile, self.config.axis)?
                    };
                    for v in variants {
                        pngs.push(v.canvas.encode_png()?);
                        queries.push(Query {
                            variant_id: v.variant_id,
                            item: i,
                        });
                    }
                }
                self.embed_canvases(pngs)?
            }
        };
        Ok((queries, records))
    }
}

/// Scores each query row against the gallery; rows are split across threads.
fn score(
    queries: &[Query],
    records: &[EmbeddingRecord],
    gallery: &[Vec<f32>],
    truth: &[usize],
    classify: bool,
    recall_k: usize,
) -> Vec<bool> {
    let one = |(q, r): (&Query, &EmbeddingRecord)| -> bool {
        let row: Vec<f64> = gallery.iter().map(|g| dot(&r.vector, g)).collect();
        let t = truth[q.item];
        if classify {
            argmax_row(&row) == Some(t)
        } else {
            rank_in_row(&row, t) < recall_k
        }
    };
    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    if workers == 1 || queries.len() * gallery.len() < 1 << 14 {
        return queries.iter().zip(records).map(one).collect();
    }
    let size = queries.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(size)
            .zip(records.chunks(size))
            .map(|(qs, rs)| s.spawn(move || qs.iter().zip(rs).map(one).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring worker panicked"))
            .collect()
    })
}

fn dataset_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Runs (or resumes) the audit a config describes.
pub fn run_audit(
    config: &ExperimentConfig,
    provider: Arc<dyn EmbeddingProvider>,
    options: &RunOptions,
) -> Result<RunSummary> {
    config.validate()?;
    let mode = config.audit_mode()?;
    let positions = config.num_positions()?;
    let spec = if mode == AuditMode::Importance {
        PositionSpec::StepEqual
    } else {
        config.position_spec()?
    };

    let manifest_file = config.manifest_path();
    let dataset = parse_manifest(&manifest_file, mode != AuditMode::Classify)?;
    if mode == AuditMode::Classify {
        dataset.require_labels()?;
    }
    let data_hash = dataset_hash(&manifest_file)?;
    let bank = match (mode, &config.lorem_bank) {
        (AuditMode::BiasLorem, Some(path)) => Some(LoremBank::from_file(&config.resolve(path))?),
        (AuditMode::BiasLorem, None) => Some(LoremBank::default()),
        _ => None,
    };
    let captions: Vec<String> = dataset
        .items()
        .iter()
        .map(|i| {
            if config.shuffle_captions {
                shuffle_caption(&i.caption, item_seed(config.seed, &i.item_id))
            } else {
                i.caption.clone()
            }
        })
        .collect();

    let out = config.output_path();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let cache = EmbeddingCache::open(options.cache_dir.clone().unwrap_or_else(|| config.cache_path()))?;
    let embedder = Embedder::connect(
        provider,
        Some(cache),
        EmbedderOptions {
            batch_size: config.batch_size,
            concurrency: config.concurrency,
        },
    )?;
    let info = embedder.info().clone();
    let profile = info.profile.clone();
    let image_plan = match config.modality {
        Modality::Image => Some(derive_image_plan(&profile, config.num_segments)?),
        Modality::Text => None,
    };

    let metric = metric_id(mode, config.modality, config.recall_k);
    let hash = config.config_hash();
    let manifest_path = out.join(MANIFEST_FILE);
    let now = unix_now();
    let mut manifest = if options.resume && manifest_path.is_file() {
        let m = RunManifest::load(&manifest_path)?;
        if m.config_hash != hash {
            return Err(Error::ConfigMismatch {
                path: manifest_path,
                found: m.config_hash,
                expected: hash,
            });
        }
        if m.dataset_hash != data_hash {
            return Err(Error::invalid(format!(
                "dataset manifest {} changed since the run started",
                manifest_file.display()
            )));
        }
        if m.provider.profile != profile {
            return Err(Error::invalid(format!(
                "provider now serves {:?}; the run was started against {:?}",
                profile.model_id, m.provider.profile.model_id
            )));
        }
        m
    } else {
        RunManifest {
            config_hash: hash.clone(),
            dataset_hash: data_hash,
            config: serde_json::from_str(&config.canonical_json())?,
            provider: info.clone(),
            metric_id: metric.clone(),
            created_unix: now,
            updated_unix: now,
            completed_unix: None,
            variants: BTreeMap::new(),
            cells: Vec::new(),
        }
    };

    let grid = cell_grid(mode, config.num_segments, positions);
    let vmode = variant_mode(mode);
    for item in dataset.items() {
        for &(k, j) in &grid {
            manifest
                .variants
                .entry(variant_id(&item.item_id, vmode, k, j))
                .or_insert_with(VariantRecord::pending);
        }
    }
    let pending: Vec<usize> = (0..dataset.len())
        .filter(|&i| {
            let id = &dataset.items()[i].item_id;
            grid.iter()
                .any(|&(k, j)| manifest.variants[&variant_id(id, vmode, k, j)].status != VariantStatus::Scored)
        })
        .collect();
    let skipped = dataset.len() - pending.len();
    if skipped > 0 {
        log::info!("resuming: {skipped} of {} items already scored", dataset.len());
    }

    let run = Run {
        config,
        mode,
        positions,
        spec,
        profile,
        embedder,
        dataset,
        captions,
        image_plan,
        bank,
    };

    let mut scored_now = 0;
    if !pending.is_empty() {
        let (gallery, truth) = run.gallery()?;
        let budget = options.halt_after_items.unwrap_or(usize::MAX);
        for chunk in pending.chunks(run.chunk_size()) {
            let chunk = &chunk[..chunk.len().min(budget - scored_now)];
            let (queries, records) = run.probe(chunk)?;
            let hits = score(
                &queries,
                &records,
                &gallery,
                &truth,
                mode == AuditMode::Classify,
                config.recall_k,
            );
            for (q, hit) in queries.iter().zip(hits) {
                let rec = manifest
                    .variants
                    .get_mut(&q.variant_id)
                    .ok_or_else(|| Error::invalid(format!("unexpected variant {}", q.variant_id)))?;
                rec.status = VariantStatus::Scored;
                rec.hit = Some(hit);
            }
            scored_now += chunk.len();
            manifest.updated_unix = unix_now();
            manifest.save(&manifest_path)?;
            log::info!("scored {}/{} items", skipped + scored_now, run.dataset.len());
            if scored_now >= budget {
                break;
            }
        }
    }

    let stats = run.embedder.stats();
    if !manifest.is_complete() {
        return Ok(RunSummary {
            complete: false,
            output_dir: out,
            items_scored: scored_now,
            items_skipped: skipped,
            stats,
            results: None,
        });
    }

    let n_items = run.dataset.len() as f64;
    let cells: Vec<CellResult> = grid
        .iter()
        .map(|&(k, j)| {
            let hits = run
                .dataset
                .items()
                .iter()
                .filter(|i| manifest.variants[&variant_id(&i.item_id, vmode, k, j)].hit == Some(true))
                .count();
            CellResult {
                segment: k,
                position: j,
                accuracy: hits as f64 / n_items,
            }
        })
        .collect();
    let (curves, importance) = if mode == AuditMode::Importance {
        let per_segment = cells.iter().map(|c| c.accuracy).collect();
        (None, Some(importance_curve(per_segment, config.interpolation_points)?))
    } else {
        let table: BTreeMap<(usize, usize), f64> = cells.iter().map(|c| ((c.segment, c.position), c.accuracy)).collect();
        (Some(assemble_bias_curves(config.num_segments, positions, &table, &metric)?), None)
    };
    let results = ResultTables {
        config_hash: hash,
        model_id: run.profile.model_id.clone(),
        modality: config.modality,
        mode,
        metric_id: metric,
        num_items: run.dataset.len(),
        num_segments: config.num_segments,
        num_positions: if mode == AuditMode::Importance { 1 } else { positions },
        cells: cells.clone(),
        curves,
        importance,
    };

    manifest.cells = cells;
    manifest.completed_unix.get_or_insert(unix_now());
    manifest.save(&manifest_path)?;
    write_outputs(&out, &results)?;

    Ok(RunSummary {
        complete: true,
        output_dir: out,
        items_scored: scored_now,
        items_skipped: skipped,
        stats,
        results: Some(results),
    })
}

/// Writes `curves.json` and re-renders every table and plot from it.
pub fn write_outputs(dir: &Path, results: &ResultTables) -> Result<()> {
    let mut json = serde_json::to_string_pretty(results)?;
    json.push('\n');
    let path = dir.join(CURVES_JSON);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    render_reports(dir, results)
}

/// CSV tables and SVG plots derived from `results`.
pub fn render_reports(dir: &Path, results: &ResultTables) -> Result<()> {
    let title = format!("{} {} ({})", results.modality, results.mode, results.metric_id);
    if let Some(curves) = &results.curves {
        report::emit_curves_csv(curves, &dir.join(CURVES_CSV))?;
        report::emit_svg_lines(&report::bias_chart(curves, &title), &dir.join("plots").join("bias.svg"))?;
    }
    if let Some(imp) = &results.importance {
        report::emit_importance_csv(imp, &dir.join(IMPORTANCE_CSV))?;
        report::emit_svg_lines(&report::importance_chart(imp, &title), &dir.join("plots").join("importance.svg"))?;
    }
    Ok(())
}

/// Reads `curves.json` from a finished run directory.
pub fn load_results(dir: &Path) -> Result<ResultTables> {
    let path = dir.join(CURVES_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
