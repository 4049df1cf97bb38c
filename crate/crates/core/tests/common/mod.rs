//! Synthetic datasets for the integration suites.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use posbias::orchestrator::ExperimentConfig;

const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "white", "black", "orange", "grey"];
const THINGS: [&str; 8] = ["dog", "cat", "bus", "boat", "horse", "kite", "bench", "clock"];
const PLACES: [&str; 6] = ["street", "beach", "field", "kitchen", "park", "harbor"];
pub const LABELS: [&str; 3] = ["bird", "car", "tree"];

/// SplitMix64, enough to vary fixtures deterministically.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
}

pub fn caption(i: usize) -> String {
    let mut r = Rng::new(i as u64 * 7 + 1);
    format!(
        "a {} {} stands in the {} near a {} {}. two {} {}s rest beside it while a {} {} waits.",
        COLORS[r.below(8)],
        THINGS[r.below(8)],
        PLACES[r.below(6)],
        COLORS[r.below(8)],
        THINGS[r.below(8)],
        COLORS[r.below(8)],
        THINGS[r.below(8)],
        COLORS[r.below(8)],
        THINGS[r.below(8)],
    )
}

/// Noisy gradient image with a per-item size and palette.
pub fn image(i: usize) -> RgbImage {
    let mut r = Rng::new(i as u64 + 1000);
    let w = 160 + r.below(200) as u32;
    let h = 160 + r.below(200) as u32;
    let base = [r.below(256) as u32, r.below(256) as u32, r.below(256) as u32];
    RgbImage::from_fn(w, h, |x, y| {
        let n = (r.next() & 0x1f) as u32;
        image::Rgb([
            ((base[0] + x + n) % 256) as u8,
            ((base[1] + y + n) % 256) as u8,
            ((base[2] + x / 2 + y / 2) % 256) as u8,
        ])
    })
}

/// Writes `n` pairs (and images) into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, n: usize, labels: bool) -> PathBuf {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).unwrap();
    let mut lines = String::new();
    for i in 0..n {
        let name = format!("img{i:03}.png");
        image(i).save(img_dir.join(&name)).unwrap();
        let mut row = serde_json::json!({
            "id": format!("item{i:03}"),
            "image": format!("images/{name}"),
            "caption": caption(i),
        });
        if labels {
            row["label"] = LABELS[i % LABELS.len()].into();
        }
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    let path = dir.join("pairs.jsonl");
    fs::write(&path, lines).unwrap();
    path
}

/// A config rooted at `dir` with `extra` JSON fields merged in.
pub fn config(dir: &Path, extra: serde_json::Value) -> ExperimentConfig {
    let mut v = serde_json::json!({
        "dataset_manifest": "pairs.jsonl",
        "mock": true,
        "output_dir": "out",
    });
    for (k, val) in extra.as_object().unwrap() {
        v[k] = val.clone();
    }
    ExperimentConfig::from_json(&v.to_string(), dir).unwrap()
}
