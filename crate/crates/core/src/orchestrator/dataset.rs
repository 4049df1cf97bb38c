use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{PairDataset, PairItem};

#[derive(Deserialize)]
struct Row {
    id: Option<String>,
    image: Option<String>,
    caption: Option<String>,
    label: Option<String>,
}

/// Reads a JSONL dataset manifest: one `{"id", "image", "caption", "label"?}`
/// object per line, blank lines ignored.
///
/// Image paths are resolved against the manifest's directory. With
/// `captions_required` unset (classification), `caption` may be omitted.
/// Every missing image file is reported in a single error.
pub fn parse_manifest(path: &Path, captions_required: bool) -> Result<PairDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::ManifestRow { line: line_no, message };
        let row: Row = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let id = row.id.filter(|s| !s.is_empty()).ok_or_else(|| bad("missing \"id\"".into()))?;
        let image = row
            .image
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad(format!("item {id:?}: missing \"image\"")))?;
        let caption = match row.caption {
            Some(c) if !captions_required || !c.trim().is_empty() => c,
            None if !captions_required => String::new(),
            _ => return Err(bad(format!("item {id:?}: missing \"caption\""))),
        };
        if !seen.insert(id.clone()) {
            return Err(bad(format!("duplicate id {id:?}")));
        }
        items.push(PairItem {
            image_path: base.join(image),
            item_id: id,
            caption,
            label: row.label,
        });
    }
    let missing: Vec<String> = items
        .iter()
        .filter(|i| !i.image_path.is_file())
        .map(|i| i.item_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingImages { ids: missing });
    }
    PairDataset::new(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(rows: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"x").unwrap();
        fs::write(dir.path().join("b.png"), b"x").unwrap();
        fs::write(dir.path().join("m.jsonl"), rows).unwrap();
        dir
    }

    #[test]
    fn two_rows() {
        let dir = setup(
            "{\"id\":\"a\",\"image\":\"a.png\",\"caption\":\"a cat\"}\n\n{\"id\":\"b\",\"image\":\"b.png\",\"caption\":\"a dog\",\"label\":\"dog\"}\n",
        );
        let d = parse_manifest(&dir.path().join("m.jsonl"), true).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.items()[0].image_path, dir.path().join("a.png"));
        assert_eq!(d.items()[1].label.as_deref(), Some("dog"));
    }

    #[test]
    fn duplicate_id_named() {
        let dir = setup(
            "{\"id\":\"a\",\"image\":\"a.png\",\"caption\":\"x\"}\n{\"id\":\"a\",\"image\":\"b.png\",\"caption\":\"y\"}\n",
        );
        match parse_manifest(&dir.path().join("m.jsonl"), true) {
            Err(Error::ManifestRow { line: 2, message }) => assert!(message.contains("\"a\"")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_caption_has_line_number() {
        let dir = setup("{\"id\":\"a\",\"image\":\"a.png\",\"caption\":\"x\"}\n{\"id\":\"b\",\"image\":\"b.png\"}\n");
        let path = dir.path().join("m.jsonl");
        assert!(matches!(parse_manifest(&path, true), Err(Error::ManifestRow { line: 2, .. })));
        assert_eq!(parse_manifest(&path, false).unwrap().items()[1].caption, "");
    }

    #[test]
    fn malformed_json_has_line_number() {
        let dir = setup("{\"id\":\"a\",\"image\":\"a.png\",\"caption\":\"x\"}\nnot json\n");
        assert!(matches!(
            parse_manifest(&dir.path().join("m.jsonl"), true),
            Err(Error::ManifestRow { line: 2, .. })
        ));
    }

    #[test]
    fn missing_images_listed() {
        let dir = setup(
            "{\"id\":\"a\",\"image\":\"nope.png\",\"caption\":\"x\"}\n{\"id\":\"b\",\"image\":\"b.png\",\"caption\":\"y\"}\n{\"id\":\"c\",\"image\":\"gone.png\",\"caption\":\"z\"}\n",
        );
        match parse_manifest(&dir.path().join("m.jsonl"), true) {
            Err(Error::MissingImages { ids }) => assert_eq!(ids, vec!["a", "c"]),
            other => panic!("{other:?}"),
        }
    }
}
