//! On-disk dataset layout: `<id>/frames/%05d.png`, `<id>/annotations.jsonl`,
//! `<id>/meta.txt`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::DataError;
use crate::sequence::{Annotation, SequenceDataset, SequenceMeta};

pub const META_FILE: &str = "meta.txt";
pub const ANNOTATION_FILE: &str = "annotations.jsonl";
pub const FRAME_DIR: &str = "frames";

/// Writes one sequence below `root/<id>`.
pub fn write_dataset(ds: &SequenceDataset, root: &Path) -> Result<(), DataError> {
    if ds.frames.len() != ds.annotations.len() || ds.frames.len() != ds.meta.frame_count {
        return Err(DataError::Inconsistent(format!(
            "{}: {} frames, {} annotations, meta says {}",
            ds.meta.id,
            ds.frames.len(),
            ds.annotations.len(),
            ds.meta.frame_count
        )));
    }
    let dir = root.join(&ds.meta.id);
    let frames = dir.join(FRAME_DIR);
    fs::create_dir_all(&frames).map_err(DataError::io(&frames))?;
    for (i, img) in ds.frames.iter().enumerate() {
        let p = frames.join(format!("{:05}.png", i));
        img.save(&p).map_err(|source| DataError::Image { path: p.clone(), source })?;
    }
    let ann = dir.join(ANNOTATION_FILE);
    let mut out = String::new();
    for a in &ds.annotations {
        out.push_str(&serde_json::to_string(a).map_err(|e| DataError::Inconsistent(e.to_string()))?);
        out.push('\n');
    }
    let mut f = fs::File::create(&ann).map_err(DataError::io(&ann))?;
    f.write_all(out.as_bytes()).map_err(DataError::io(&ann))?;
    let meta = dir.join(META_FILE);
    fs::write(&meta, ds.meta.to_text()).map_err(DataError::io(&meta))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<SequenceMeta, DataError> {
    let p = dir.join(META_FILE);
    if !p.is_file() {
        return Err(DataError::MissingMeta(p));
    }
    let text = fs::read_to_string(&p).map_err(DataError::io(&p))?;
    SequenceMeta::from_text(&text, &p)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>, DataError> {
    let text = fs::read_to_string(path).map_err(DataError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !a.bbox.is_valid() {
            return Err(DataError::Parse { path: path.to_path_buf(), line: i + 1, msg: "degenerate box".into() });
        }
        if a.frame != out.len() {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected frame {}, found {}", out.len(), a.frame),
            });
        }
        out.push(a);
    }
    Ok(out)
}

/// Reads the sequence stored directly in `dir`.
pub fn read_dataset(dir: &Path) -> Result<SequenceDataset, DataError> {
    let meta = read_meta(dir)?;
    let annotations = read_annotations(&dir.join(ANNOTATION_FILE))?;
    let mut frames = Vec::with_capacity(meta.frame_count);
    for i in 0..meta.frame_count {
        let p = dir.join(FRAME_DIR).join(format!("{:05}.png", i));
        let img = image::open(&p).map_err(|source| DataError::Image { path: p.clone(), source })?;
        frames.push(img.into_luma8());
    }
    if annotations.len() != frames.len() {
        return Err(DataError::Inconsistent(format!(
            "{}: {} frames but {} annotations",
            dir.display(),
            frames.len(),
            annotations.len()
        )));
    }
    Ok(SequenceDataset { meta, frames, annotations })
}

/// Reads every sequence directory under `root`, sorted by id.
pub fn read_all(root: &Path) -> Result<Vec<SequenceDataset>, DataError> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(DataError::io(root))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_dataset(d)).collect()
}
