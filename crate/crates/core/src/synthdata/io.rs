use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, PointCloud};

/// Decimal text with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Rounds `x` to the value its 9-significant-digit text parses back to.
/// Idempotent, so quantized coordinates survive a write/read cycle bitwise.
pub fn quantize(x: f64) -> f64 {
    format_sig9(x).parse().unwrap_or(x)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    category: String,
    num_frames: usize,
    seed: u64,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `meta.json`, `frame_%04d.csv` and `gt.csv` into `dir`.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        category: seq.category.clone(),
        num_frames: seq.frames.len(),
        seed: seq.seed,
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(&dir.join("meta.json"), &(json + "\n"))?;
    let mut gt = String::new();
    for (i, f) in seq.frames.iter().enumerate() {
        let mut text = String::with_capacity(f.cloud.len() * 36);
        for p in &f.cloud.points {
            text.push_str(&format!("{},{},{}\n", format_sig9(p[0]), format_sig9(p[1]), format_sig9(p[2])));
        }
        write_file(&dir.join(format!("frame_{i:04}.csv")), &text)?;
        let b = f.gt.to_array();
        let fields: Vec<String> = b.iter().map(|v| format!("{v}")).collect();
        gt.push_str(&fields.join(","));
        gt.push('\n');
    }
    write_file(&dir.join("gt.csv"), &gt)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_row<const N: usize>(path: &Path, line_no: usize, line: &str) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    let mut fields = line.split(',');
    for (k, slot) in out.iter_mut().enumerate() {
        let field = fields
            .next()
            .ok_or_else(|| Error::format(path, line_no, format!("expected {N} fields, found {k}")))?;
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("not a number: `{}`", field.trim())))?;
        if !v.is_finite() {
            return Err(Error::format(path, line_no, "non-finite value"));
        }
        *slot = v;
    }
    if fields.next().is_some() {
        return Err(Error::format(path, line_no, format!("expected {N} fields, found more")));
    }
    Ok(out)
}

fn parse_rows<const N: usize>(path: &Path, text: &str) -> Result<Vec<[f64; N]>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_row::<N>(path, i + 1, l))
        .collect()
}

/// Reads a sequence written by [`write_sequence`].
pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.line(), e.to_string()))?;
    let gt_path = dir.join("gt.csv");
    let gts = parse_rows::<7>(&gt_path, &read_text(&gt_path)?)?;
    if gts.len() != meta.num_frames {
        return Err(Error::format(
            &gt_path,
            gts.len(),
            format!("{} boxes for {} frames", gts.len(), meta.num_frames),
        ));
    }
    let mut frames = Vec::with_capacity(meta.num_frames);
    for (i, row) in gts.iter().enumerate() {
        let gt = Box3D::from_array(*row).map_err(|e| Error::format(&gt_path, i + 1, e.to_string()))?;
        let frame_path = dir.join(format!("frame_{i:04}.csv"));
        let points = parse_rows::<3>(&frame_path, &read_text(&frame_path)?)?;
        frames.push(Frame {
            cloud: PointCloud::new(points),
            gt,
        });
    }
    Ok(Sequence {
        category: meta.category,
        frames,
        seed: meta.seed,
    })
}

fn split_dirs(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let mut out: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Writes `root/train/seq_XXXX` and `root/heldout/seq_XXXX`.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    for (split, seqs) in [("train", &ds.train), ("heldout", &ds.heldout)] {
        for (i, s) in seqs.iter().enumerate() {
            write_sequence(s, &root.join(split).join(format!("seq_{i:04}")))?;
        }
    }
    Ok(())
}

/// Reads both splits. A missing split directory is an I/O error.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let read_split = |split: &str| -> Result<Vec<Sequence>> {
        split_dirs(root, split)?.iter().map(|d| read_sequence(d)).collect()
    };
    Ok(Dataset {
        train: read_split("train")?,
        heldout: read_split("heldout")?,
    })
}
